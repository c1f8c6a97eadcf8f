//! Regression and magnitude-classification metrics, evaluation and seed aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{EvalRegime, Sample, SampleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// Decade buckets `(0,1], (1,10], …, (10^{n-1}, 10^n]`, optionally preceded
/// by a dedicated class for zero (negative edges).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub n: u32,
    pub zero_class: bool,
}

impl BucketSpec {
    pub const BASE: f64 = 10.0;

    pub fn new(n: u32, zero_class: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Value("bucket count n must be >= 1".into()));
        }
        Ok(BucketSpec { n, zero_class })
    }

    /// Smallest `n` whose top bucket contains `max_weight`.
    pub fn covering(max_weight: f64, zero_class: bool) -> Self {
        let n = decade_of(max_weight).max(1);
        BucketSpec { n, zero_class }
    }

    pub fn class_count(&self) -> usize {
        usize::from(self.zero_class) + self.n as usize + 1
    }

    pub fn zero(&self) -> usize {
        0
    }
}

/// `k` such that `value ∈ (10^{k-1}, 10^k]`, with `(0, 1]` mapped to 0.
fn decade_of(value: f64) -> u32 {
    if value <= 1.0 {
        return 0;
    }
    let mut k = value.log10().ceil().max(1.0) as i32;
    // log10 is not exact near powers of ten
    while k > 1 && value <= BucketSpec::BASE.powi(k - 1) {
        k -= 1;
    }
    while value > BucketSpec::BASE.powi(k) {
        k += 1;
    }
    k as u32
}

pub fn bucketize(raw_value: f64, spec: &BucketSpec) -> Result<usize> {
    if raw_value.is_nan() || raw_value < 0.0 {
        return Err(Error::Domain(format!("cannot bucketize {raw_value}")));
    }
    let offset = usize::from(spec.zero_class);
    if raw_value == 0.0 && spec.zero_class {
        return Ok(0);
    }
    Ok(offset + decade_of(raw_value).min(spec.n) as usize)
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::Empty("metric over zero samples".into()));
    }
    Ok(())
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), targets.len())?;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    Macro,
    Weighted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class scores for every class that appears in `truth`, keyed by class.
pub fn per_class_scores(pred: &[usize], truth: &[usize]) -> Result<BTreeMap<usize, ClassScores>> {
    check_lengths(pred.len(), truth.len())?;
    let classes: BTreeSet<usize> = truth.iter().copied().collect();
    let mut out = BTreeMap::new();
    for c in classes {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.insert(
            c,
            ClassScores {
                precision,
                recall,
                f1,
                support: tp + fn_,
            },
        );
    }
    Ok(out)
}

pub fn f1(pred: &[usize], truth: &[usize], averaging: F1Average) -> Result<f64> {
    let scores = per_class_scores(pred, truth)?;
    Ok(match averaging {
        F1Average::Macro => scores.values().map(|s| s.f1).sum::<f64>() / scores.len() as f64,
        F1Average::Weighted => {
            scores.values().map(|s| s.f1 * s.support as f64).sum::<f64>() / truth.len() as f64
        }
    })
}

/// Anything that can score evaluation samples.
pub trait EdgePredictor {
    /// Normalized-space predictions, one per sample.
    fn predict_values(&self, samples: &[Sample]) -> Result<Vec<f64>>;

    /// Magnitude-class predictions, one per sample.
    fn predict_classes(&self, samples: &[Sample], spec: &BucketSpec) -> Result<Vec<usize>>;
}

pub fn truth_classes(samples: &[Sample], spec: &BucketSpec) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| bucketize(if s.is_positive { s.weight } else { 0.0 }, spec))
        .collect()
}

/// Scores one evaluation set. Regression reports `mse`; classification
/// reports `accuracy`, `f1` (macro) and `f1_weighted`.
pub fn evaluate(
    predictor: &dyn EdgePredictor,
    eval_set: &SampleSet,
    task: Task,
    spec: &BucketSpec,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    match task {
        Task::Regression => {
            let preds = predictor.predict_values(&eval_set.samples)?;
            let targets: Vec<f64> = eval_set.samples.iter().map(|s| s.target).collect();
            out.insert("mse".to_string(), mse(&preds, &targets)?);
        }
        Task::Classification => {
            let preds = predictor.predict_classes(&eval_set.samples, spec)?;
            let truth = truth_classes(&eval_set.samples, spec)?;
            out.insert("accuracy".to_string(), accuracy(&preds, &truth)?);
            out.insert("f1".to_string(), f1(&preds, &truth, F1Average::Macro)?);
            out.insert("f1_weighted".to_string(), f1(&preds, &truth, F1Average::Weighted)?);
        }
    }
    Ok(out)
}

/// Evaluates every supplied regime and prefixes keys with the regime name
/// (`positive_mse`, `overall_accuracy`, …).
pub fn evaluate_regimes(
    predictor: &dyn EdgePredictor,
    sets: &[(EvalRegime, &SampleSet)],
    task: Task,
    spec: &BucketSpec,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (regime, set) in sets {
        let prefix = match regime {
            EvalRegime::Positive => "positive",
            EvalRegime::Overall => "overall",
        };
        for (k, v) in evaluate(predictor, set, task, spec)? {
            out.insert(format!("{prefix}_{k}"), v);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single seed.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_fingerprint: String,
    pub config: Option<serde_json::Value>,
    pub dataset_sha256: Option<String>,
    pub seeds: usize,
    pub std_kind: String,
    pub single_seed: bool,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub sample_counts: BTreeMap<String, usize>,
}

pub fn aggregate_seeds(per_seed: &[BTreeMap<String, f64>]) -> Result<EvalReport> {
    let first = per_seed
        .first()
        .ok_or_else(|| Error::Empty("no seed results to aggregate".into()))?;
    for (i, m) in per_seed.iter().enumerate().skip(1) {
        if !m.keys().eq(first.keys()) {
            return Err(Error::InconsistentKeys(format!(
                "seed {i} has keys {:?}, seed 0 has {:?}",
                m.keys().collect::<Vec<_>>(),
                first.keys().collect::<Vec<_>>()
            )));
        }
    }
    let n = per_seed.len();
    let mut metrics = BTreeMap::new();
    for key in first.keys() {
        let values: Vec<f64> = per_seed.iter().map(|m| m[key]).collect();
        let identical = values.iter().all(|v| v.to_bits() == values[0].to_bits());
        let mean = if identical { values[0] } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n > 1 && !identical {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        metrics.insert(
            key.clone(),
            MetricSummary {
                mean,
                std,
                per_seed: values,
            },
        );
    }
    Ok(EvalReport {
        config_fingerprint: String::new(),
        config: None,
        dataset_sha256: None,
        seeds: n,
        std_kind: "sample".into(),
        single_seed: n == 1,
        metrics,
        sample_counts: BTreeMap::new(),
    })
}

impl EvalReport {
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per metric: `config,metric,mean,std`.
    pub fn write_csv<W: Write>(&self, writer: W, with_header: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if with_header {
            w.write_record(["config", "metric", "mean", "std"])?;
        }
        for (k, m) in &self.metrics {
            w.write_record([
                self.config_fingerprint.as_str(),
                k,
                &format!("{:?}", m.mean),
                &format!("{:?}", m.std),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
        assert_eq!(mse(&[3.5, -1.0], &[3.5, -1.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[3.0]).unwrap(), 9.0);
        assert!(matches!(mse(&[0.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn bucket_boundaries() {
        let spec = BucketSpec::new(5, true).unwrap();
        assert_eq!(bucketize(57.0, &spec).unwrap(), 3); // (10, 100]
        assert_eq!(bucketize(1.0, &spec).unwrap(), 1); // (0, 1]
        assert_eq!(bucketize(0.0, &spec).unwrap(), 0);
        assert_eq!(bucketize(10.0, &spec).unwrap(), 2);
        assert_eq!(bucketize(1000.0, &spec).unwrap(), 4);
        assert_eq!(bucketize(1000.0000001, &spec).unwrap(), 5);
        assert_eq!(bucketize(1e9, &spec).unwrap(), 6); // clamps to n
        assert!(matches!(bucketize(-1.0, &spec), Err(Error::Domain(_))));

        let plain = BucketSpec::new(3, false).unwrap();
        assert_eq!(bucketize(57.0, &plain).unwrap(), 2);
        assert_eq!(bucketize(0.5, &plain).unwrap(), 0);
    }

    #[test]
    fn powers_of_ten_are_right_closed() {
        let spec = BucketSpec::new(22, false).unwrap();
        for k in 0..=22 {
            let v = 10f64.powi(k);
            assert_eq!(bucketize(v, &spec).unwrap(), k as usize, "10^{k}");
        }
    }

    #[test]
    fn covering_spec() {
        assert_eq!(BucketSpec::covering(57.0, true).n, 2);
        assert_eq!(BucketSpec::covering(0.3, true).n, 1);
        assert_eq!(BucketSpec::covering(1e6, false).n, 6);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn f1_hand_count() {
        // class 0: tp=1 fp=0 fn=1 -> p=1 r=1/2 f1=2/3
        // class 1: tp=2 fp=1 fn=0 -> p=2/3 r=1 f1=4/5
        let got = f1(&[0, 1, 1, 1], &[0, 0, 1, 1], F1Average::Macro).unwrap();
        assert!((got - 11.0 / 15.0).abs() < 1e-12);
        let w = f1(&[0, 1, 1, 1], &[0, 0, 1, 1], F1Average::Weighted).unwrap();
        assert!((w - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(f1(&[2, 2], &[2, 2], F1Average::Macro).unwrap(), 1.0);
        assert_eq!(f1(&[0, 1, 2], &[0, 1, 2], F1Average::Macro).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let m = |v: f64| BTreeMap::from([("mse".to_string(), v)]);
        let r = aggregate_seeds(&[m(2.0), m(4.0), m(6.0)]).unwrap();
        assert_eq!(r.metrics["mse"].mean, 4.0);
        assert_eq!(r.metrics["mse"].std, 2.0);
        let r = aggregate_seeds(&[m(5.0)]).unwrap();
        assert_eq!((r.metrics["mse"].mean, r.metrics["mse"].std, r.single_seed), (5.0, 0.0, true));
        let r = aggregate_seeds(&[m(3.0), m(3.0), m(3.0)]).unwrap();
        assert_eq!(r.metrics["mse"].std, 0.0);
        let other = BTreeMap::from([("acc".to_string(), 1.0)]);
        assert!(matches!(aggregate_seeds(&[m(1.0), other]), Err(Error::InconsistentKeys(_))));
    }
}
