//! Non-learned predictors: Mean / Most, Persistence Forecast and Historical Average.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::edge_stream::{NodeId, Snapshot, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};
use crate::metrics::{bucketize, BucketSpec, EdgePredictor};
use crate::normalization::NormalizerState;
use crate::sampling::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mean,
    Most,
    Persistence,
    HistoricalAverage,
}

/// Prediction for pairs never observed in training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// The negative-edge value (zero class for classification).
    #[default]
    Zero,
    /// The global mean (modal class for classification).
    GlobalMean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanPooling {
    /// Mean over snapshots of each snapshot's positive-edge mean.
    #[default]
    SnapshotMeans,
    /// One mean over all positive training edges.
    Pooled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub fallback: Fallback,
    pub pooling: MeanPooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LastSeen {
    pub timestamp: Snapshot,
    /// Normalized weight.
    pub value: f64,
    /// Raw weight, for the magnitude class.
    pub raw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineState {
    pub kind: BaselineKind,
    pub global_mean: f64,
    pub global_mode_class: usize,
    pub last_seen: HashMap<(NodeId, NodeId), LastSeen>,
    pub history_sum_count: HashMap<(NodeId, NodeId), (f64, usize)>,
    pub options: BaselineOptions,
}

/// Fits a baseline over the normalized positive training edges.
pub fn fit_baseline(
    kind: BaselineKind,
    graph: &TemporalGraph,
    split: &SplitSpec,
    normalizer: &NormalizerState,
    buckets: &BucketSpec,
    options: BaselineOptions,
) -> Result<BaselineState> {
    let train = split.train();
    if graph.events_in(train.clone()).is_empty() {
        return Err(Error::Empty("training split has no events".into()));
    }

    let mut snapshot_means_sum = 0.0;
    let mut snapshot_count = 0usize;
    let mut pooled_sum = 0.0;
    let mut pooled_count = 0usize;
    let mut class_counts = vec![0usize; buckets.class_count()];
    let mut last_seen = HashMap::new();
    let mut history: HashMap<(NodeId, NodeId), (f64, usize)> = HashMap::new();

    for t in train {
        let events = graph.snapshot_events(t);
        if events.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for e in events {
            let v = normalizer.apply_in(graph, e)?;
            sum += v;
            let h = history.entry(e.pair()).or_insert((0.0, 0));
            h.0 += v;
            h.1 += 1;
            last_seen.insert(
                e.pair(),
                LastSeen {
                    timestamp: t,
                    value: v,
                    raw: e.weight,
                },
            );
            class_counts[bucketize(e.weight, buckets)?] += 1;
        }
        snapshot_means_sum += sum / events.len() as f64;
        snapshot_count += 1;
        pooled_sum += sum;
        pooled_count += events.len();
    }

    let global_mean = match options.pooling {
        MeanPooling::SnapshotMeans => snapshot_means_sum / snapshot_count as f64,
        MeanPooling::Pooled => pooled_sum / pooled_count as f64,
    };
    // ties go to the smaller class index
    let mut global_mode_class = 0;
    for (c, &n) in class_counts.iter().enumerate() {
        if n > class_counts[global_mode_class] {
            global_mode_class = c;
        }
    }

    Ok(BaselineState {
        kind,
        global_mean,
        global_mode_class,
        last_seen,
        history_sum_count: history,
        options,
    })
}

impl BaselineState {
    fn fallback_value(&self) -> f64 {
        match self.options.fallback {
            Fallback::Zero => 0.0,
            Fallback::GlobalMean => self.global_mean,
        }
    }

    fn fallback_class(&self, spec: &BucketSpec) -> usize {
        match self.options.fallback {
            Fallback::Zero => spec.zero(),
            Fallback::GlobalMean => self.global_mode_class,
        }
    }

    /// Regression prediction in normalized space.
    pub fn predict(&self, sample: &Sample) -> Result<f64> {
        let pair = (sample.source, sample.destination);
        match self.kind {
            BaselineKind::Mean => Ok(self.global_mean),
            BaselineKind::Persistence => Ok(self
                .last_seen
                .get(&pair)
                .map_or_else(|| self.fallback_value(), |l| l.value)),
            BaselineKind::HistoricalAverage => Ok(self
                .history_sum_count
                .get(&pair)
                .map_or_else(|| self.fallback_value(), |(s, n)| s / *n as f64)),
            BaselineKind::Most => Err(Error::TaskMismatch(
                "the Most baseline only predicts classes".into(),
            )),
        }
    }

    pub fn predict_class(&self, sample: &Sample, spec: &BucketSpec) -> Result<usize> {
        match self.kind {
            BaselineKind::Most => Ok(self.global_mode_class),
            BaselineKind::Persistence => match self.last_seen.get(&(sample.source, sample.destination)) {
                Some(l) => bucketize(l.raw, spec),
                None => Ok(self.fallback_class(spec)),
            },
            BaselineKind::Mean | BaselineKind::HistoricalAverage => Err(Error::TaskMismatch(format!(
                "{:?} baseline does not apply to classification",
                self.kind
            ))),
        }
    }
}

impl EdgePredictor for BaselineState {
    fn predict_values(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }

    fn predict_classes(&self, samples: &[Sample], spec: &BucketSpec) -> Result<Vec<usize>> {
        samples.iter().map(|s| self.predict_class(s, spec)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_stream::{chronological_split, SplitRequest};
    use crate::normalization::NormMethod;

    fn fit(kind: BaselineKind, rows: Vec<(&str, &str, u64, f64)>, split: (usize, usize, usize)) -> BaselineState {
        let g = TemporalGraph::from_rows(rows).unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: split.0, val: split.1, test: split.2 }).unwrap();
        // min-max over [1, 3] with a=1, b=3 is the identity on those weights
        let n = NormalizerState::fit(&g, &s, NormMethod::Minmax, 1.0, 3.0).unwrap();
        fit_baseline(kind, &g, &s, &n, &BucketSpec::new(3, true).unwrap(), BaselineOptions::default()).unwrap()
    }

    fn q(s: NodeId, d: NodeId) -> Sample {
        Sample::negative(s, d, 9)
    }

    #[test]
    fn mean_over_one_snapshot() {
        let st = fit(
            BaselineKind::Mean,
            vec![("0", "1", 0, 1.0), ("1", "2", 0, 2.0), ("2", "0", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)],
            (1, 1, 1),
        );
        assert_eq!(st.global_mean, 2.0);
        assert_eq!(st.predict(&q(4, 5)).unwrap(), 2.0);
        assert_eq!(st.predict(&q(0, 1)).unwrap(), 2.0);
    }

    #[test]
    fn persistence_and_history() {
        let rows = vec![
            ("0", "1", 0, 1.0),
            ("1", "0", 1, 3.0),
            ("1", "0", 2, 3.0),
            ("0", "1", 3, 3.0),
            ("0", "1", 4, 1.0),
            ("0", "1", 5, 1.0),
        ];
        let p = fit(BaselineKind::Persistence, rows.clone(), (4, 1, 1));
        assert_eq!(p.last_seen[&(0, 1)].timestamp, 3);
        assert_eq!(p.predict(&q(0, 1)).unwrap(), 3.0);
        assert_eq!(p.predict(&q(4, 5)).unwrap(), 0.0);
        let h = fit(BaselineKind::HistoricalAverage, rows, (4, 1, 1));
        assert_eq!(h.history_sum_count[&(0, 1)], (4.0, 2));
        assert_eq!(h.predict(&q(0, 1)).unwrap(), 2.0);
        assert_eq!(h.predict(&q(1, 0)).unwrap(), 3.0);
    }

    #[test]
    fn snapshot_means_versus_pooled() {
        let rows = vec![
            ("0", "1", 0, 1.0),
            ("0", "2", 0, 1.0),
            ("0", "3", 0, 1.0),
            ("0", "1", 1, 3.0),
            ("0", "1", 2, 3.0),
            ("0", "1", 3, 3.0),
        ];
        let g = TemporalGraph::from_rows(rows).unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: 2, val: 1, test: 1 }).unwrap();
        let n = NormalizerState::fit(&g, &s, NormMethod::Minmax, 1.0, 3.0).unwrap();
        let spec = BucketSpec::new(3, true).unwrap();
        let a = fit_baseline(BaselineKind::Mean, &g, &s, &n, &spec, BaselineOptions::default()).unwrap();
        assert_eq!(a.global_mean, 2.0);
        let b = fit_baseline(
            BaselineKind::Mean,
            &g,
            &s,
            &n,
            &spec,
            BaselineOptions { pooling: MeanPooling::Pooled, ..Default::default() },
        )
        .unwrap();
        assert_eq!(b.global_mean, 1.5);
    }

    #[test]
    fn mode_ties_break_low_and_task_mismatch() {
        // raw 1 -> class 1, raw 3 -> class 2 (with zero class); one each
        let st = fit(BaselineKind::Most, vec![("0", "1", 0, 1.0), ("1", "0", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)], (1, 1, 1));
        assert_eq!(st.global_mode_class, 1);
        assert!(matches!(st.predict(&q(0, 1)), Err(Error::TaskMismatch(_))));
        let mean = fit(BaselineKind::Mean, vec![("0", "1", 0, 1.0), ("1", "0", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)], (1, 1, 1));
        assert!(matches!(
            mean.predict_class(&q(0, 1), &BucketSpec::new(3, true).unwrap()),
            Err(Error::TaskMismatch(_))
        ));
    }

    #[test]
    fn persistence_classes() {
        let st = fit(BaselineKind::Persistence, vec![("0", "1", 0, 1.0), ("1", "0", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)], (1, 1, 1));
        let spec = BucketSpec::new(3, true).unwrap();
        assert_eq!(st.predict_class(&q(1, 0), &spec).unwrap(), 2);
        assert_eq!(st.predict_class(&q(7, 8), &spec).unwrap(), 0);
    }

    #[test]
    fn global_mean_fallback() {
        let g = TemporalGraph::from_rows(vec![("0", "1", 0, 1.0), ("1", "0", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)]).unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: 1, val: 1, test: 1 }).unwrap();
        let n = NormalizerState::fit(&g, &s, NormMethod::Minmax, 1.0, 3.0).unwrap();
        let st = fit_baseline(
            BaselineKind::Persistence,
            &g,
            &s,
            &n,
            &BucketSpec::new(3, true).unwrap(),
            BaselineOptions { fallback: Fallback::GlobalMean, ..Default::default() },
        )
        .unwrap();
        assert_eq!(st.predict(&q(5, 6)).unwrap(), 2.0);
    }
}
