//! Static collapse of a temporal graph into per-pair weight vectors, the
//! length-adjusting regroup transform, and a linear least-squares regressor
//! over the collapsed vectors.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::edge_stream::{NodeId, Region, Snapshot, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};
use crate::metrics::{bucketize, BucketSpec, EdgePredictor};
use crate::normalization::NormalizerState;
use crate::sampling::Sample;

/// Per-pair weight sequences over a contiguous snapshot range. Pairs that are
/// never positive in the range are implicit all-zero vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapsedGraph {
    pub snapshots: Range<Snapshot>,
    /// Shared node feature: the covered raw timestamps (group means after regroup).
    pub node_features: Vec<f64>,
    pub edge_features: BTreeMap<(NodeId, NodeId), Vec<f64>>,
    pub length: usize,
}

impl CollapsedGraph {
    pub fn node_features(&self, _node: NodeId) -> &[f64] {
        &self.node_features
    }

    pub fn vector(&self, source: NodeId, destination: NodeId) -> Vec<f64> {
        self.edge_features
            .get(&(source, destination))
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.length])
    }

    pub fn regrouped(&self, q: usize) -> Result<CollapsedGraph> {
        let edge_features = self
            .edge_features
            .iter()
            .map(|(k, v)| Ok((*k, regroup(v, q)?)))
            .collect::<Result<_>>()?;
        Ok(CollapsedGraph {
            snapshots: self.snapshots.clone(),
            node_features: regroup(&self.node_features, q)?,
            edge_features,
            length: q,
        })
    }

    /// Every directed non-self pair over `node_count` nodes, zero-filled.
    pub fn dense(&self, node_count: usize) -> Vec<((NodeId, NodeId), Vec<f64>)> {
        let mut out = Vec::with_capacity(node_count * node_count.saturating_sub(1));
        for u in 0..node_count as NodeId {
            for v in 0..node_count as NodeId {
                if u != v {
                    out.push(((u, v), self.vector(u, v)));
                }
            }
        }
        out
    }

    /// `source,destination,f0,…,f{L-1}` with dense node ids.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["source".to_string(), "destination".to_string()];
        header.extend((0..self.length).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for ((s, d), v) in &self.edge_features {
            let mut row = vec![s.to_string(), d.to_string()];
            row.extend(v.iter().map(|x| format!("{x:?}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Collapses the snapshots in `snapshots` into per-pair normalized weight vectors.
pub fn collapse_range(
    graph: &TemporalGraph,
    snapshots: Range<Snapshot>,
    normalizer: &NormalizerState,
) -> Result<CollapsedGraph> {
    let length = snapshots.len();
    let mut edge_features: BTreeMap<(NodeId, NodeId), Vec<f64>> = BTreeMap::new();
    for e in graph.events_in(snapshots.clone()) {
        let v = normalizer.apply_in(graph, e)?;
        let slot = edge_features
            .entry(e.pair())
            .or_insert_with(|| vec![0.0; length]);
        slot[(e.timestamp - snapshots.start) as usize] = v;
    }
    let node_features = snapshots
        .clone()
        .map(|t| graph.timestamps()[t as usize] as f64)
        .collect();
    Ok(CollapsedGraph {
        snapshots,
        node_features,
        edge_features,
        length,
    })
}

pub fn collapse(
    graph: &TemporalGraph,
    split: &SplitSpec,
    region: Region,
    normalizer: &NormalizerState,
) -> Result<CollapsedGraph> {
    let range = split.range(region);
    if range.is_empty() {
        return Err(Error::Empty(format!("{region:?} region covers no snapshots")));
    }
    collapse_range(graph, range, normalizer)
}

/// Averages contiguous groups so a length-`p` vector becomes length `q`.
/// When `q` does not divide `p`, the first `p mod q` groups hold one extra entry.
pub fn regroup(vector: &[f64], q: usize) -> Result<Vec<f64>> {
    let p = vector.len();
    if q == 0 || q > p {
        return Err(Error::Regroup { len: p, groups: q });
    }
    let base = p / q;
    let extra = p % q;
    let mut out = Vec::with_capacity(q);
    let mut start = 0;
    for i in 0..q {
        let size = base + usize::from(i < extra);
        let mut sum = 0.0;
        for x in &vector[start..start + size] {
            sum += x;
        }
        out.push(sum / size as f64);
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticRegressorConfig {
    /// Stop once the max-abs normal-equations residual falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub fit_intercept: bool,
}

impl Default for StaticRegressorConfig {
    fn default() -> Self {
        StaticRegressorConfig {
            tolerance: 1e-8,
            max_iterations: 2_000_000,
            fit_intercept: true,
        }
    }
}

/// Multi-output linear map `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticModel {
    /// `weights[j]` maps the input vector to output `j`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl StaticModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }
}

/// Least squares by accelerated gradient descent on the normal equations.
pub fn fit_least_squares(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &StaticRegressorConfig,
) -> Result<StaticModel> {
    if features.is_empty() {
        return Err(Error::Fit("no training rows".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: targets.len(),
        });
    }
    let n_in = features[0].len();
    let n_out = targets[0].len();
    if features.iter().any(|x| x.len() != n_in) || targets.iter().any(|y| y.len() != n_out) {
        return Err(Error::Fit("ragged feature or target rows".into()));
    }
    let d = n_in + usize::from(config.fit_intercept);
    let rows = features.len() as f64;

    // gram = X̃ᵀX̃ / n, cross = X̃ᵀY / n, with X̃ = [X, 1]
    let augmented = |x: &[f64], i: usize| if i < n_in { x[i] } else { 1.0 };
    let mut gram = vec![vec![0.0; d]; d];
    let mut cross = vec![vec![0.0; n_out]; d];
    for (x, y) in features.iter().zip(targets) {
        for i in 0..d {
            let xi = augmented(x, i);
            for j in 0..d {
                gram[i][j] += xi * augmented(x, j);
            }
            for (k, yk) in y.iter().enumerate() {
                cross[i][k] += xi * yk;
            }
        }
    }
    gram.iter_mut().flatten().for_each(|v| *v /= rows);
    cross.iter_mut().flatten().for_each(|v| *v /= rows);

    // Gershgorin bound on the largest eigenvalue
    let lipschitz = gram
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz == 0.0 {
        return Err(Error::Fit("all features are zero".into()));
    }
    let step = 1.0 / lipschitz;

    // coefficients stored column-major per output: coef[k][i]
    let gradient = |coef: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n_out)
            .map(|k| {
                (0..d)
                    .map(|i| (0..d).map(|j| gram[i][j] * coef[k][j]).sum::<f64>() - cross[i][k])
                    .collect()
            })
            .collect()
    };
    let max_abs = |g: &[Vec<f64>]| g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut coef = vec![vec![0.0; d]; n_out];
    let mut look = coef.clone();
    let mut momentum = 1.0f64;
    let mut iterations = 0;
    let mut residual = max_abs(&gradient(&coef));
    while residual > config.tolerance && iterations < config.max_iterations {
        let g = gradient(&look);
        let next: Vec<Vec<f64>> = look
            .iter()
            .zip(&g)
            .map(|(c, gc)| c.iter().zip(gc).map(|(a, b)| a - step * b).collect())
            .collect();
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        // restart momentum when the step moves uphill
        let uphill: f64 = g
            .iter()
            .flatten()
            .zip(next.iter().flatten().zip(coef.iter().flatten()))
            .map(|(gv, (n, c))| gv * (n - c))
            .sum();
        if uphill > 0.0 {
            momentum = 1.0;
            look = coef.clone();
        } else {
            look = next
                .iter()
                .zip(&coef)
                .map(|(n, c)| n.iter().zip(c).map(|(a, b)| a + beta * (a - b)).collect())
                .collect();
            coef = next;
            momentum = next_momentum;
        }
        iterations += 1;
        if iterations % 16 == 0 {
            residual = max_abs(&gradient(&coef));
        }
    }
    residual = max_abs(&gradient(&coef));
    if residual > config.tolerance {
        log::warn!("least squares stopped at residual {residual:e} after {iterations} iterations");
    }
    let (weights, bias) = coef
        .into_iter()
        .map(|mut c| {
            let b = if config.fit_intercept { c.pop().unwrap() } else { 0.0 };
            (c, b)
        })
        .unzip();
    Ok(StaticModel {
        weights,
        bias,
        iterations,
        residual,
    })
}

/// Fits the map from each pair's history vector to its target vector. Rows
/// are the pairs positive in either collapsed graph.
pub fn fit_static_regressor(
    history: &CollapsedGraph,
    targets: &CollapsedGraph,
    config: &StaticRegressorConfig,
) -> Result<StaticModel> {
    let mut pairs: Vec<(NodeId, NodeId)> = history.edge_features.keys().copied().collect();
    pairs.extend(targets.edge_features.keys().copied());
    pairs.sort_unstable();
    pairs.dedup();
    if pairs.is_empty() {
        return Err(Error::Fit("no positive pairs".into()));
    }
    let x: Vec<Vec<f64>> = pairs.iter().map(|&(s, d)| history.vector(s, d)).collect();
    let y: Vec<Vec<f64>> = pairs.iter().map(|&(s, d)| targets.vector(s, d)).collect();
    fit_least_squares(&x, &y, config)
}

/// Static stand-in predictor: history before the test split, regrouped to
/// the test length, mapped linearly onto the test snapshots.
#[derive(Clone, Debug)]
pub struct StaticLinearPredictor {
    pub model: StaticModel,
    pub test_history: CollapsedGraph,
    pub test_start: Snapshot,
    normalizer: NormalizerState,
    graph: TemporalGraph,
}

impl StaticLinearPredictor {
    /// Training rows use the last `q` training snapshots as targets and the
    /// training snapshots before them, regrouped to `q`, as inputs.
    pub fn fit(
        graph: &TemporalGraph,
        split: &SplitSpec,
        normalizer: &NormalizerState,
        config: &StaticRegressorConfig,
    ) -> Result<Self> {
        let q = split.test_timestamps;
        let train = split.train();
        let p = train.len();
        if p < 2 * q {
            return Err(Error::Fit(format!(
                "static model needs at least {} training snapshots for test length {q}, have {p}",
                2 * q
            )));
        }
        let cut = train.end - q as Snapshot;
        let history = collapse_range(graph, train.start..cut, normalizer)?.regrouped(q)?;
        let targets = collapse_range(graph, cut..train.end, normalizer)?;
        let model = fit_static_regressor(&history, &targets, config)?;
        let test = split.test();
        let test_history = collapse_range(graph, 0..test.start, normalizer)?.regrouped(q)?;
        Ok(StaticLinearPredictor {
            model,
            test_history,
            test_start: test.start,
            normalizer: normalizer.clone(),
            graph: graph.clone(),
        })
    }

    pub fn predict(&self, sample: &Sample) -> Result<f64> {
        let offset = sample
            .timestamp
            .checked_sub(self.test_start)
            .map(|o| o as usize)
            .filter(|&o| o < self.model.bias.len())
            .ok_or_else(|| Error::Value(format!("snapshot {} outside the test split", sample.timestamp)))?;
        let x = self.test_history.vector(sample.source, sample.destination);
        let w = &self.model.weights[offset];
        Ok(w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + self.model.bias[offset])
    }
}

impl EdgePredictor for StaticLinearPredictor {
    fn predict_values(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(s)).collect()
    }

    fn predict_classes(&self, samples: &[Sample], spec: &BucketSpec) -> Result<Vec<usize>> {
        samples
            .iter()
            .map(|s| {
                let raw = self
                    .normalizer
                    .invert_in(&self.graph, self.predict(s)?, s.source, s.timestamp)?;
                bucketize(raw.max(0.0), spec)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_stream::{chronological_split, SplitRequest};
    use crate::normalization::NormMethod;

    #[test]
    fn regroup_examples() {
        assert_eq!(regroup(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap(), vec![1.5, 3.5, 5.5]);
        let v = [0.25, -3.0, 7.5];
        assert_eq!(regroup(&v, 3).unwrap(), v.to_vec());
        assert_eq!(regroup(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap(), vec![2.0, 4.5]);
        assert!(matches!(regroup(&[1.0], 2), Err(Error::Regroup { len: 1, groups: 2 })));
        assert!(matches!(regroup(&[1.0], 0), Err(Error::Regroup { .. })));
    }

    #[test]
    fn collapse_zero_fills() {
        // min-max with a=1, b=4 over train weights {1, 4} is the identity
        let g = TemporalGraph::from_rows(vec![
            ("0", "1", 0, 1.0),
            ("0", "1", 2, 4.0),
            ("1", "2", 1, 2.0),
            ("0", "1", 3, 1.0),
            ("0", "1", 4, 1.0),
        ])
        .unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: 3, val: 1, test: 1 }).unwrap();
        let n = NormalizerState::fit(&g, &s, NormMethod::Minmax, 1.0, 4.0).unwrap();
        let c = collapse(&g, &s, Region::Train, &n).unwrap();
        assert_eq!(c.edge_features[&(0, 1)], vec![1.0, 0.0, 4.0]);
        assert_eq!(c.vector(2, 0), vec![0.0; 3]);
        assert_eq!(c.node_features(0), &[0.0, 1.0, 2.0]);
        let single = collapse(&g, &s, Region::Test, &n).unwrap();
        assert_eq!(single.length, 1);
        assert!(single.edge_features.values().all(|v| v.len() == 1));
        assert_eq!(c.dense(3).len(), 6);
    }

    #[test]
    fn constant_history_is_reproduced() {
        let c = 2.5;
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![c; 4]).collect();
        let y: Vec<Vec<f64>> = (0..10).map(|_| vec![c; 4]).collect();
        let m = fit_least_squares(&x, &y, &StaticRegressorConfig::default()).unwrap();
        for v in m.predict(&[c; 4]) {
            assert!((v - c).abs() < 1e-6);
        }
    }

    #[test]
    fn single_feature_slope() {
        let x: Vec<Vec<f64>> = (1..=8).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|v| vec![2.0 * v[0]]).collect();
        let m = fit_least_squares(&x, &y, &StaticRegressorConfig::default()).unwrap();
        assert!((m.weights[0][0] - 2.0).abs() < 1e-6);
        assert!(m.bias[0].abs() < 1e-6);
    }

    #[test]
    fn empty_fit_is_error() {
        let empty = CollapsedGraph {
            snapshots: 0..1,
            node_features: vec![0.0],
            edge_features: BTreeMap::new(),
            length: 1,
        };
        assert!(matches!(
            fit_static_regressor(&empty, &empty, &StaticRegressorConfig::default()),
            Err(Error::Fit(_))
        ));
    }
}
