//! Training and evaluation sample sets.
//!
//! Negative samples are directed pairs absent from a snapshot, drawn from the
//! nodes seen at or before that snapshot. Each snapshot draws from its own
//! ChaCha stream keyed by `(seed, purpose, snapshot)`, so a snapshot's draws do
//! not depend on any other snapshot.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge_stream::{EdgeEvent, NodeId, Snapshot, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};
use crate::normalization::NormalizerState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub source: NodeId,
    pub destination: NodeId,
    pub timestamp: Snapshot,
    /// Normalized weight; exactly 0 for negatives.
    pub target: f64,
    pub is_positive: bool,
    /// Raw weight; 0 for negatives. Used for magnitude classes.
    pub weight: f64,
}

impl Sample {
    pub fn negative(source: NodeId, destination: NodeId, timestamp: Snapshot) -> Self {
        Sample {
            source,
            destination,
            timestamp,
            target: 0.0,
            is_positive: false,
            weight: 0.0,
        }
    }

    fn positive(graph: &TemporalGraph, e: &EdgeEvent, normalizer: &NormalizerState) -> Result<Self> {
        Ok(Sample {
            source: e.source,
            destination: e.destination,
            timestamp: e.timestamp,
            target: normalizer.apply_in(graph, e)?,
            is_positive: true,
            weight: e.weight,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStrategy {
    PositiveOnly,
    AllPairs,
    NegativeSampling,
}

impl std::str::FromStr for TrainingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "positive_only" => Ok(TrainingStrategy::PositiveOnly),
            "all" | "all_pairs" => Ok(TrainingStrategy::AllPairs),
            "negsample" | "negative_sampling" => Ok(TrainingStrategy::NegativeSampling),
            other => Err(Error::Config(format!("unknown training strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for TrainingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingStrategy::PositiveOnly => "positive",
            TrainingStrategy::AllPairs => "all",
            TrainingStrategy::NegativeSampling => "negsample",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRegime {
    /// Test positives only.
    Positive,
    /// Test positives plus as many sampled negatives.
    Overall,
}

impl std::str::FromStr for EvalRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(EvalRegime::Positive),
            "overall" => Ok(EvalRegime::Overall),
            other => Err(Error::Config(format!("unknown evaluation regime '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeScope {
    /// Both endpoints outside the new-node set.
    Old,
    /// At least one endpoint in the new-node set.
    New,
    /// No scoping.
    All,
}

impl NodeScope {
    pub fn admits(self, split: &SplitSpec, source: NodeId, destination: NodeId) -> bool {
        let touches_new = split.is_new(source) || split.is_new(destination);
        match self {
            NodeScope::Old => !touches_new,
            NodeScope::New => touches_new,
            NodeScope::All => true,
        }
    }
}

impl std::str::FromStr for NodeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "old" => Ok(NodeScope::Old),
            "new" => Ok(NodeScope::New),
            "all" => Ok(NodeScope::All),
            other => Err(Error::Config(format!("unknown node scope '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrigin {
    Training(TrainingStrategy),
    Evaluation { regime: EvalRegime, scope: NodeScope },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Draw negatives with replacement within a snapshot.
    pub with_replacement: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub origin: SampleOrigin,
    pub neg_ratio: f64,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_positive).count()
    }

    pub fn negative_count(&self) -> usize {
        self.len() - self.positive_count()
    }

    /// Samples grouped by snapshot, in order. Relies on the timestamp-major ordering.
    pub fn by_snapshot(&self) -> Vec<(Snapshot, &[Sample])> {
        self.samples
            .chunk_by(|a, b| a.timestamp == b.timestamp)
            .map(|c| (c[0].timestamp, c))
            .collect()
    }

    /// `source,destination,timestamp,target,is_positive`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "destination", "timestamp", "target", "is_positive"])?;
        for s in &self.samples {
            w.write_record([
                s.source.to_string(),
                s.destination.to_string(),
                s.timestamp.to_string(),
                format!("{:?}", s.target),
                s.is_positive.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }
}

const STREAM_TRAINING: u64 = 1;
const STREAM_EVALUATION: u64 = 2;

fn snapshot_rng(seed: u64, purpose: u64, t: Snapshot) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | t as u64);
    rng
}

/// Absent directed pairs at `t` over `universe`, excluding self-loops, in
/// lexicographic order.
fn absent_pairs(
    graph: &TemporalGraph,
    t: Snapshot,
    universe: &[NodeId],
    eligible: impl Fn(NodeId, NodeId) -> bool,
) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for &u in universe {
        for &v in universe {
            if u != v && eligible(u, v) && !graph.contains(u, v, t) {
                out.push((u, v));
            }
        }
    }
    out
}

fn draw_negatives(
    candidates: &[(NodeId, NodeId)],
    k: usize,
    t: Snapshot,
    opts: SamplingOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(NodeId, NodeId)>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if opts.with_replacement {
        if candidates.is_empty() {
            return Err(Error::Exhausted {
                snapshot: t,
                requested: k,
                available: 0,
            });
        }
        return Ok((0..k)
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect());
    }
    if k > candidates.len() {
        return Err(Error::Exhausted {
            snapshot: t,
            requested: k,
            available: candidates.len(),
        });
    }
    Ok(rand::seq::index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

fn negatives_to_samples(pairs: Vec<(NodeId, NodeId)>, t: Snapshot) -> impl Iterator<Item = Sample> {
    pairs.into_iter().map(move |(u, v)| Sample::negative(u, v, t))
}

/// Materializes the training set for one strategy over the training split.
pub fn build_training_samples(
    graph: &TemporalGraph,
    split: &SplitSpec,
    strategy: TrainingStrategy,
    neg_ratio: f64,
    seed: u64,
    normalizer: &NormalizerState,
    opts: SamplingOptions,
) -> Result<SampleSet> {
    if !(neg_ratio >= 0.0 && neg_ratio.is_finite()) {
        return Err(Error::Value(format!("neg_ratio must be finite and >= 0, got {neg_ratio}")));
    }
    if graph.events_in(split.train()).is_empty() {
        return Err(Error::Empty("training split has no events".into()));
    }
    let mut samples = Vec::new();
    let mut cumulative_pos = 0usize;
    let mut cumulative_neg = 0usize;
    for t in split.train() {
        let events = graph.snapshot_events(t);
        for e in events {
            samples.push(Sample::positive(graph, e, normalizer)?);
        }
        match strategy {
            TrainingStrategy::PositiveOnly => {}
            TrainingStrategy::AllPairs => {
                let universe = graph.nodes_seen_through(t);
                let pairs = absent_pairs(graph, t, &universe, |_, _| true);
                samples.extend(negatives_to_samples(pairs, t));
            }
            TrainingStrategy::NegativeSampling => {
                // cumulative flooring keeps the global total at ⌊ratio · positives⌋
                cumulative_pos += events.len();
                let target_total = (neg_ratio * cumulative_pos as f64).floor() as usize;
                let k = target_total - cumulative_neg;
                cumulative_neg = target_total;
                if k == 0 {
                    continue;
                }
                let universe = graph.nodes_seen_through(t);
                let candidates = absent_pairs(graph, t, &universe, |_, _| true);
                let mut rng = snapshot_rng(seed, STREAM_TRAINING, t);
                let pairs = draw_negatives(&candidates, k, t, opts, &mut rng)?;
                samples.extend(negatives_to_samples(pairs, t));
            }
        }
    }
    Ok(SampleSet {
        samples,
        origin: SampleOrigin::Training(strategy),
        neg_ratio: match strategy {
            TrainingStrategy::NegativeSampling => neg_ratio,
            _ => 0.0,
        },
        seed,
    })
}

/// Materializes the test-split evaluation set for a regime and node scope.
///
/// Scoping is applied to positives first; under the overall regime each
/// snapshot then receives as many negatives as it has scoped positives,
/// drawn from absent pairs that satisfy the same scope.
pub fn build_eval_samples(
    graph: &TemporalGraph,
    split: &SplitSpec,
    regime: EvalRegime,
    scope: NodeScope,
    seed: u64,
    normalizer: &NormalizerState,
    opts: SamplingOptions,
) -> Result<SampleSet> {
    if graph.events_in(split.test()).is_empty() {
        return Err(Error::Empty("test split has no events".into()));
    }
    if scope == NodeScope::New && split.new_node_set.is_empty() {
        return Err(Error::Scope("new-node scope requires a non-empty new-node set".into()));
    }
    let mut samples = Vec::new();
    for t in split.test() {
        let before = samples.len();
        for e in graph.snapshot_events(t) {
            if scope.admits(split, e.source, e.destination) {
                samples.push(Sample::positive(graph, e, normalizer)?);
            }
        }
        let k = samples.len() - before;
        if regime == EvalRegime::Overall && k > 0 {
            let universe = graph.nodes_seen_through(t);
            let candidates = absent_pairs(graph, t, &universe, |u, v| scope.admits(split, u, v));
            let mut rng = snapshot_rng(seed, STREAM_EVALUATION, t);
            let pairs = draw_negatives(&candidates, k, t, opts, &mut rng)?;
            samples.extend(negatives_to_samples(pairs, t));
        }
    }
    if samples.is_empty() {
        return Err(Error::Scope(format!("no test samples for scope {scope:?}")));
    }
    Ok(SampleSet {
        samples,
        origin: SampleOrigin::Evaluation { regime, scope },
        neg_ratio: match regime {
            EvalRegime::Overall => 1.0,
            EvalRegime::Positive => 0.0,
        },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_stream::{chronological_split, SplitRequest};
    use crate::normalization::NormMethod;
    use std::collections::HashSet;

    /// Snapshot 0: (0,1),(1,2) over nodes {0,1,2}; later snapshots for val/test.
    fn fixture() -> (TemporalGraph, SplitSpec, NormalizerState) {
        let rows = vec![
            ("0", "1", 0u64, 2.0),
            ("1", "2", 0, 3.0),
            ("0", "1", 1, 4.0),
            ("0", "1", 2, 5.0),
            ("2", "0", 2, 6.0),
            ("1", "0", 2, 7.0),
        ];
        let g = TemporalGraph::from_rows(rows).unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: 1, val: 1, test: 1 }).unwrap();
        let n = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        (g, s, n)
    }

    #[test]
    fn all_pairs_on_three_nodes() {
        let (g, s, n) = fixture();
        let set = build_training_samples(&g, &s, TrainingStrategy::AllPairs, 1.0, 0, &n, SamplingOptions::default()).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.negative_count(), 4);
        assert!(set.samples.iter().filter(|x| !x.is_positive).all(|x| x.target == 0.0));
        assert!(set.samples[..2].iter().all(|x| x.is_positive));
    }

    #[test]
    fn negative_sampling_ratio_one() {
        let (g, s, n) = fixture();
        for seed in 0..50 {
            let set = build_training_samples(&g, &s, TrainingStrategy::NegativeSampling, 1.0, seed, &n, SamplingOptions::default()).unwrap();
            assert_eq!(set.positive_count(), 2);
            assert_eq!(set.negative_count(), 2);
            let negs: HashSet<_> = set.samples.iter().filter(|x| !x.is_positive).map(|x| (x.source, x.destination)).collect();
            assert_eq!(negs.len(), 2);
            for (u, v) in negs {
                assert!(!g.contains(u, v, 0));
                assert_ne!(u, v);
            }
        }
    }

    #[test]
    fn positive_only_keeps_positives() {
        let (g, s, n) = fixture();
        let set = build_training_samples(&g, &s, TrainingStrategy::PositiveOnly, 1.0, 0, &n, SamplingOptions::default()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.samples.iter().all(|x| x.is_positive));
        assert_eq!(set.samples[0].target, 2.0f64.ln());
    }

    #[test]
    fn exhaustion_names_snapshot() {
        let (g, s, n) = fixture();
        match build_training_samples(&g, &s, TrainingStrategy::NegativeSampling, 3.0, 0, &n, SamplingOptions::default()) {
            Err(Error::Exhausted { snapshot, requested, available }) => {
                assert_eq!((snapshot, requested, available), (0, 6, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
        // with replacement it succeeds
        let set = build_training_samples(
            &g,
            &s,
            TrainingStrategy::NegativeSampling,
            3.0,
            0,
            &n,
            SamplingOptions { with_replacement: true },
        )
        .unwrap();
        assert_eq!(set.negative_count(), 6);
    }

    #[test]
    fn fractional_ratio_floors_globally() {
        let (g, s, n) = fixture();
        let set = build_training_samples(&g, &s, TrainingStrategy::NegativeSampling, 0.5, 3, &n, SamplingOptions::default()).unwrap();
        assert_eq!(set.negative_count(), 1);
    }

    #[test]
    fn overall_regime_doubles() {
        let (g, s, n) = fixture();
        let pos = build_eval_samples(&g, &s, EvalRegime::Positive, NodeScope::All, 0, &n, SamplingOptions::default()).unwrap();
        assert_eq!(pos.len(), 3);
        assert!(pos.samples.iter().all(|x| x.is_positive));
        let all = build_eval_samples(&g, &s, EvalRegime::Overall, NodeScope::All, 0, &n, SamplingOptions::default()).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all.positive_count(), 3);
    }

    #[test]
    fn new_scope_membership() {
        let mut split = SplitSpec {
            train_timestamps: 1,
            val_timestamps: 1,
            test_timestamps: 1,
            boundary_policy: crate::edge_stream::BoundaryPolicy::ByTimestampCount,
            new_node_set: Default::default(),
        };
        split.new_node_set.insert(7);
        assert!(NodeScope::New.admits(&split, 7, 3));
        assert!(!NodeScope::New.admits(&split, 2, 3));
        assert!(NodeScope::Old.admits(&split, 2, 3));
    }

    #[test]
    fn new_scope_requires_new_nodes() {
        let (g, s, n) = fixture();
        assert!(matches!(
            build_eval_samples(&g, &s, EvalRegime::Positive, NodeScope::New, 0, &n, SamplingOptions::default()),
            Err(Error::Scope(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let (g, s, n) = fixture();
        let set = build_training_samples(&g, &s, TrainingStrategy::AllPairs, 1.0, 0, &n, SamplingOptions::default()).unwrap();
        let text = String::from_utf8(set.to_csv_bytes().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("source,destination,timestamp,target,is_positive"));
        assert_eq!(lines.next(), Some(format!("0,1,0,{:?},true", 2.0f64.ln()).as_str()));
        assert_eq!(text.lines().count(), 7);
    }
}
