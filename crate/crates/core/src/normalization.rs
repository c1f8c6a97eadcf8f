//! Edge-weight scalings (min-max, natural log, per-node outgoing share) and their inverses.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::edge_stream::{EdgeEvent, NodeId, Snapshot, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Minmax,
    Log,
    NodeDegree,
}

impl std::str::FromStr for NormMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(NormMethod::Minmax),
            "log" => Ok(NormMethod::Log),
            "degree" | "node_degree" => Ok(NormMethod::NodeDegree),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

impl std::fmt::Display for NormMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMethod::Minmax => "minmax",
            NormMethod::Log => "log",
            NormMethod::NodeDegree => "degree",
        })
    }
}

/// Fitted normalizer. Statistics come from the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub method: NormMethod,
    pub a: f64,
    pub b: f64,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
    /// Outgoing raw-weight sums per (node, snapshot) over training events.
    #[serde(skip)]
    pub degree_sums: HashMap<(NodeId, Snapshot), f64>,
}

impl NormalizerState {
    pub fn fit(graph: &TemporalGraph, split: &SplitSpec, method: NormMethod, a: f64, b: f64) -> Result<Self> {
        let train = graph.events_in(split.train());
        if train.is_empty() {
            return Err(Error::Empty("training split has no events".into()));
        }
        let mut state = NormalizerState {
            method,
            a,
            b,
            w_min: None,
            w_max: None,
            degree_sums: HashMap::new(),
        };
        match method {
            NormMethod::Minmax => {
                if !(a < b) {
                    return Err(Error::Value(format!("min-max range requires a < b, got [{a}, {b}]")));
                }
                let (lo, hi) = train
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                        (lo.min(e.weight), hi.max(e.weight))
                    });
                if lo == hi {
                    return Err(Error::DegenerateRange(lo));
                }
                state.w_min = Some(lo);
                state.w_max = Some(hi);
            }
            NormMethod::Log => {}
            NormMethod::NodeDegree => {
                for e in train {
                    *state.degree_sums.entry((e.source, e.timestamp)).or_insert(0.0) += e.weight;
                }
            }
        }
        Ok(state)
    }

    /// Parses a JSON-serialized state and regenerates degree sums from the data.
    pub fn from_json(text: &str, graph: &TemporalGraph, split: &SplitSpec) -> Result<Self> {
        let mut state: NormalizerState = serde_json::from_str(text)?;
        if state.method == NormMethod::NodeDegree {
            for e in graph.events_in(split.train()) {
                *state.degree_sums.entry((e.source, e.timestamp)).or_insert(0.0) += e.weight;
            }
        }
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn range(&self) -> (f64, f64) {
        (
            self.w_min.expect("min-max state carries w_min"),
            self.w_max.expect("min-max state carries w_max"),
        )
    }

    fn degree_sum(&self, graph: Option<&TemporalGraph>, node: NodeId, t: Snapshot) -> Result<f64> {
        self.degree_sums
            .get(&(node, t))
            .copied()
            .or_else(|| graph.and_then(|g| g.out_weight_sum(node, t)))
            .ok_or(Error::MissingDegreeSum { node, snapshot: t })
    }

    fn forward(&self, w: f64, sum: impl FnOnce() -> Result<f64>) -> Result<f64> {
        if !(w > 0.0) {
            return Err(match self.method {
                NormMethod::Log => Error::LogDomain(w),
                _ => Error::Value(format!("weight {w} is not positive")),
            });
        }
        Ok(match self.method {
            NormMethod::Minmax => {
                let (lo, hi) = self.range();
                let v = self.a + (w - lo) * (self.b - self.a) / (hi - lo);
                v.clamp(self.a, self.b)
            }
            NormMethod::Log => w.ln(),
            NormMethod::NodeDegree => w / sum()?,
        })
    }

    /// Normalizes an event using training statistics only.
    pub fn apply(&self, event: &EdgeEvent) -> Result<f64> {
        self.forward(event.weight, || self.degree_sum(None, event.source, event.timestamp))
    }

    /// Normalizes an event; for node-degree, snapshots outside the training
    /// split fall back to the sum recomputed from `graph`.
    pub fn apply_in(&self, graph: &TemporalGraph, event: &EdgeEvent) -> Result<f64> {
        self.forward(event.weight, || self.degree_sum(Some(graph), event.source, event.timestamp))
    }

    fn backward(&self, value: f64, sum: impl FnOnce() -> Result<f64>) -> Result<f64> {
        Ok(match self.method {
            NormMethod::Minmax => {
                let (lo, hi) = self.range();
                if value < self.a || value > self.b {
                    log::warn!(
                        "min-max value {value} outside [{}, {}]; inverting linearly",
                        self.a,
                        self.b
                    );
                }
                lo + (value - self.a) * (hi - lo) / (self.b - self.a)
            }
            NormMethod::Log => value.exp(),
            NormMethod::NodeDegree => value * sum()?,
        })
    }

    /// Maps a normalized value back to raw units.
    pub fn invert(&self, value: f64, source: NodeId, t: Snapshot) -> Result<f64> {
        self.backward(value, || self.degree_sum(None, source, t))
    }

    pub fn invert_in(&self, graph: &TemporalGraph, value: f64, source: NodeId, t: Snapshot) -> Result<f64> {
        self.backward(value, || self.degree_sum(Some(graph), source, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge_stream::{chronological_split, SplitRequest};

    fn graph(rows: &[(&str, &str, u64, f64)]) -> (TemporalGraph, SplitSpec) {
        let g = TemporalGraph::from_rows(rows.iter().copied()).unwrap();
        let s = chronological_split(&g, SplitRequest::Counts { train: 1, val: 1, test: 1 }).unwrap();
        (g, s)
    }

    fn ev(g: &TemporalGraph, i: usize) -> EdgeEvent {
        g.events()[i]
    }

    #[test]
    fn minmax_fit_and_midpoint() {
        let (g, s) = graph(&[("0", "1", 0, 2.0), ("1", "2", 0, 8.0), ("0", "1", 1, 5.0), ("0", "1", 2, 20.0)]);
        let st = NormalizerState::fit(&g, &s, NormMethod::Minmax, 0.0, 1.0).unwrap();
        assert_eq!((st.w_min, st.w_max), (Some(2.0), Some(8.0)));
        assert_eq!(st.apply(&ev(&g, 2)).unwrap(), 0.5);
        assert_eq!(st.invert(0.5, 0, 1).unwrap(), 5.0);
        // out-of-range test weight clamps to b
        assert_eq!(st.apply(&ev(&g, 3)).unwrap(), 1.0);
        assert_eq!(st.apply(&ev(&g, 0)).unwrap(), 0.0);
        assert_eq!(st.apply(&ev(&g, 1)).unwrap(), 1.0);
    }

    #[test]
    fn minmax_degenerate_range() {
        let (g, s) = graph(&[("0", "1", 0, 3.0), ("1", "2", 0, 3.0), ("0", "1", 1, 5.0), ("0", "1", 2, 5.0)]);
        assert!(matches!(
            NormalizerState::fit(&g, &s, NormMethod::Minmax, 0.0, 1.0),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn log_identity_and_no_range() {
        let (g, s) = graph(&[("0", "1", 0, 1.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)]);
        let st = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        assert_eq!(st.w_min, None);
        assert_eq!(st.w_max, None);
        assert_eq!(st.apply(&ev(&g, 0)).unwrap(), 0.0);
        assert_eq!(st.invert(0.0, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn log_rejects_non_positive() {
        let (g, s) = graph(&[("0", "1", 0, 1.0), ("0", "1", 1, 1.0), ("0", "1", 2, 1.0)]);
        let st = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        let mut e = ev(&g, 0);
        e.weight = 0.0;
        assert!(matches!(st.apply(&e), Err(Error::LogDomain(_))));
    }

    #[test]
    fn node_degree_shares() {
        let (g, s) = graph(&[
            ("0", "1", 0, 2.0),
            ("0", "2", 0, 3.0),
            ("0", "3", 0, 5.0),
            ("0", "1", 1, 1.0),
            ("0", "1", 2, 4.0),
            ("0", "2", 2, 4.0),
        ]);
        let st = NormalizerState::fit(&g, &s, NormMethod::NodeDegree, 0.0, 1.0).unwrap();
        assert_eq!(st.degree_sums[&(0, 0)], 10.0);
        let shares: Vec<f64> = (0..3).map(|i| st.apply(&ev(&g, i)).unwrap()).collect();
        assert_eq!(shares, vec![0.2, 0.3, 0.5]);
        assert_eq!(st.invert(0.2, 0, 0).unwrap(), 2.0);
        // test snapshot needs the graph fallback
        let test_ev = ev(&g, 4);
        assert!(matches!(st.apply(&test_ev), Err(Error::MissingDegreeSum { .. })));
        assert_eq!(st.apply_in(&g, &test_ev).unwrap(), 0.5);
        assert_eq!(st.invert_in(&g, 0.5, 0, 2).unwrap(), 4.0);
    }

    #[test]
    fn json_round_trip_regenerates_sums() {
        let (g, s) = graph(&[("0", "1", 0, 2.0), ("0", "2", 0, 3.0), ("0", "1", 1, 1.0), ("0", "1", 2, 4.0)]);
        let st = NormalizerState::fit(&g, &s, NormMethod::NodeDegree, 0.0, 1.0).unwrap();
        let back = NormalizerState::from_json(&st.to_json().unwrap(), &g, &s).unwrap();
        assert_eq!(back, st);
    }
}
