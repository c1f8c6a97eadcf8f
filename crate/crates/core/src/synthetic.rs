//! Seeded synthetic edge streams for property tests and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::edge_stream::{NodeId, TemporalGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Each pair keeps one weight for every snapshot.
    Constant,
    /// `w0 + slope · t` per pair.
    LinearTrend,
    /// Multiplicative log-normal walk per pair.
    RandomWalk,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(SyntheticKind::Constant),
            "linear_trend" | "linear" => Ok(SyntheticKind::LinearTrend),
            "random_walk" | "walk" => Ok(SyntheticKind::RandomWalk),
            other => Err(Error::Config(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

pub fn linear_trend_weight(w0: f64, slope: f64, t: u64) -> f64 {
    w0 + slope * t as f64
}

const WALK_SIGMA: f64 = 0.1;

/// Node labels are `"0".."nodes-1"` and are registered in that order, so
/// dense ids equal labels. `density` is the fraction of directed non-self
/// pairs that carry an edge in every snapshot.
pub fn generate_synthetic(
    kind: SyntheticKind,
    nodes: usize,
    timestamps: usize,
    density: f64,
    seed: u64,
) -> Result<TemporalGraph> {
    if nodes < 2 {
        return Err(Error::Config(format!("need at least 2 nodes, got {nodes}")));
    }
    if timestamps < 3 {
        return Err(Error::Config(format!("need at least 3 timestamps, got {timestamps}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density {density} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = nodes * (nodes - 1);
    let k = ((density * total as f64).round() as usize).clamp(1, total);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, total, k).into_vec();
    chosen.sort_unstable();
    let pairs: Vec<(NodeId, NodeId)> = chosen
        .into_iter()
        .map(|i| {
            let u = i / (nodes - 1);
            let r = i % (nodes - 1);
            let v = if r < u { r } else { r + 1 };
            (u as NodeId, v as NodeId)
        })
        .collect();

    // per-pair weight series, generated pair by pair for seed stability
    let series: Vec<Vec<f64>> = pairs
        .iter()
        .map(|_| {
            let base = 10f64.powf(rng.random_range(0.0..4.0));
            match kind {
                SyntheticKind::Constant => vec![base; timestamps],
                SyntheticKind::LinearTrend => {
                    let w0 = rng.random_range(1.0..100.0);
                    let slope = rng.random_range(0.5..10.0);
                    (0..timestamps as u64).map(|t| linear_trend_weight(w0, slope, t)).collect()
                }
                SyntheticKind::RandomWalk => {
                    let mut w = base;
                    (0..timestamps)
                        .map(|_| {
                            let current = w;
                            let z: f64 = rng.sample(StandardNormal);
                            w *= (WALK_SIGMA * z).exp();
                            current
                        })
                        .collect()
                }
            }
        })
        .collect();

    let labels: Vec<String> = (0..nodes).map(|i| i.to_string()).collect();
    let mut rows = Vec::with_capacity(pairs.len() * timestamps);
    for t in 0..timestamps {
        for (p, &(u, v)) in pairs.iter().enumerate() {
            rows.push((labels[u as usize].as_str(), labels[v as usize].as_str(), t as u64, series[p][t]));
        }
    }
    TemporalGraph::from_rows_with_nodes(&labels, rows)
}
