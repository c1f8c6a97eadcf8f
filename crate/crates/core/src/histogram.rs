//! Edge-weight histograms written as CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::edge_stream::TemporalGraph;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistScale {
    Linear,
    /// One bin per decade `[10^k, 10^{k+1})`.
    Log,
}

impl std::str::FromStr for HistScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HistScale::Linear),
            "log" => Ok(HistScale::Log),
            other => Err(Error::Config(format!("unknown histogram scale '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lower: f64,
    pub count: usize,
}

fn floor_decade(w: f64) -> i32 {
    let mut k = w.log10().floor() as i32;
    if 10f64.powi(k + 1) <= w {
        k += 1;
    }
    if 10f64.powi(k) > w {
        k -= 1;
    }
    k
}

/// `bins` is ignored on the log scale.
pub fn histogram(graph: &TemporalGraph, bins: usize, scale: HistScale) -> Result<Vec<HistBin>> {
    let weights: Vec<f64> = graph.events().iter().map(|e| e.weight).collect();
    if weights.is_empty() {
        return Err(Error::Empty("graph has no events".into()));
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match scale {
        HistScale::Linear => {
            if bins == 0 {
                return Err(Error::Value("bins must be >= 1".into()));
            }
            let width = (hi - lo) / bins as f64;
            let mut out: Vec<HistBin> = (0..bins)
                .map(|i| HistBin {
                    lower: lo + i as f64 * width,
                    count: 0,
                })
                .collect();
            for w in weights {
                let idx = if width > 0.0 {
                    (((w - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                };
                out[idx].count += 1;
            }
            Ok(out)
        }
        HistScale::Log => {
            let (kmin, kmax) = (floor_decade(lo), floor_decade(hi));
            let mut out: Vec<HistBin> = (kmin..=kmax)
                .map(|k| HistBin {
                    lower: 10f64.powi(k),
                    count: 0,
                })
                .collect();
            for w in weights {
                out[(floor_decade(w) - kmin) as usize].count += 1;
            }
            Ok(out)
        }
    }
}

pub fn write_histogram_csv<W: Write>(bins: &[HistBin], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["lower", "count"])?;
    for b in bins {
        w.write_record([format!("{:?}", b.lower), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn emit_histogram(
    graph: &TemporalGraph,
    bins: usize,
    scale: HistScale,
    path: &std::path::Path,
) -> Result<Vec<HistBin>> {
    let h = histogram(graph, bins, scale)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_histogram_csv(&h, std::io::BufWriter::new(file))?;
    Ok(h)
}
