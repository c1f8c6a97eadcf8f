//! Timestamped weighted edge streams: ingestion, indexing and chronological splits.
//!
//! Node labels are re-indexed densely in order of first appearance in the
//! chronologically sorted stream, and raw timestamp values are re-indexed to
//! dense snapshot indices `0..T`. Both original forms are kept in the graph so
//! that serialization reproduces the input.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node identifier assigned at ingestion.
pub type NodeId = u32;
/// Dense snapshot index; position of the raw timestamp in the sorted distinct list.
pub type Snapshot = u32;

/// One observed directed edge with a strictly positive weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub source: NodeId,
    pub destination: NodeId,
    pub timestamp: Snapshot,
    pub weight: f64,
}

impl EdgeEvent {
    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.source, self.destination)
    }

    pub fn is_self_loop(&self) -> bool {
        self.source == self.destination
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// `source,destination,timestamp,weight`
    Generic,
    /// Header starting with `u,i,ts`; weight is the first feature column.
    Dgb,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(InputFormat::Generic),
            "dgb" => Ok(InputFormat::Dgb),
            other => Err(Error::Config(format!("unknown input format '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRegistry {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, NodeId>,
}

impl NodeRegistry {
    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as NodeId))
            .collect();
        NodeRegistry { labels, index }
    }

    fn intern(&mut self, label: &str) -> NodeId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as NodeId;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id as usize]
    }

    pub fn id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub events: usize,
    pub timestamps: usize,
    pub self_loops: usize,
}

/// Chronologically ordered, immutable event sequence.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    events: Vec<EdgeEvent>,
    nodes: NodeRegistry,
    timestamps: Vec<u64>,
    /// `offsets[t]..offsets[t + 1]` are the events of snapshot `t`.
    offsets: Vec<usize>,
    lookup: HashMap<(NodeId, NodeId, Snapshot), usize>,
    out_sums: HashMap<(NodeId, Snapshot), f64>,
    first_seen: Vec<Option<Snapshot>>,
}

impl TemporalGraph {
    fn assemble(nodes: NodeRegistry, timestamps: Vec<u64>, events: Vec<EdgeEvent>) -> Self {
        let t_count = timestamps.len();
        let mut offsets = vec![0usize; t_count + 1];
        for e in &events {
            offsets[e.timestamp as usize + 1] += 1;
        }
        for t in 0..t_count {
            offsets[t + 1] += offsets[t];
        }
        let mut lookup = HashMap::with_capacity(events.len());
        let mut out_sums: HashMap<(NodeId, Snapshot), f64> = HashMap::new();
        let mut first_seen = vec![None; nodes.len()];
        for (i, e) in events.iter().enumerate() {
            lookup.insert((e.source, e.destination, e.timestamp), i);
            *out_sums.entry((e.source, e.timestamp)).or_insert(0.0) += e.weight;
            for n in [e.source, e.destination] {
                let slot: &mut Option<Snapshot> = &mut first_seen[n as usize];
                if slot.is_none() {
                    *slot = Some(e.timestamp);
                }
            }
        }
        TemporalGraph {
            events,
            nodes,
            timestamps,
            offsets,
            lookup,
            out_sums,
            first_seen,
        }
    }

    /// Builds a graph from labelled rows. Rows may be in any order; the
    /// result is stably sorted by timestamp.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, u64, f64)>,
        S: AsRef<str>,
    {
        let mut builder = GraphBuilder::default();
        for (line, (s, d, t, w)) in rows.into_iter().enumerate() {
            builder.push(s.as_ref(), d.as_ref(), t, w, line as u64 + 1)?;
        }
        builder.build()
    }

    /// Like [`from_rows`](Self::from_rows) but every label in `labels` is
    /// registered up front, in order, even if it never appears in an event.
    pub fn from_rows_with_nodes<I, S>(labels: &[String], rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, u64, f64)>,
        S: AsRef<str>,
    {
        let mut builder = GraphBuilder {
            preregistered: labels.to_vec(),
            ..GraphBuilder::default()
        };
        for (line, (s, d, t, w)) in rows.into_iter().enumerate() {
            builder.push(s.as_ref(), d.as_ref(), t, w, line as u64 + 1)?;
        }
        builder.build()
    }

    /// Same registry and timestamp list, restricted to the events kept by `keep`.
    pub fn filter_events(&self, mut keep: impl FnMut(&EdgeEvent) -> bool) -> Self {
        let events = self.events.iter().filter(|e| keep(e)).copied().collect();
        Self::assemble(self.nodes.clone(), self.timestamps.clone(), events)
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn nodes(&self) -> &NodeRegistry {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Raw timestamp values; index is the snapshot.
    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn snapshot_count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn snapshot_events(&self, t: Snapshot) -> &[EdgeEvent] {
        let t = t as usize;
        &self.events[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn events_in(&self, snapshots: Range<Snapshot>) -> &[EdgeEvent] {
        if snapshots.start >= snapshots.end {
            return &[];
        }
        &self.events[self.offsets[snapshots.start as usize]..self.offsets[snapshots.end as usize]]
    }

    pub fn weight(&self, source: NodeId, destination: NodeId, t: Snapshot) -> Option<f64> {
        self.lookup
            .get(&(source, destination, t))
            .map(|&i| self.events[i].weight)
    }

    pub fn contains(&self, source: NodeId, destination: NodeId, t: Snapshot) -> bool {
        self.lookup.contains_key(&(source, destination, t))
    }

    /// Sum of raw outgoing weights of `source` within snapshot `t`.
    pub fn out_weight_sum(&self, source: NodeId, t: Snapshot) -> Option<f64> {
        self.out_sums.get(&(source, t)).copied()
    }

    /// Nodes incident to at least one event at or before snapshot `t`, ascending.
    pub fn nodes_seen_through(&self, t: Snapshot) -> Vec<NodeId> {
        self.first_seen
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, Some(s) if *s <= t))
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.nodes.len(),
            events: self.events.len(),
            timestamps: self.timestamps.len(),
            self_loops: self.events.iter().filter(|e| e.is_self_loop()).count(),
        }
    }

    /// Writes the events in generic CSV form using the original labels and timestamps.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["source", "destination", "timestamp", "weight"])?;
        for e in &self.events {
            w.write_record([
                self.nodes.label(e.source),
                self.nodes.label(e.destination),
                &self.timestamps[e.timestamp as usize].to_string(),
                &format!("{:?}", e.weight),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Writes `<stem>.csv` plus a `<stem>.json` sidecar holding the node-label
    /// mapping and (optionally) split boundaries.
    pub fn save(&self, csv_path: &Path, split: Option<&SplitSpec>) -> Result<()> {
        let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(BufWriter::new(file))?;
        let sidecar = GraphSidecar {
            nodes: self.nodes.labels().to_vec(),
            timestamps: self.timestamps.clone(),
            stats: self.stats(),
            split: split.cloned(),
        };
        let side_path = csv_path.with_extension("json");
        let file = File::create(&side_path).map_err(|e| Error::io(&side_path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &sidecar)?;
        Ok(())
    }
}

/// JSON companion written next to a serialized graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub nodes: Vec<String>,
    pub timestamps: Vec<u64>,
    pub stats: GraphStats,
    pub split: Option<SplitSpec>,
}

#[derive(Default)]
struct GraphBuilder {
    preregistered: Vec<String>,
    rows: Vec<RawRow>,
    seen: HashMap<(String, String, u64), u64>,
}

struct RawRow {
    source: String,
    destination: String,
    timestamp: u64,
    weight: f64,
}

impl GraphBuilder {
    fn push(&mut self, source: &str, destination: &str, timestamp: u64, weight: f64, line: u64) -> Result<()> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::Value(format!(
                "line {line}: weight must be positive and finite, got {weight}"
            )));
        }
        let key = (source.to_string(), destination.to_string(), timestamp);
        if self.seen.insert(key, line).is_some() {
            return Err(Error::DuplicateEvent {
                source_label: source.to_string(),
                destination_label: destination.to_string(),
                timestamp,
                line,
            });
        }
        self.rows.push(RawRow {
            source: source.to_string(),
            destination: destination.to_string(),
            timestamp,
            weight,
        });
        Ok(())
    }

    fn build(mut self) -> Result<TemporalGraph> {
        // stable: equal timestamps keep input order
        self.rows.sort_by_key(|r| r.timestamp);
        let mut timestamps: Vec<u64> = self.rows.iter().map(|r| r.timestamp).collect();
        timestamps.dedup();

        let mut nodes = NodeRegistry::from_labels(self.preregistered);
        let mut events = Vec::with_capacity(self.rows.len());
        let mut snapshot = 0usize;
        for r in &self.rows {
            while timestamps[snapshot] != r.timestamp {
                snapshot += 1;
            }
            let source = nodes.intern(&r.source);
            let destination = nodes.intern(&r.destination);
            events.push(EdgeEvent {
                source,
                destination,
                timestamp: snapshot as Snapshot,
                weight: r.weight,
            });
        }
        Ok(TemporalGraph::assemble(nodes, timestamps, events))
    }
}

fn parse_timestamp(field: &str, line: u64) -> Result<u64> {
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(Error::Parse {
            line,
            message: format!("timestamp '{field}' is not a non-negative integer"),
        }),
    }
}

fn parse_weight(field: &str, line: u64) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("weight '{field}' is not numeric"),
    })
}

/// Column layout resolved from the header.
struct Layout {
    source: usize,
    destination: usize,
    timestamp: usize,
    weight: usize,
    arity: usize,
}

fn resolve_layout(header: &csv::StringRecord, format: InputFormat) -> Result<Layout> {
    let fields: Vec<&str> = header.iter().map(str::trim).collect();
    let bad = |msg: String| Error::Parse { line: 1, message: msg };
    match format {
        InputFormat::Generic => {
            if fields != ["source", "destination", "timestamp", "weight"] {
                return Err(bad(format!(
                    "expected header 'source,destination,timestamp,weight', got '{}'",
                    fields.join(",")
                )));
            }
            Ok(Layout {
                source: 0,
                destination: 1,
                timestamp: 2,
                weight: 3,
                arity: 4,
            })
        }
        InputFormat::Dgb => {
            // an unnamed leading index column is tolerated
            let start = usize::from(fields.first() == Some(&""));
            if fields.len() < start + 4 || fields[start..start + 3] != ["u", "i", "ts"] {
                return Err(bad(format!(
                    "expected header beginning 'u,i,ts' followed by a feature column, got '{}'",
                    fields.join(",")
                )));
            }
            let mut weight = start + 3;
            if fields[weight] == "label" {
                weight += 1;
            }
            if weight >= fields.len() {
                return Err(bad("no feature column after 'ts'".into()));
            }
            Ok(Layout {
                source: start,
                destination: start + 1,
                timestamp: start + 2,
                weight,
                arity: fields.len(),
            })
        }
    }
}

/// Reads an edge stream from any reader.
pub fn ingest_reader<R: Read>(reader: R, format: InputFormat) -> Result<TemporalGraph> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let layout = resolve_layout(&header, format)?;
    let mut builder = GraphBuilder::default();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != layout.arity {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", layout.arity, record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[layout.timestamp], line)?;
        let weight = parse_weight(&record[layout.weight], line)?;
        if matches!(format, InputFormat::Dgb) {
            for col in [layout.source, layout.destination] {
                if record[col].parse::<u64>().is_err() {
                    return Err(Error::Parse {
                        line,
                        message: format!("node id '{}' is not a non-negative integer", &record[col]),
                    });
                }
            }
        }
        builder.push(
            &record[layout.source],
            &record[layout.destination],
            timestamp,
            weight,
            line,
        )?;
    }
    let graph = builder.build()?;
    let s = graph.stats();
    log::info!(
        "ingested {} events, {} nodes, {} timestamps ({} self-loops)",
        s.events,
        s.nodes,
        s.timestamps,
        s.self_loops
    );
    Ok(graph)
}

pub fn ingest_csv(path: impl AsRef<Path>, format: InputFormat) -> Result<TemporalGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::new(file), format)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    ByTimestampCount,
    ByFraction,
}

/// Requested split, in distinct-timestamp counts or fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SplitRequest {
    Counts { train: usize, val: usize, test: usize },
    Fractions { train: f64, val: f64, test: f64 },
}

impl SplitRequest {
    /// Train 22, validation 6, test 4 distinct timestamps.
    pub const UN_TRADE: SplitRequest = SplitRequest::Counts {
        train: 22,
        val: 6,
        test: 4,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Train,
    Val,
    Test,
}

/// Chronological split over snapshot indices, plus the masked "new" node set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_timestamps: usize,
    pub val_timestamps: usize,
    pub test_timestamps: usize,
    pub boundary_policy: BoundaryPolicy,
    pub new_node_set: BTreeSet<NodeId>,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train_timestamps + self.val_timestamps + self.test_timestamps
    }

    pub fn range(&self, region: Region) -> Range<Snapshot> {
        let p = self.train_timestamps as Snapshot;
        let v = self.val_timestamps as Snapshot;
        let q = self.test_timestamps as Snapshot;
        match region {
            Region::Train => 0..p,
            Region::Val => p..p + v,
            Region::Test => p + v..p + v + q,
        }
    }

    pub fn train(&self) -> Range<Snapshot> {
        self.range(Region::Train)
    }

    pub fn val(&self) -> Range<Snapshot> {
        self.range(Region::Val)
    }

    pub fn test(&self) -> Range<Snapshot> {
        self.range(Region::Test)
    }

    pub fn region_of(&self, t: Snapshot) -> Option<Region> {
        [Region::Train, Region::Val, Region::Test]
            .into_iter()
            .find(|r| self.range(*r).contains(&t))
    }

    pub fn is_new(&self, node: NodeId) -> bool {
        self.new_node_set.contains(&node)
    }
}

/// Floor each fraction of `total`, then hand the leftover to train.
pub fn fraction_counts(total: usize, train: f64, val: f64, test: f64) -> Result<(usize, usize, usize)> {
    for f in [train, val, test] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Split(format!("fraction {f} outside [0, 1]")));
        }
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "fractions sum to {}, expected 1",
            train + val + test
        )));
    }
    // the epsilon absorbs representation error such as 0.7 * 10 = 6.9999...
    let floor = |f: f64| ((f * total as f64) + 1e-9).floor() as usize;
    let (v, q) = (floor(val), floor(test));
    let p = total - v - q;
    Ok((p, v, q))
}

pub fn chronological_split(graph: &TemporalGraph, request: SplitRequest) -> Result<SplitSpec> {
    let total = graph.snapshot_count();
    if graph.is_empty() {
        return Err(Error::Split("graph has no events".into()));
    }
    if total < 3 {
        return Err(Error::Split(format!(
            "need at least 3 distinct timestamps, found {total}"
        )));
    }
    let (p, v, q, policy) = match request {
        SplitRequest::Counts { train, val, test } => {
            if train + val + test != total {
                return Err(Error::Split(format!(
                    "counts {train}+{val}+{test} do not sum to {total} timestamps"
                )));
            }
            (train, val, test, BoundaryPolicy::ByTimestampCount)
        }
        SplitRequest::Fractions { train, val, test } => {
            let (p, v, q) = fraction_counts(total, train, val, test)?;
            (p, v, q, BoundaryPolicy::ByFraction)
        }
    };
    if p == 0 || q == 0 {
        return Err(Error::Split(format!(
            "train ({p}) and test ({q}) must each hold at least one timestamp"
        )));
    }
    Ok(SplitSpec {
        train_timestamps: p,
        val_timestamps: v,
        test_timestamps: q,
        boundary_policy: policy,
        new_node_set: BTreeSet::new(),
    })
}

/// Designates `⌈fraction · |nodes|⌉` random nodes as new and removes every
/// training event incident to them.
pub fn mask_new_nodes(
    graph: &TemporalGraph,
    split: &SplitSpec,
    fraction: f64,
    seed: u64,
) -> Result<(TemporalGraph, SplitSpec)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Mask(format!("fraction {fraction} outside [0, 1]")));
    }
    let n = graph.node_count();
    if fraction == 0.0 {
        let mut s = split.clone();
        s.new_node_set.clear();
        return Ok((graph.clone(), s));
    }
    if fraction * (n as f64) < 1.0 {
        return Err(Error::Mask(format!(
            "fraction {fraction} of {n} nodes selects less than one node"
        )));
    }
    let k = ((fraction * n as f64) - 1e-9).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<NodeId> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| i as NodeId)
        .collect();

    let train = split.train();
    let masked = graph.filter_events(|e| {
        !(train.contains(&e.timestamp)
            && (chosen.contains(&e.source) || chosen.contains(&e.destination)))
    });
    if masked.events_in(train).is_empty() {
        return Err(Error::Mask("masking removed every training event".into()));
    }
    let mut s = split.clone();
    s.new_node_set = chosen;
    Ok((masked, s))
}
