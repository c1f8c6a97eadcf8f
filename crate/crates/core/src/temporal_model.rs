//! A small trainable temporal regressor.
//!
//! Every node owns a learned embedding `e_v` and a gradient-free memory `m_v`.
//! The effective representation at snapshot `t` is
//! `z_v(t) = e_v + decay^(t - last_v) · m_v`, where `last_v` is the snapshot of
//! the node's latest memory update, and an edge is scored as
//! `softplus(z_s · z_d + b_s + b_d + c)`.
//!
//! After each snapshot, every node touched by a positive event moves its memory
//! toward the weighted average of its neighbours' representations (weights are
//! the absolute normalized edge values):
//! `m_v ← decay · m_v(t) + (1 − decay) · avg`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::edge_stream::{NodeId, Snapshot, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};
use crate::metrics::{bucketize, BucketSpec, EdgePredictor};
use crate::normalization::NormalizerState;
use crate::sampling::{Sample, SampleSet, TrainingStrategy};

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    /// Row-major `nodes × dim`.
    pub embeddings: Vec<f64>,
    pub node_bias: Vec<f64>,
    pub global_bias: f64,
    pub decay: f64,
}

impl ModelParams {
    pub fn zeros(nodes: usize, dim: usize, decay: f64) -> Self {
        ModelParams {
            dim,
            embeddings: vec![0.0; nodes * dim],
            node_bias: vec![0.0; nodes],
            global_bias: 0.0,
            decay,
        }
    }

    pub fn random<R: Rng>(nodes: usize, dim: usize, decay: f64, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(nodes, dim, decay);
        for v in &mut p.embeddings {
            let z: f64 = rng.sample(StandardNormal);
            *v = scale * z;
        }
        p
    }

    pub fn node_count(&self) -> usize {
        self.node_bias.len()
    }

    pub fn embedding(&self, v: NodeId) -> &[f64] {
        let v = v as usize;
        &self.embeddings[v * self.dim..(v + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Value("embedding dimension must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Value(format!("decay {} outside [0, 1]", self.decay)));
        }
        if self.embeddings.len() != self.node_count() * self.dim {
            return Err(Error::Value("embedding table has the wrong size".into()));
        }
        let finite = self.embeddings.iter().chain(&self.node_bias).all(|v| v.is_finite())
            && self.global_bias.is_finite();
        if !finite {
            return Err(Error::Value("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Number of trainable scalars (embeddings, node biases, global bias).
    pub fn trainable_len(&self) -> usize {
        self.embeddings.len() + self.node_bias.len() + 1
    }

    fn trainable_mut(&mut self, i: usize) -> &mut f64 {
        let e = self.embeddings.len();
        let b = self.node_bias.len();
        if i < e {
            &mut self.embeddings[i]
        } else if i < e + b {
            &mut self.node_bias[i - e]
        } else {
            &mut self.global_bias
        }
    }
}

/// Gradient-free per-node memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    dim: usize,
    state: Vec<f64>,
    last_update: Vec<Option<Snapshot>>,
}

impl Memory {
    pub fn new(nodes: usize, dim: usize) -> Self {
        Memory {
            dim,
            state: vec![0.0; nodes * dim],
            last_update: vec![None; nodes],
        }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|v| *v = 0.0);
        self.last_update.iter_mut().for_each(|v| *v = None);
    }

    pub fn last_update(&self, v: NodeId) -> Option<Snapshot> {
        self.last_update[v as usize]
    }

    fn factor(&self, v: NodeId, t: Snapshot, decay: f64) -> f64 {
        match self.last_update[v as usize] {
            Some(last) if t > last => decay.powi((t - last) as i32),
            _ => 1.0,
        }
    }

    pub fn slot(&self, v: NodeId) -> &[f64] {
        let v = v as usize;
        &self.state[v * self.dim..(v + 1) * self.dim]
    }

    /// Folds snapshot `t`'s positive edges `(source, destination, normalized value)` into memory.
    pub fn update<I>(&mut self, params: &ModelParams, t: Snapshot, edges: I)
    where
        I: IntoIterator<Item = (NodeId, NodeId, f64)>,
    {
        let decay = params.decay;
        let dim = self.dim;
        let mut acc: std::collections::BTreeMap<NodeId, (Vec<f64>, f64)> = Default::default();
        for (s, d, value) in edges {
            let alpha = value.abs();
            for (me, other) in [(s, d), (d, s)] {
                let z = effective(params, self, other, t);
                let entry = acc.entry(me).or_insert_with(|| (vec![0.0; dim], 0.0));
                for (a, zi) in entry.0.iter_mut().zip(&z) {
                    *a += alpha * zi;
                }
                entry.1 += alpha;
            }
        }
        for (v, (sum, total)) in acc {
            let f = self.factor(v, t, decay);
            let base = v as usize * dim;
            for i in 0..dim {
                let target = if total > 0.0 { sum[i] / total } else { 0.0 };
                let current = f * self.state[base + i];
                self.state[base + i] = decay * current + (1.0 - decay) * target;
            }
            self.last_update[v as usize] = Some(t);
        }
    }
}

/// `z_v(t) = e_v + decay^(t − last_v) · m_v`
pub fn effective(params: &ModelParams, memory: &Memory, v: NodeId, t: Snapshot) -> Vec<f64> {
    let f = memory.factor(v, t, params.decay);
    params
        .embedding(v)
        .iter()
        .zip(memory.slot(v))
        .map(|(e, m)| e + f * m)
        .collect()
}

fn pre_activation(params: &ModelParams, zs: &[f64], zd: &[f64], s: NodeId, d: NodeId) -> f64 {
    let dot: f64 = zs.iter().zip(zd).map(|(a, b)| a * b).sum();
    dot + params.node_bias[s as usize] + params.node_bias[d as usize] + params.global_bias
}

pub fn predict(params: &ModelParams, memory: &Memory, source: NodeId, destination: NodeId, t: Snapshot) -> f64 {
    let zs = effective(params, memory, source, t);
    let zd = effective(params, memory, destination, t);
    softplus(pre_activation(params, &zs, &zd, source, destination))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embeddings: Vec<f64>,
    pub node_bias: Vec<f64>,
    pub global_bias: f64,
}

impl Gradients {
    fn zeros(params: &ModelParams) -> Self {
        Gradients {
            embeddings: vec![0.0; params.embeddings.len()],
            node_bias: vec![0.0; params.node_bias.len()],
            global_bias: 0.0,
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        let e = self.embeddings.len();
        let b = self.node_bias.len();
        if i < e {
            self.embeddings[i]
        } else if i < e + b {
            self.node_bias[i - e]
        } else {
            self.global_bias
        }
    }
}

/// Mean squared error of the batch.
pub fn batch_loss(params: &ModelParams, memory: &Memory, batch: &[Sample]) -> f64 {
    let sum: f64 = batch
        .iter()
        .map(|s| {
            let r = predict(params, memory, s.source, s.destination, s.timestamp) - s.target;
            r * r
        })
        .sum();
    sum / batch.len() as f64
}

/// Loss and analytic gradient of the batch MSE with respect to the trainable
/// parameters. Memory is treated as a constant.
pub fn batch_gradients(params: &ModelParams, memory: &Memory, batch: &[Sample]) -> (f64, Gradients) {
    let mut g = Gradients::zeros(params);
    let n = batch.len() as f64;
    let dim = params.dim;
    let mut loss = 0.0;
    for s in batch {
        let zs = effective(params, memory, s.source, s.timestamp);
        let zd = effective(params, memory, s.destination, s.timestamp);
        let x = pre_activation(params, &zs, &zd, s.source, s.destination);
        let r = softplus(x) - s.target;
        loss += r * r;
        let dx = 2.0 * r * sigmoid(x) / n;
        let (si, di) = (s.source as usize * dim, s.destination as usize * dim);
        for k in 0..dim {
            g.embeddings[si + k] += dx * zd[k];
            g.embeddings[di + k] += dx * zs[k];
        }
        g.node_bias[s.source as usize] += dx;
        g.node_bias[s.destination as usize] += dx;
        g.global_bias += dx;
    }
    (loss / n, g)
}

/// Max relative error between analytic gradients and central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` over every trainable parameter.
pub fn check_gradients(params: &ModelParams, memory: &Memory, batch: &[Sample], epsilon: f64) -> f64 {
    let (_, analytic) = batch_gradients(params, memory, batch);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.trainable_len() {
        let original = *probe.trainable_mut(i);
        *probe.trainable_mut(i) = original + epsilon;
        let up = batch_loss(&probe, memory, batch);
        *probe.trainable_mut(i) = original - epsilon;
        let down = batch_loss(&probe, memory, batch);
        *probe.trainable_mut(i) = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.get(i);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub strategy: TrainingStrategy,
    pub dim: usize,
    pub decay: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 200,
            max_epochs: 50,
            patience: 5,
            seeds: vec![0, 1, 2],
            strategy: TrainingStrategy::PositiveOnly,
            dim: 16,
            decay: 0.9,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.dim == 0 {
            return Err(Error::Config("batch_size, patience and dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay {} outside [0, 1]", self.decay)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochTrace>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Parameters plus the memory state they are evaluated with.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalModel {
    pub params: ModelParams,
    pub memory: Memory,
}

impl TemporalModel {
    pub fn new(params: ModelParams) -> Self {
        let memory = Memory::new(params.node_count(), params.dim);
        TemporalModel { params, memory }
    }

    pub fn predict(&self, source: NodeId, destination: NodeId, t: Snapshot) -> f64 {
        predict(&self.params, &self.memory, source, destination, t)
    }

    /// Memory update from the graph's positive events at `t`.
    pub fn observe_snapshot(&mut self, graph: &TemporalGraph, t: Snapshot, normalizer: &NormalizerState) -> Result<()> {
        let edges = graph
            .snapshot_events(t)
            .iter()
            .map(|e| Ok((e.source, e.destination, normalizer.apply_in(graph, e)?)))
            .collect::<Result<Vec<_>>>()?;
        self.memory.update(&self.params, t, edges);
        Ok(())
    }

    /// Resets memory and replays every snapshot before `until`.
    pub fn replay(&mut self, graph: &TemporalGraph, until: Snapshot, normalizer: &NormalizerState) -> Result<()> {
        self.memory.reset();
        for t in 0..until {
            self.observe_snapshot(graph, t, normalizer)?;
        }
        Ok(())
    }

    /// Regression output inverted to raw units, then bucketed.
    pub fn classify_head(
        &self,
        graph: &TemporalGraph,
        sample: &Sample,
        normalizer: &NormalizerState,
        buckets: &BucketSpec,
    ) -> Result<usize> {
        let value = self.predict(sample.source, sample.destination, sample.timestamp);
        classify_value(graph, value, sample, normalizer, buckets)
    }
}

fn classify_value(
    graph: &TemporalGraph,
    value: f64,
    sample: &Sample,
    normalizer: &NormalizerState,
    buckets: &BucketSpec,
) -> Result<usize> {
    let raw = normalizer.invert_in(graph, value, sample.source, sample.timestamp)?;
    bucketize(raw.max(0.0), buckets)
}

fn validation_mse(
    model: &mut TemporalModel,
    graph: &TemporalGraph,
    split: &SplitSpec,
    normalizer: &NormalizerState,
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in split.val() {
        for e in graph.snapshot_events(t) {
            let r = model.predict(e.source, e.destination, t) - normalizer.apply_in(graph, e)?;
            sum += r * r;
            count += 1;
        }
        model.observe_snapshot(graph, t, normalizer)?;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Chronological minibatch SGD with early stopping on validation Positive MSE.
pub fn train(
    graph: &TemporalGraph,
    split: &SplitSpec,
    samples: &SampleSet,
    normalizer: &NormalizerState,
    config: &TrainConfig,
    seed: u64,
) -> Result<(TemporalModel, TrainingTrace)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let train_range = split.train();
    if let Some(s) = samples.samples.iter().find(|s| !train_range.contains(&s.timestamp)) {
        return Err(Error::Value(format!("sample at snapshot {} lies outside the training split", s.timestamp)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::random(graph.node_count(), config.dim, config.decay, config.init_scale, &mut rng);
    let mut model = TemporalModel::new(params);
    let groups = samples.by_snapshot();

    let mut trace = TrainingTrace::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0usize;
    for epoch in 0..config.max_epochs {
        model.memory.reset();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut batch_index = 0usize;
        for (t, group) in &groups {
            let mut order: Vec<usize> = (0..group.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| group[i]).collect();
                let (loss, grad) = batch_gradients(&model.params, &model.memory, &batch);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: batch_index,
                        loss,
                    });
                }
                let lr = config.learning_rate;
                let p = &mut model.params;
                p.embeddings.iter_mut().zip(&grad.embeddings).for_each(|(w, g)| *w -= lr * g);
                p.node_bias.iter_mut().zip(&grad.node_bias).for_each(|(w, g)| *w -= lr * g);
                p.global_bias -= lr * grad.global_bias;
                loss_sum += loss * batch.len() as f64;
                seen += batch.len();
                batch_index += 1;
            }
            let positives = group
                .iter()
                .filter(|s| s.is_positive)
                .map(|s| (s.source, s.destination, s.target));
            model.memory.update(&model.params, *t, positives);
        }
        let train_mse = loss_sum / seen as f64;
        let val_mse = validation_mse(&mut model, graph, split, normalizer)?;
        trace.epochs.push(EpochTrace {
            epoch,
            train_mse,
            val_mse,
        });
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:?}");
        if let Some(v) = val_mse {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params.clone()));
                trace.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    trace.stopped_early = true;
                    break;
                }
            }
        } else {
            trace.best_epoch = epoch;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.replay(graph, split.test().start, normalizer)?;
    Ok((model, trace))
}

/// Streams test snapshots in order: predicts each snapshot's samples, then
/// folds that snapshot's positive events into memory.
#[derive(Clone, Debug)]
pub struct TemporalPredictor {
    pub params: ModelParams,
    graph: TemporalGraph,
    normalizer: NormalizerState,
    history_end: Snapshot,
}

impl TemporalPredictor {
    pub fn new(params: ModelParams, graph: &TemporalGraph, split: &SplitSpec, normalizer: &NormalizerState) -> Self {
        TemporalPredictor {
            params,
            graph: graph.clone(),
            normalizer: normalizer.clone(),
            history_end: split.test().start,
        }
    }

    fn stream(&self, samples: &[Sample]) -> Result<(TemporalModel, Vec<f64>)> {
        let mut model = TemporalModel::new(self.params.clone());
        model.replay(&self.graph, self.history_end, &self.normalizer)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by_key(|&i| samples[i].timestamp);
        let mut out = vec![0.0; samples.len()];
        let mut cursor = self.history_end;
        for i in order {
            let t = samples[i].timestamp;
            if t < self.history_end {
                return Err(Error::Value(format!("sample at snapshot {t} precedes the test split")));
            }
            while cursor < t {
                model.observe_snapshot(&self.graph, cursor, &self.normalizer)?;
                cursor += 1;
            }
            out[i] = model.predict(samples[i].source, samples[i].destination, t);
        }
        Ok((model, out))
    }
}

impl EdgePredictor for TemporalPredictor {
    fn predict_values(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.stream(samples)?.1)
    }

    fn predict_classes(&self, samples: &[Sample], spec: &BucketSpec) -> Result<Vec<usize>> {
        let (_, values) = self.stream(samples)?;
        samples
            .iter()
            .zip(values)
            .map(|(s, v)| classify_value(&self.graph, v, s, &self.normalizer, spec))
            .collect()
    }
}

const MAGIC: &[u8; 4] = b"TGER";
const VERSION: u8 = 1;

/// Binary layout: `TGER`, version byte, dim (u64 LE), node count (u64 LE),
/// then f64 LE embeddings, node biases, global bias and decay.
pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(params.dim as u64).to_le_bytes())?;
    w.write_all(&(params.node_count() as u64).to_le_bytes())?;
    for v in params
        .embeddings
        .iter()
        .chain(&params.node_bias)
        .chain([&params.global_bias, &params.decay])
    {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut head = [0u8; 5];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    if head[4] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", head[4])));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        Ok(u64::from_le_bytes(word))
    };
    let dim = next_u64(&mut r)? as usize;
    let nodes = next_u64(&mut r)? as usize;
    let count = nodes
        .checked_mul(dim)
        .and_then(|v| v.checked_add(nodes + 2))
        .ok_or_else(|| bad("size overflow"))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| bad("truncated body"))?;
        values.push(f64::from_le_bytes(buf));
    }
    let decay = values.pop().unwrap();
    let global_bias = values.pop().unwrap();
    let node_bias = values.split_off(nodes * dim);
    let params = ModelParams {
        dim,
        embeddings: values,
        node_bias,
        global_bias,
        decay,
    };
    params.validate()?;
    Ok(params)
}

/// Writes `path` (binary) and `path.json` (metadata).
pub fn save_checkpoint(params: &ModelParams, path: &Path, metadata: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))?;
    let side = path.with_extension("json");
    let file = File::create(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), metadata)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
