//! The path-walking policy.
//!
//! At each step an LSTM folds the previous action and the current vertex into
//! a history vector. Three heads then score the outgoing actions:
//!
//! * a feed-forward head over history, current vertex and message,
//! * a bilinear head between each destination and the message embedding,
//! * a reader head that scores destinations by their text.
//!
//! The weighted sum of the head scores goes through a softmax.

mod beam;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{observe, ActionCandidate, ActionLabel, EnvError, EnvState, Environment, Observation};
use crate::graph::{AugmentedGraph, VertexId};
use crate::reader::{score_candidates_global, ReaderError, SpanReader};
use crate::tensor::{
    self, lstm_cell, read_checkpoint, sample_categorical, write_checkpoint, LstmWeights, ParamId, ParamRegistry, Tape,
    Tensor, TensorError, Var,
};
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error("message has no tokens")]
    EmptyMessage,
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("policy was built for {expected}, graph has {found}")]
    GraphMismatch { expected: String, found: String },
    #[error("score vectors have different lengths {0:?}")]
    LengthMismatch([usize; 3]),
    #[error("score vector contains a non-finite value")]
    NonFinite,
    #[error("forced action {index} out of range at step {step}")]
    ForcedAction { step: usize, index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Which scoring heads take part. A disabled head contributes nothing and
/// is never evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Heads {
    pub ffn: bool,
    pub bilinear: bool,
    pub reader: bool,
}

impl Default for Heads {
    fn default() -> Self {
        Self {
            ffn: true,
            bilinear: true,
            reader: true,
        }
    }
}

impl Heads {
    fn as_array(self) -> [bool; 3] {
        [self.ffn, self.bilinear, self.reader]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Embedding width `d`; the history vector has width `2d`.
    pub dim: usize,
    /// Hidden width of the feed-forward head.
    pub hidden: usize,
    /// Head weights `[ffn, bilinear, reader]`.
    pub mix: [f64; 3],
    pub train_mix: bool,
    pub heads: Heads,
    pub beam_width: usize,
    /// Vertex embeddings start uniform in `±scale/sqrt(d)`.
    pub vertex_init_scale: f64,
    /// When false the vertex table keeps its initial values.
    pub train_vertex_embeddings: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            hidden: 128,
            mix: [1.0; 3],
            train_mix: false,
            heads: Heads::default(),
            beam_width: 8,
            vertex_init_scale: 1.0,
            train_vertex_embeddings: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(PolicyError::Config(m.to_string()));
        if self.dim == 0 {
            return err("dim must be positive");
        }
        if self.hidden == 0 {
            return err("hidden must be positive");
        }
        if self.mix.iter().any(|m| !m.is_finite()) {
            return err("mix entries must be finite");
        }
        if self.beam_width == 0 {
            return err("beam_width must be at least 1");
        }
        if !(self.vertex_init_scale.is_finite() && self.vertex_init_scale >= 0.0) {
            return err("vertex_init_scale must be non-negative");
        }
        if !self.heads.as_array().iter().any(|&h| h) {
            return err("at least one head must be enabled");
        }
        Ok(())
    }
}

pub const VERTEX_EMB: &str = "vertex_emb";
pub const RELATION_EMB: &str = "relation_emb";
pub const TOKEN_EMB: &str = "token_emb";

#[derive(Clone, Copy, Debug)]
struct Ids {
    vertex: ParamId,
    relation: ParamId,
    token: ParamId,
    w_ih: ParamId,
    w_hh: ParamId,
    lstm_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    wx: ParamId,
    bx: ParamId,
    wb: ParamId,
    mix: ParamId,
}

fn param_shapes(cfg: &PolicyConfig, vertices: usize, labels: usize, vocab: usize) -> Vec<(&'static str, Vec<usize>)> {
    let (d, h) = (cfg.dim, cfg.hidden);
    vec![
        (VERTEX_EMB, vec![vertices, d]),
        (RELATION_EMB, vec![labels + 2, d]),
        (TOKEN_EMB, vec![vocab, d]),
        ("lstm.w_ih", vec![8 * d, 2 * d]),
        ("lstm.w_hh", vec![8 * d, 2 * d]),
        ("lstm.b", vec![8 * d]),
        ("ffn.w1", vec![h, 4 * d]),
        ("ffn.b1", vec![h]),
        ("ffn.w2", vec![2 * d, h]),
        ("ffn.b2", vec![2 * d]),
        ("msg.w", vec![d, d]),
        ("msg.b", vec![d]),
        ("bilinear.w", vec![d, d]),
        ("mix", vec![3]),
    ]
}

/// How actions are chosen during a rollout.
pub enum Decode<'r> {
    Sample(&'r mut dyn RngCore),
    /// Highest probability, lowest index on ties.
    Greedy,
    /// Replays the given action indices.
    Forced(&'r [usize]),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub observation: Observation,
    pub actions: Vec<ActionCandidate>,
    /// Head scores; `None` for a disabled head.
    pub ffn: Option<Vec<f64>>,
    pub bilinear: Option<Vec<f64>>,
    pub reader: Option<Vec<f64>>,
    pub distribution: Vec<f64>,
    pub chosen: usize,
    pub log_prob: f64,
}

impl TraceStep {
    pub fn action(&self) -> &ActionCandidate {
        &self.actions[self.chosen]
    }

    /// The `k` most probable actions with their probabilities, most probable
    /// first, lowest index first among equals.
    pub fn top_k(&self, k: usize) -> Vec<(ActionCandidate, f64)> {
        let mut idx: Vec<usize> = (0..self.actions.len()).collect();
        idx.sort_by(|&a, &b| self.distribution[b].total_cmp(&self.distribution[a]));
        idx.into_iter().take(k).map(|i| (self.actions[i], self.distribution[i])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub start: VertexId,
    pub steps: Vec<TraceStep>,
    pub final_vertex: VertexId,
    /// Terminal reward, when the ground truth was known.
    pub reward: Option<f64>,
}

impl EpisodeTrace {
    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }

    /// Distribution of the final step over its actions.
    pub fn final_distribution(&self) -> Option<(&[ActionCandidate], &[f64])> {
        self.steps.last().map(|s| (s.actions.as_slice(), s.distribution.as_slice()))
    }
}

/// Tape nodes of one rollout, for building a training loss.
#[derive(Clone, Debug, Default)]
pub struct EpisodeVars {
    pub log_probs: Vec<Var>,
    pub entropies: Vec<Var>,
}

/// Reader-head scores keyed by the vertex whose actions they score. Valid for
/// a single message.
#[derive(Debug, Default)]
pub struct ReaderCache(HashMap<VertexId, Vec<f64>>);

impl ReaderCache {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Learned parameters plus the vocabulary and dimensions they were built for.
#[derive(Clone, Debug)]
pub struct Policy {
    config: PolicyConfig,
    vocab: Arc<Vocab>,
    params: ParamRegistry,
    num_vertices: usize,
    num_labels: usize,
    ids: Ids,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.num_vertices == other.num_vertices
            && self.num_labels == other.num_labels
            && self.params == other.params
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    kind: String,
    config: PolicyConfig,
    vocab: Vocab,
    num_vertices: usize,
    num_labels: usize,
}

const POLICY_KIND: &str = "policy";

fn init_tensor(rng: &mut ChaCha8Rng, name: &str, shape: &[usize], cfg: &PolicyConfig) -> Tensor {
    let n: usize = shape.iter().product();
    let values = match name {
        "mix" => cfg.mix.to_vec(),
        _ if shape.len() == 1 => {
            if name == "lstm.b" {
                // Forget gate starts open.
                let hid = shape[0] / 4;
                (0..n).map(|i| if (hid..2 * hid).contains(&i) { 1.0 } else { 0.0 }).collect()
            } else {
                vec![0.0; n]
            }
        }
        VERTEX_EMB | RELATION_EMB | TOKEN_EMB => {
            let scale = if name == VERTEX_EMB { cfg.vertex_init_scale } else { 1.0 };
            let a = scale / (shape[1] as f64).sqrt();
            if a == 0.0 {
                return Tensor::zeros(shape.to_vec());
            }
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        }
        _ => {
            let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        }
    };
    Tensor::new(shape.to_vec(), values).expect("shape and values agree")
}

impl Policy {
    /// Fresh parameters for `graph` and `vocab`, initialized from `seed`.
    pub fn new(graph: &AugmentedGraph, vocab: Vocab, config: PolicyConfig, seed: u64) -> Result<Self> {
        Self::with_sizes(graph.num_vertices(), graph.num_labels(), vocab, config, seed)
    }

    pub fn with_sizes(num_vertices: usize, num_labels: usize, vocab: Vocab, config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new(seed);
        for (name, shape) in param_shapes(&config, num_vertices, num_labels, vocab.len()) {
            let t = init_tensor(&mut rng, name, &shape, &config);
            let trainable = match name {
                "mix" => config.train_mix,
                VERTEX_EMB => config.train_vertex_embeddings,
                _ => true,
            };
            params.add(name, t, trainable)?;
        }
        Self::from_registry(params, vocab, config, num_vertices, num_labels)
    }

    fn from_registry(
        params: ParamRegistry,
        vocab: Vocab,
        config: PolicyConfig,
        num_vertices: usize,
        num_labels: usize,
    ) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config, num_vertices, num_labels, vocab.len());
        if params.len() != expected.len() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        let mut found = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let id = params
                .id(name)
                .ok_or_else(|| PolicyError::Checkpoint(format!("missing parameter {name}")))?;
            if &params.tensor(id).shape != shape {
                return Err(PolicyError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.tensor(id).shape
                )));
            }
            found.push(id);
        }
        let ids = Ids {
            vertex: found[0],
            relation: found[1],
            token: found[2],
            w_ih: found[3],
            w_hh: found[4],
            lstm_b: found[5],
            w1: found[6],
            b1: found[7],
            w2: found[8],
            b2: found[9],
            wx: found[10],
            bx: found[11],
            wb: found[12],
            mix: found[13],
        };
        Ok(Self {
            config,
            vocab: Arc::new(vocab),
            params,
            num_vertices,
            num_labels,
            ids,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamRegistry {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamRegistry {
        &mut self.params
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Current head weights `[ffn, bilinear, reader]`, zero for disabled heads.
    pub fn mix(&self) -> [f64; 3] {
        let v = &self.params.tensor(self.ids.mix).values;
        let on = self.config.heads.as_array();
        [0, 1, 2].map(|k| if on[k] { v[k] } else { 0.0 })
    }

    pub fn no_op_row(&self) -> usize {
        self.num_labels
    }

    pub fn start_row(&self) -> usize {
        self.num_labels + 1
    }

    pub fn label_row(&self, label: ActionLabel) -> usize {
        match label {
            ActionLabel::NoOp => self.no_op_row(),
            ActionLabel::Edge(l) => l.index(),
        }
    }

    pub fn check_graph(&self, graph: &AugmentedGraph) -> Result<()> {
        if graph.num_vertices() != self.num_vertices || graph.num_labels() != self.num_labels {
            return Err(PolicyError::GraphMismatch {
                expected: format!("{} vertices and {} labels", self.num_vertices, self.num_labels),
                found: format!("{} vertices and {} labels", graph.num_vertices(), graph.num_labels()),
            });
        }
        Ok(())
    }

    pub fn encode_message(&self, message: &[String]) -> Result<Vec<usize>> {
        if message.is_empty() {
            return Err(PolicyError::EmptyMessage);
        }
        Ok(self.vocab.encode(message))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        };
        let meta = PolicyMeta {
            kind: POLICY_KIND.into(),
            config: self.config.clone(),
            vocab: (*self.vocab).clone(),
            num_vertices: self.num_vertices,
            num_labels: self.num_labels,
        };
        let meta = serde_json::to_value(meta).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let file = File::create(path).map_err(io)?;
        let mut out = BufWriter::new(file);
        write_checkpoint(&self.params, &meta, &mut out)?;
        std::io::Write::flush(&mut out).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck = read_checkpoint(BufReader::new(file))?;
        let meta: PolicyMeta =
            serde_json::from_value(ck.meta).map_err(|e| PolicyError::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != POLICY_KIND {
            return Err(PolicyError::Checkpoint(format!("expected a {POLICY_KIND} checkpoint, found {}", meta.kind)));
        }
        Self::from_registry(ck.registry, meta.vocab, meta.config, meta.num_vertices, meta.num_labels)
    }
}

/// Message nodes: the mean token embedding `e_x` and its projection.
#[derive(Clone, Copy, Debug)]
pub struct MessageVars {
    pub e_x: Var,
    pub e_x_new: Var,
}

/// Per-step head outputs on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub ffn: Option<Var>,
    pub bilinear: Option<Var>,
    pub logits: Var,
    pub log_probs: Var,
}

impl Policy {
    /// `e_x` = mean of token embeddings, `e_x_new = relu(W_x e_x + b_x)`.
    pub fn embed_message(&self, tape: &mut Tape<'_>, token_ids: &[usize]) -> Result<MessageVars> {
        if token_ids.is_empty() {
            return Err(PolicyError::EmptyMessage);
        }
        let ids = self.ids;
        let table = tape.param(ids.token);
        let rows = tape.embedding(table, token_ids)?;
        let e_x = tape.mean(rows);
        let w = tape.param(ids.wx);
        let b = tape.param(ids.bx);
        let proj = tape.matmul(w, e_x)?;
        let pre = tape.add(proj, b)?;
        let e_x_new = tape.relu(pre);
        Ok(MessageVars { e_x, e_x_new })
    }

    /// One LSTM step over `[relation(prev_label); vertex(current)]`.
    pub fn encode_history(
        &self,
        tape: &mut Tape<'_>,
        h_prev: Var,
        c_prev: Var,
        prev_label_row: usize,
        current: VertexId,
    ) -> Result<(Var, Var)> {
        let ids = self.ids;
        let rel = tape.param(ids.relation);
        let ver = tape.param(ids.vertex);
        let r = tape.row(rel, prev_label_row)?;
        let o = tape.row(ver, current.index())?;
        let x = tape.concat(&[r, o])?;
        let w = LstmWeights {
            w_ih: tape.param(ids.w_ih),
            w_hh: tape.param(ids.w_hh),
            bias: tape.param(ids.lstm_b),
        };
        Ok(lstm_cell(tape, x, h_prev, c_prev, &w)?)
    }

    /// `A_t (W2 relu(W1 [h; o; e_x_new] + b1) + b2)` where row `i` of `A_t`
    /// is `[relation_i; destination_i]`.
    pub fn score_ffn(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        current: VertexId,
        msg: MessageVars,
        actions: &[ActionCandidate],
    ) -> Result<Var> {
        let ids = self.ids;
        let ver = tape.param(ids.vertex);
        let rel = tape.param(ids.relation);
        let o = tape.row(ver, current.index())?;
        let x = tape.concat(&[h, o, msg.e_x_new])?;
        let w1 = tape.param(ids.w1);
        let b1 = tape.param(ids.b1);
        let w2 = tape.param(ids.w2);
        let b2 = tape.param(ids.b2);
        let z = tape.matmul(w1, x)?;
        let z = tape.add(z, b1)?;
        let z = tape.relu(z);
        let q = tape.matmul(w2, z)?;
        let q = tape.add(q, b2)?;
        let a = self.action_matrix(tape, rel, ver, actions)?;
        Ok(tape.matmul(a, q)?)
    }

    fn action_matrix(&self, tape: &mut Tape<'_>, rel: Var, ver: Var, actions: &[ActionCandidate]) -> Result<Var> {
        let label_rows: Vec<usize> = actions.iter().map(|a| self.label_row(a.label)).collect();
        let dst_rows: Vec<usize> = actions.iter().map(|a| a.dst.index()).collect();
        let r = tape.embedding(rel, &label_rows)?;
        let v = tape.embedding(ver, &dst_rows)?;
        Ok(tape.concat(&[r, v])?)
    }

    /// `V_d W_B e_x`, one entry per action destination.
    pub fn score_bilinear(&self, tape: &mut Tape<'_>, e_x: Var, actions: &[ActionCandidate]) -> Result<Var> {
        let ids = self.ids;
        let ver = tape.param(ids.vertex);
        let wb = tape.param(ids.wb);
        let dst_rows: Vec<usize> = actions.iter().map(|a| a.dst.index()).collect();
        let v = tape.embedding(ver, &dst_rows)?;
        let m = tape.matmul(wb, e_x)?;
        Ok(tape.matmul(v, m)?)
    }

    /// Runs the enabled heads and mixes them into log-probabilities.
    pub fn score_step(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        current: VertexId,
        msg: MessageVars,
        actions: &[ActionCandidate],
        reader_scores: Option<&[f64]>,
    ) -> Result<StepVars> {
        let heads = self.config.heads;
        let mix = tape.param(self.ids.mix);
        let mut terms = Vec::with_capacity(3);
        let ffn = if heads.ffn {
            let s = self.score_ffn(tape, h, current, msg, actions)?;
            terms.push((0, s));
            Some(s)
        } else {
            None
        };
        let bilinear = if heads.bilinear {
            let s = self.score_bilinear(tape, msg.e_x, actions)?;
            terms.push((1, s));
            Some(s)
        } else {
            None
        };
        if heads.reader {
            let scores = reader_scores.ok_or_else(|| PolicyError::Config("reader head enabled without a reader".into()))?;
            if scores.len() != actions.len() {
                return Err(PolicyError::LengthMismatch([actions.len(), actions.len(), scores.len()]));
            }
            let s = tape.vector(scores.to_vec());
            terms.push((2, s));
        }
        let mut logits: Option<Var> = None;
        for (k, s) in terms {
            let w = tape.pick(mix, k)?;
            let weighted = tape.scale_by(w, s)?;
            logits = Some(match logits {
                None => weighted,
                Some(acc) => tape.add(acc, weighted)?,
            });
        }
        let logits = logits.expect("config guarantees an enabled head");
        if tape.value(logits).iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        let log_probs = tape.log_softmax(logits)?;
        Ok(StepVars {
            ffn,
            bilinear,
            logits,
            log_probs,
        })
    }
}

/// `softmax(mix[0] ffn + mix[1] bilinear + mix[2] reader)` for plain score
/// vectors.
pub fn combine_scores(ffn: &[f64], bilinear: &[f64], reader: &[f64], mix: [f64; 3]) -> Result<Vec<f64>> {
    let n = ffn.len();
    if n == 0 || bilinear.len() != n || reader.len() != n {
        return Err(PolicyError::LengthMismatch([ffn.len(), bilinear.len(), reader.len()]));
    }
    let all = ffn.iter().chain(bilinear).chain(reader).chain(mix.iter());
    if all.clone().any(|x| !x.is_finite()) {
        return Err(PolicyError::NonFinite);
    }
    let logits: Vec<f64> = (0..n)
        .map(|i| mix[0] * ffn[i] + mix[1] * bilinear[i] + mix[2] * reader[i])
        .collect();
    Ok(tensor::softmax(&logits))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws from `distribution`, or takes the argmax when `rng` is `None`.
pub fn choose(distribution: &[f64], rng: Option<&mut dyn RngCore>) -> Result<usize> {
    match rng {
        Some(rng) => Ok(sample_categorical(distribution, rng)?),
        None => Ok(argmax(distribution)),
    }
}

/// A policy bound to a graph, an episode configuration and a reader.
#[derive(Clone, Copy)]
pub struct Agent<'a> {
    policy: &'a Policy,
    env: Environment<'a>,
    reader: Option<&'a dyn SpanReader>,
}

impl<'a> Agent<'a> {
    pub fn new(policy: &'a Policy, env: Environment<'a>, reader: Option<&'a dyn SpanReader>) -> Result<Self> {
        policy.check_graph(env.graph())?;
        if policy.config.heads.reader && reader.is_none() {
            return Err(PolicyError::Config("reader head enabled without a reader".into()));
        }
        Ok(Self { policy, env, reader })
    }

    pub fn policy(&self) -> &'a Policy {
        self.policy
    }

    pub fn env(&self) -> Environment<'a> {
        self.env
    }

    pub fn graph(&self) -> &'a AugmentedGraph {
        self.env.graph()
    }

    fn reader_scores(
        &self,
        cache: &mut ReaderCache,
        at: VertexId,
        actions: &[ActionCandidate],
        message: &[String],
    ) -> Result<Option<Vec<f64>>> {
        let Some(reader) = self.reader.filter(|_| self.policy.config.heads.reader) else {
            return Ok(None);
        };
        if let Some(s) = cache.0.get(&at) {
            return Ok(Some(s.clone()));
        }
        let s = score_candidates_global(actions, self.graph(), message, reader)?;
        cache.0.insert(at, s.clone());
        Ok(Some(s))
    }

    /// Runs a full episode on `tape`, recording the nodes needed for a loss.
    pub fn rollout_on_tape(
        &self,
        tape: &mut Tape<'a>,
        start: VertexId,
        message: &[String],
        ground_truth: Option<VertexId>,
        mut decode: Decode<'_>,
        cache: &mut ReaderCache,
    ) -> Result<(EpisodeTrace, EpisodeVars)> {
        let policy = self.policy;
        let token_ids = policy.encode_message(message)?;
        let mut state = self.env.reset(start, message.to_vec(), ground_truth)?;
        let msg = policy.embed_message(tape, &token_ids)?;
        let width = 2 * policy.config.dim;
        let mut h = tape.vector(vec![0.0; width]);
        let mut c = tape.vector(vec![0.0; width]);
        let mut prev_row = policy.start_row();
        let mut steps = Vec::with_capacity(self.env.config().horizon);
        let mut vars = EpisodeVars::default();

        for t in 0..self.env.config().horizon {
            let (h_new, c_new) = policy.encode_history(tape, h, c, prev_row, state.current)?;
            h = h_new;
            c = c_new;
            let actions = self.env.available_actions(&state);
            let reader = self.reader_scores(cache, state.current, &actions, message)?;
            let sv = policy.score_step(tape, h, state.current, msg, &actions, reader.as_deref())?;
            let log_probs = tape.value(sv.log_probs).to_vec();
            let distribution = tensor::softmax(tape.value(sv.logits));
            let chosen = match &mut decode {
                Decode::Sample(rng) => sample_categorical(&distribution, &mut **rng)?,
                Decode::Greedy => argmax(&log_probs),
                Decode::Forced(seq) => {
                    let i = seq.get(t).copied().unwrap_or(usize::MAX);
                    if i >= actions.len() {
                        return Err(PolicyError::ForcedAction { step: t, index: i });
                    }
                    i
                }
            };
            let lp = tape.pick(sv.log_probs, chosen)?;
            let probs = tape.softmax(sv.logits)?;
            let plogp = tape.mul(probs, sv.log_probs)?;
            let neg_h = tape.sum(plogp);
            let entropy = tape.scale(neg_h, -1.0);
            vars.log_probs.push(lp);
            vars.entropies.push(entropy);

            steps.push(TraceStep {
                observation: observe(&state),
                actions: actions.clone(),
                ffn: sv.ffn.map(|v| tape.value(v).to_vec()),
                bilinear: sv.bilinear.map(|v| tape.value(v).to_vec()),
                reader,
                distribution,
                chosen,
                log_prob: log_probs[chosen],
            });
            prev_row = policy.label_row(actions[chosen].label);
            state = self.env.step(&state, &actions[chosen])?;
        }
        let trace = self.finish(start, steps, &state)?;
        Ok((trace, vars))
    }

    fn finish(&self, start: VertexId, steps: Vec<TraceStep>, state: &EnvState) -> Result<EpisodeTrace> {
        let reward = match state.ground_truth() {
            Some(_) => Some(self.env.terminal_reward(state)?),
            None => None,
        };
        Ok(EpisodeTrace {
            start,
            steps,
            final_vertex: state.current,
            reward,
        })
    }

    /// Runs a full episode without keeping gradients.
    pub fn rollout(
        &self,
        start: VertexId,
        message: &[String],
        ground_truth: Option<VertexId>,
        decode: Decode<'_>,
    ) -> Result<EpisodeTrace> {
        let mut tape = Tape::with_params(&self.policy.params);
        let mut cache = ReaderCache::new();
        Ok(self.rollout_on_tape(&mut tape, start, message, ground_truth, decode, &mut cache)?.0)
    }

    pub fn greedy(&self, start: VertexId, message: &[String], ground_truth: Option<VertexId>) -> Result<EpisodeTrace> {
        self.rollout(start, message, ground_truth, Decode::Greedy)
    }
}
