//! Response generation from selected knowledge.
//!
//! Two generators are provided. [`compose_copy`] returns the selected
//! knowledge itself. [`Generator`] is a small recurrent encoder-decoder whose
//! output at every step mixes a vocabulary distribution with a copy
//! distribution over the knowledge tokens, weighted by a learned gate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Vertex, VertexKind};
use crate::tensor::{self, read_checkpoint, write_checkpoint, ParamGrads, ParamId, ParamRegistry, Tape, Tensor, TensorError, Var};
use crate::trainer::derive_seed;
use crate::vocab::{Vocab, BOS_ID, EOS, UNK_ID};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no usable training examples")]
    NoExamples,
    #[error("knowledge has no tokens")]
    EmptyKnowledge,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GeneratorError>;

/// Template tokens for an entity used as a response.
pub fn entity_template(entity_tokens: &[String]) -> Vec<String> {
    let mut out = vec!["it".to_string(), "is".to_string()];
    out.extend_from_slice(entity_tokens);
    out.push(".".to_string());
    out
}

/// Sentence vertices are returned verbatim, entities through
/// [`entity_template`].
pub fn compose_copy(vertex: &Vertex) -> Vec<String> {
    match vertex.kind {
        VertexKind::Sentence => vertex.tokens.clone(),
        VertexKind::Entity => entity_template(&vertex.tokens),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenExample {
    pub message: Vec<String>,
    pub knowledge: Vec<String>,
    pub response: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            hidden: 64,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            max_len: 40,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(GeneratorError::Config(m.to_string()));
        if self.dim == 0 || self.hidden == 0 {
            return err("dim and hidden must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive");
        }
        if self.max_len == 0 {
            return err("max_len must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Gru {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    emb: ParamId,
    knowledge: Gru,
    message: Gru,
    decoder: Gru,
    init_w: ParamId,
    init_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

fn shapes(cfg: &GeneratorConfig, vocab: usize) -> Vec<(String, Vec<usize>)> {
    let (d, h) = (cfg.dim, cfg.hidden);
    let mut v = vec![("tok_emb".to_string(), vec![vocab, d])];
    for enc in ["kenc", "menc", "dec"] {
        v.push((format!("{enc}.w_x"), vec![3 * h, d]));
        v.push((format!("{enc}.w_h"), vec![3 * h, h]));
        v.push((format!("{enc}.b"), vec![3 * h]));
    }
    v.extend([
        ("init.w".to_string(), vec![h, 2 * h]),
        ("init.b".to_string(), vec![h]),
        ("out.w".to_string(), vec![vocab, 2 * h]),
        ("out.b".to_string(), vec![vocab]),
        ("gate.w".to_string(), vec![1, 2 * h + d]),
        ("gate.b".to_string(), vec![1]),
    ]);
    v
}

/// One GRU step: `h' = n + z * (h - n)`.
fn gru_cell(tape: &mut Tape<'_>, x: Var, h: Var, w: Gru) -> std::result::Result<Var, TensorError> {
    let hid = tape.shape(h)[0];
    let (wx, wh, b) = (tape.param(w.w_x), tape.param(w.w_h), tape.param(w.b));
    let gx = tape.matmul(wx, x)?;
    let gx = tape.add(gx, b)?;
    let gh = tape.matmul(wh, h)?;
    let zx = tape.slice(gx, 0, hid)?;
    let zh = tape.slice(gh, 0, hid)?;
    let rx = tape.slice(gx, hid, hid)?;
    let rh = tape.slice(gh, hid, hid)?;
    let nx = tape.slice(gx, 2 * hid, hid)?;
    let nh = tape.slice(gh, 2 * hid, hid)?;
    let z = tape.add(zx, zh)?;
    let z = tape.sigmoid(z);
    let r = tape.add(rx, rh)?;
    let r = tape.sigmoid(r);
    let rn = tape.mul(r, nh)?;
    let n = tape.add(nx, rn)?;
    let n = tape.tanh(n);
    let diff = tape.sub(h, n)?;
    let kept = tape.mul(z, diff)?;
    tape.add(n, kept)
}

/// Gate, vocabulary and copy distributions of one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub p_gen: f64,
    pub vocab: Vec<f64>,
    /// Attention over knowledge positions (the end marker included).
    pub copy: Vec<f64>,
}

/// `p_gen * vocab + (1 - p_gen) * copy` over the vocabulary extended with the
/// out-of-vocabulary knowledge tokens. Returns the extended token list and
/// the mixture over it.
pub fn mixture(vocab: &Vocab, knowledge: &[String], step: &StepOutput, p_gen: f64) -> (Vec<String>, Vec<f64>) {
    let mut tokens: Vec<String> = vocab.tokens().to_vec();
    let mut probs: Vec<f64> = step.vocab.iter().map(|p| p_gen * p).collect();
    let mut extra: HashMap<&str, usize> = HashMap::new();
    for (tok, &a) in knowledge.iter().zip(&step.copy) {
        let idx = if vocab.contains(tok) {
            vocab.id(tok)
        } else {
            *extra.entry(tok.as_str()).or_insert_with(|| {
                tokens.push(tok.clone());
                probs.push(0.0);
                tokens.len() - 1
            })
        };
        probs[idx] += (1.0 - p_gen) * a;
    }
    (tokens, probs)
}

struct Encoded {
    keys: Var,
    state: Var,
    /// Knowledge tokens with the end marker appended.
    tokens: Vec<String>,
}

struct StepVars {
    state: Var,
    attention: Var,
    vocab: Var,
    gate: Var,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    vocab: Vocab,
    params: ParamRegistry,
    ids: Ids,
}

impl PartialEq for Generator {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.vocab == other.vocab && self.params == other.params
    }
}

#[derive(Serialize, Deserialize)]
struct GeneratorMeta {
    kind: String,
    config: GeneratorConfig,
    vocab: Vocab,
}

const GENERATOR_KIND: &str = "generator";

/// Per-epoch mean token negative log-likelihood.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub epoch_nll: Vec<f64>,
    pub skipped_empty_knowledge: usize,
}

impl Generator {
    pub fn new(vocab: Vocab, config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamRegistry::new(seed);
        for (name, shape) in shapes(&config, vocab.len()) {
            let n: usize = shape.iter().product();
            let values = if shape.len() == 1 {
                vec![0.0; n]
            } else {
                let a = if name == "tok_emb" {
                    1.0 / (shape[1] as f64).sqrt()
                } else {
                    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
                };
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            params.add(&name, Tensor::new(shape, values)?, true)?;
        }
        Self::from_registry(params, vocab, config)
    }

    fn from_registry(params: ParamRegistry, vocab: Vocab, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let expected = shapes(&config, vocab.len());
        if params.len() != expected.len() {
            return Err(GeneratorError::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        let id = |name: &str| -> Result<ParamId> {
            let id = params
                .id(name)
                .ok_or_else(|| GeneratorError::Checkpoint(format!("missing parameter {name}")))?;
            let want = &expected.iter().find(|(n, _)| n == name).expect("known name").1;
            if &params.tensor(id).shape != want {
                return Err(GeneratorError::Checkpoint(format!("parameter {name} has the wrong shape")));
            }
            Ok(id)
        };
        let gru = |p: &str| -> Result<Gru> {
            Ok(Gru {
                w_x: id(&format!("{p}.w_x"))?,
                w_h: id(&format!("{p}.w_h"))?,
                b: id(&format!("{p}.b"))?,
            })
        };
        let ids = Ids {
            emb: id("tok_emb")?,
            knowledge: gru("kenc")?,
            message: gru("menc")?,
            decoder: gru("dec")?,
            init_w: id("init.w")?,
            init_b: id("init.b")?,
            out_w: id("out.w")?,
            out_b: id("out.b")?,
            gate_w: id("gate.w")?,
            gate_b: id("gate.b")?,
        };
        Ok(Self {
            config,
            vocab,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    fn run_encoder(&self, tape: &mut Tape<'_>, tokens: &[String], gru: Gru) -> std::result::Result<Vec<Var>, TensorError> {
        let emb = tape.param(self.ids.emb);
        let mut h = tape.vector(vec![0.0; self.config.hidden]);
        let mut states = Vec::with_capacity(tokens.len());
        for t in tokens {
            let x = tape.row(emb, self.vocab.id(t))?;
            h = gru_cell(tape, x, h, gru)?;
            states.push(h);
        }
        Ok(states)
    }

    fn encode(&self, tape: &mut Tape<'_>, message: &[String], knowledge: &[String]) -> Result<Encoded> {
        if knowledge.is_empty() {
            return Err(GeneratorError::EmptyKnowledge);
        }
        let mut tokens = knowledge.to_vec();
        tokens.push(EOS.to_string());
        let kstates = self.run_encoder(tape, &tokens, self.ids.knowledge)?;
        let flat = tape.concat(&kstates)?;
        let keys = tape.reshape(flat, vec![tokens.len(), self.config.hidden])?;
        let k_last = *kstates.last().expect("knowledge is non-empty");
        let m_last = match self.run_encoder(tape, message, self.ids.message)?.last() {
            Some(&m) => m,
            None => tape.vector(vec![0.0; self.config.hidden]),
        };
        let both = tape.concat(&[k_last, m_last])?;
        let (w, b) = (tape.param(self.ids.init_w), tape.param(self.ids.init_b));
        let s = tape.matmul(w, both)?;
        let s = tape.add(s, b)?;
        let state = tape.tanh(s);
        Ok(Encoded { keys, state, tokens })
    }

    fn step(&self, tape: &mut Tape<'_>, enc: &Encoded, state: Var, prev_id: usize) -> Result<StepVars> {
        let n = enc.tokens.len();
        let h = self.config.hidden;
        let emb = tape.param(self.ids.emb);
        let x = tape.row(emb, prev_id)?;
        let s = gru_cell(tape, x, state, self.ids.decoder)?;
        let scores = tape.matmul(enc.keys, s)?;
        let attention = tape.softmax(scores)?;
        let a_row = tape.reshape(attention, vec![1, n])?;
        let ctx = tape.matmul(a_row, enc.keys)?;
        let ctx = tape.reshape(ctx, vec![h])?;
        let out_in = tape.concat(&[s, ctx])?;
        let (ow, ob) = (tape.param(self.ids.out_w), tape.param(self.ids.out_b));
        let logits = tape.matmul(ow, out_in)?;
        let logits = tape.add(logits, ob)?;
        let vocab = tape.softmax(logits)?;
        let gate_in = tape.concat(&[s, ctx, x])?;
        let (gw, gb) = (tape.param(self.ids.gate_w), tape.param(self.ids.gate_b));
        let g = tape.matmul(gw, gate_in)?;
        let g = tape.add(g, gb)?;
        let gate = tape.sigmoid(g);
        Ok(StepVars {
            state: s,
            attention,
            vocab,
            gate,
        })
    }

    /// `-log P(target)` for one step on the tape.
    fn step_nll(&self, tape: &mut Tape<'_>, enc: &Encoded, sv: &StepVars, target: &str) -> Result<Var> {
        let in_vocab = self.vocab.contains(target);
        let positions: Vec<usize> = enc
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == target)
            .map(|(i, _)| i)
            .collect();
        let vocab_id = if in_vocab || positions.is_empty() {
            Some(self.vocab.id(target))
        } else {
            None
        };
        let mut total: Option<Var> = None;
        if let Some(id) = vocab_id {
            let p = tape.pick(sv.vocab, id)?;
            total = Some(tape.mul(sv.gate, p)?);
        }
        if !positions.is_empty() {
            let mut copy = tape.pick(sv.attention, positions[0])?;
            for &i in &positions[1..] {
                let p = tape.pick(sv.attention, i)?;
                copy = tape.add(copy, p)?;
            }
            let one = tape.vector(vec![1.0]);
            let rest = tape.sub(one, sv.gate)?;
            let c = tape.mul(rest, copy)?;
            total = Some(match total {
                Some(t) => tape.add(t, c)?,
                None => c,
            });
        }
        let p = total.expect("vocab or copy term exists");
        let lp = tape.log(p);
        Ok(tape.scale(lp, -1.0))
    }

    /// Summed teacher-forced negative log-likelihood of `response` followed
    /// by the end marker, and the number of predicted tokens.
    pub fn sequence_nll(&self, tape: &mut Tape<'_>, example: &GenExample) -> Result<(Var, usize)> {
        let enc = self.encode(tape, &example.message, &example.knowledge)?;
        let mut state = enc.state;
        let mut prev = BOS_ID;
        let mut terms = Vec::with_capacity(example.response.len() + 1);
        let targets = example.response.iter().map(String::as_str).chain([EOS]);
        for target in targets {
            let sv = self.step(tape, &enc, state, prev)?;
            terms.push(self.step_nll(tape, &enc, &sv, target)?);
            state = sv.state;
            prev = self.vocab.id(target);
        }
        let joined = tape.concat(&terms)?;
        Ok((tape.sum(joined), terms.len()))
    }

    /// The distributions of the first decoding step after `prefix`.
    pub fn decode_step(&self, message: &[String], knowledge: &[String], prefix: &[String]) -> Result<StepOutput> {
        let mut tape = Tape::with_params(&self.params);
        let enc = self.encode(&mut tape, message, knowledge)?;
        let mut state = enc.state;
        let mut prev = BOS_ID;
        for t in prefix {
            state = self.step(&mut tape, &enc, state, prev)?.state;
            prev = self.vocab.id(t);
        }
        let sv = self.step(&mut tape, &enc, state, prev)?;
        Ok(StepOutput {
            p_gen: tape.scalar(sv.gate),
            vocab: tape.value(sv.vocab).to_vec(),
            copy: tape.value(sv.attention).to_vec(),
        })
    }

    /// Greedy decoding until the end marker or `max_len` tokens.
    pub fn generate(&self, message: &[String], knowledge: &[String], max_len: usize) -> Result<Vec<String>> {
        let mut tape = Tape::with_params(&self.params);
        let enc = self.encode(&mut tape, message, knowledge)?;
        let mut state = enc.state;
        let mut prev = BOS_ID;
        let mut out = Vec::new();
        while out.len() < max_len {
            let sv = self.step(&mut tape, &enc, state, prev)?;
            let step = StepOutput {
                p_gen: tape.scalar(sv.gate),
                vocab: tape.value(sv.vocab).to_vec(),
                copy: tape.value(sv.attention).to_vec(),
            };
            let (tokens, probs) = mixture(&self.vocab, &enc.tokens, &step, step.p_gen);
            let best = crate::policy::argmax(&probs);
            if tokens[best] == EOS {
                break;
            }
            prev = if best < self.vocab.len() { best } else { UNK_ID };
            out.push(tokens[best].clone());
            state = sv.state;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| GeneratorError::Io {
            path: path.display().to_string(),
            source,
        };
        let meta = GeneratorMeta {
            kind: GENERATOR_KIND.into(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        write_checkpoint(&self.params, &meta, &mut out)?;
        std::io::Write::flush(&mut out).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| GeneratorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck = read_checkpoint(BufReader::new(file))?;
        let meta: GeneratorMeta =
            serde_json::from_value(ck.meta).map_err(|e| GeneratorError::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != GENERATOR_KIND {
            return Err(GeneratorError::Checkpoint(format!(
                "expected a {GENERATOR_KIND} checkpoint, found {}",
                meta.kind
            )));
        }
        Self::from_registry(ck.registry, meta.vocab, meta.config)
    }
}

/// Vocabulary over every token of the examples.
pub fn corpus_vocab(examples: &[GenExample]) -> Vocab {
    Vocab::build(
        examples
            .iter()
            .flat_map(|e| [&e.message, &e.knowledge, &e.response]),
    )
}

/// Minimizes teacher-forced negative log-likelihood with Adam, one step per
/// batch. Examples with empty knowledge are skipped.
pub fn train_generator(generator: &mut Generator, examples: &[GenExample]) -> Result<GeneratorReport> {
    let usable: Vec<&GenExample> = examples
        .iter()
        .filter(|e| !e.knowledge.is_empty() && !e.response.is_empty())
        .collect();
    let skipped = examples.len() - usable.len();
    if skipped > 0 {
        log::warn!("{skipped} generator examples without knowledge or response are skipped");
    }
    if usable.is_empty() {
        return Err(GeneratorError::NoExamples);
    }
    let cfg = generator.config.clone();
    let mut report = GeneratorReport {
        epoch_nll: Vec::with_capacity(cfg.epochs),
        skipped_empty_knowledge: skipped,
    };
    for epoch in 0..cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64])));
        let (mut nll_sum, mut tokens) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let params = &generator.params;
            let results: Vec<Result<(ParamGrads, f64, usize)>> = batch
                .par_iter()
                .map(|ex| {
                    let mut tape = Tape::with_params(params);
                    let (loss, n) = generator.sequence_nll(&mut tape, ex)?;
                    let g = tape.backward(loss)?.param_grads(params);
                    Ok((g, tape.scalar(loss), n))
                })
                .collect();
            let mut total = ParamGrads::zeros_like(params);
            let mut batch_tokens = 0;
            for r in results {
                let (g, l, n) = r?;
                total.add_scaled(&g, 1.0);
                nll_sum += l;
                batch_tokens += n;
            }
            tokens += batch_tokens;
            total.scale(1.0 / batch_tokens as f64);
            let params = generator.params_mut();
            params.accumulate(&total);
            params.adam_step(cfg.learning_rate, 0.9, 0.999, 1e-8);
        }
        let mean = nll_sum / tokens as f64;
        log::info!("generator epoch {epoch}: token nll {mean:.4}");
        report.epoch_nll.push(mean);
    }
    Ok(report)
}

/// Sum of a distribution, for checks.
pub fn total_mass(p: &[f64]) -> f64 {
    p.iter().sum()
}

#[doc(hidden)]
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    tensor::softmax(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VertexId;
    use crate::tensor::gradcheck::check_param_gradients;
    use crate::text::normalize;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            dim: 6,
            hidden: 5,
            epochs: 1,
            ..GeneratorConfig::default()
        }
    }

    fn ex(m: &str, k: &str, r: &str) -> GenExample {
        GenExample {
            message: normalize(m),
            knowledge: normalize(k),
            response: normalize(r),
        }
    }

    #[test]
    fn copy_composer() {
        let sentence = Vertex {
            id: VertexId(0),
            kind: VertexKind::Sentence,
            surface: "Green is the color between blue and yellow on the visible spectrum.".into(),
            tokens: normalize("Green is the color between blue and yellow on the visible spectrum."),
        };
        let out = compose_copy(&sentence);
        assert_eq!(out, sentence.tokens);
        assert_eq!(out.join(" "), "green is the color between blue and yellow on the visible spectrum");
        assert_eq!(compose_copy(&sentence), out);
        let entity = Vertex {
            id: VertexId(1),
            kind: VertexKind::Entity,
            surface: "Comedy".into(),
            tokens: normalize("Comedy"),
        };
        assert_eq!(compose_copy(&entity).join(" "), "it is comedy .");
    }

    #[test]
    fn mixture_is_a_distribution() {
        let data = [ex("hi there", "the sky is blue", "the sky is blue")];
        let g = Generator::new(corpus_vocab(&data), small(), 3).unwrap();
        let knowledge = normalize("the zorblax sky is zorblax");
        let step = g.decode_step(&data[0].message, &knowledge, &normalize("the")).unwrap();
        assert!(step.p_gen > 0.0 && step.p_gen < 1.0);
        assert!((total_mass(&step.vocab) - 1.0).abs() < 1e-12);
        assert!((total_mass(&step.copy) - 1.0).abs() < 1e-12);
        assert_eq!(step.copy.len(), knowledge.len() + 1);

        let mut with_end = knowledge.clone();
        with_end.push(EOS.to_string());
        let (tokens, probs) = mixture(g.vocab(), &with_end, &step, step.p_gen);
        assert!((total_mass(&probs) - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|&p| p >= 0.0));
        assert_eq!(tokens.len(), g.vocab().len() + 1, "one out-of-vocabulary token");

        let (_, gen_only) = mixture(g.vocab(), &with_end, &step, 1.0);
        assert_eq!(&gen_only[..g.vocab().len()], &step.vocab[..]);
        assert_eq!(gen_only[g.vocab().len()], 0.0);
        let (tokens, copy_only) = mixture(g.vocab(), &with_end, &step, 0.0);
        for (t, p) in tokens.iter().zip(&copy_only) {
            if *p > 0.0 {
                assert!(with_end.contains(t), "{t}");
            }
        }
    }

    #[test]
    fn decode_step_gradient() {
        let data = [ex("what colour", "green is a colour", "green is a colour")];
        let g = Generator::new(corpus_vocab(&data), small(), 5).unwrap();
        let six = ex("what colour", "green is a colour", "green is");
        let r = check_param_gradients(g.params(), 1e-6, 1e-6, 12, |tape| {
            let (l, _) = g.sequence_nll(tape, &six).map_err(|e| match e {
                GeneratorError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            Ok(l)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-3, "{r:?}");
        assert!(r.checked > 50);
    }

    #[test]
    fn generation_limits_and_determinism() {
        let data = [ex("hello", "a b c", "a b c")];
        let g = Generator::new(corpus_vocab(&data), small(), 1).unwrap();
        let one = g.generate(&data[0].message, &data[0].knowledge, 1).unwrap();
        assert!(one.len() <= 1);
        let a = g.generate(&data[0].message, &data[0].knowledge, 10).unwrap();
        let b = g.generate(&data[0].message, &data[0].knowledge, 10).unwrap();
        assert_eq!(a, b);
        assert!(matches!(g.generate(&data[0].message, &[], 3), Err(GeneratorError::EmptyKnowledge)));
    }

    #[test]
    fn zero_epochs_and_empty_inputs() {
        let data = vec![ex("m", "k x", "k x"), ex("m", "", "r")];
        let mut g = Generator::new(
            corpus_vocab(&data),
            GeneratorConfig {
                epochs: 0,
                ..small()
            },
            2,
        )
        .unwrap();
        let before = g.clone();
        let rep = train_generator(&mut g, &data).unwrap();
        assert_eq!(g, before);
        assert_eq!(rep.skipped_empty_knowledge, 1);
        assert!(matches!(train_generator(&mut g, &data[1..]), Err(GeneratorError::NoExamples)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = [ex("m", "k", "k")];
        let g = Generator::new(corpus_vocab(&data), small(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.ckpt");
        g.save(&path).unwrap();
        assert_eq!(Generator::load(&path).unwrap(), g);
    }
}
