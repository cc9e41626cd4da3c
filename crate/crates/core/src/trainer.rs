//! Policy-gradient training of the walking policy.
//!
//! Each batch runs several sampled rollouts per example, weights their
//! log-likelihood by the advantage over a moving-average reward baseline,
//! adds an entropy bonus, and takes one Adam step on the averaged gradient.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::graph::{AugmentedGraph, GraphError, VertexId};
use crate::policy::{Agent, Decode, EpisodeVars, Policy, PolicyError, ReaderCache};
use crate::reader::SpanReader;
use crate::tensor::{ParamGrads, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no training examples")]
    NoExamples,
    #[error("trace has {found} steps, expected {expected}")]
    IncompleteTrace { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("writing training log: {0}")]
    Log(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rollouts_per_example: usize,
    pub baseline_decay: f64,
    pub entropy_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate held-out greedy Hit@1 every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rollouts_per_example: 20,
            baseline_decay: 0.9,
            entropy_weight: 0.01,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if self.rollouts_per_example == 0 {
            return err("rollouts_per_example must be positive");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return err("baseline_decay must be in [0, 1)");
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return err("entropy_weight must be non-negative");
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub message: Vec<String>,
    pub start: VertexId,
    pub target: VertexId,
}

impl TrainExample {
    /// Uses start-vertex retrieval on the message.
    pub fn from_message(graph: &AugmentedGraph, message: Vec<String>, target: VertexId) -> Result<Self> {
        if !graph.contains(target) {
            return Err(GraphError::UnknownVertex(target).into());
        }
        let start = graph.retrieve_start_vertex(&message)?.vertex;
        Ok(Self { message, start, target })
    }
}

/// Moving-average reward baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
}

impl Baseline {
    /// `b <- decay * b + (1 - decay) * batch_mean`.
    pub fn update(&mut self, batch_mean: f64, decay: f64) {
        self.value = decay * self.value + (1.0 - decay) * batch_mean;
    }
}

/// `-(R - b) * sum_t log pi(a_t) - w * sum_t H_t`.
pub fn reinforce_loss(
    tape: &mut Tape<'_>,
    vars: &EpisodeVars,
    horizon: usize,
    reward: f64,
    baseline: f64,
    entropy_weight: f64,
) -> Result<Var> {
    if vars.log_probs.len() != horizon || vars.entropies.len() != horizon {
        return Err(TrainError::IncompleteTrace {
            expected: horizon,
            found: vars.log_probs.len().min(vars.entropies.len()),
        });
    }
    let logp = stack_sum(tape, &vars.log_probs)?;
    let ent = stack_sum(tape, &vars.entropies)?;
    let pg = tape.scale(logp, -(reward - baseline));
    let bonus = tape.scale(ent, -entropy_weight);
    Ok(tape.add(pg, bonus)?)
}

fn stack_sum(tape: &mut Tape<'_>, xs: &[Var]) -> Result<Var> {
    let v = tape.concat(xs)?;
    Ok(tape.sum(v))
}

/// Folds the parts into one well-mixed seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_reward: f64,
    pub holdout_hit1: Option<f64>,
    pub baseline: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Examples whose target cannot be reached within the horizon.
    pub skipped_unreachable: usize,
}

/// Averaged gradient of the batch loss and the mean reward of its rollouts.
/// Rollout `k` of example `i` draws from a generator seeded by
/// `(seed, epoch, i, k)`, so the result does not depend on thread count.
pub fn batch_gradient(
    agent: &Agent<'_>,
    examples: &[(usize, &TrainExample)],
    config: &TrainConfig,
    epoch: usize,
    baseline: f64,
) -> Result<(ParamGrads, f64)> {
    let horizon = agent.env().config().horizon;
    let params = agent.policy().params();
    let per_example: Vec<Result<(ParamGrads, f64)>> = examples
        .par_iter()
        .map(|&(idx, ex)| {
            let mut grads = ParamGrads::zeros_like(params);
            let mut reward_sum = 0.0;
            let mut cache = ReaderCache::new();
            for k in 0..config.rollouts_per_example {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64, idx as u64, k as u64]));
                let mut tape = Tape::with_params(params);
                let (trace, vars) = agent.rollout_on_tape(
                    &mut tape,
                    ex.start,
                    &ex.message,
                    Some(ex.target),
                    Decode::Sample(&mut rng),
                    &mut cache,
                )?;
                let reward = trace.reward.unwrap_or(0.0);
                reward_sum += reward;
                let loss = reinforce_loss(&mut tape, &vars, horizon, reward, baseline, config.entropy_weight)?;
                let g = tape.backward(loss)?.param_grads(params);
                grads.add_scaled(&g, 1.0);
            }
            Ok((grads, reward_sum))
        })
        .collect();

    let mut total = ParamGrads::zeros_like(params);
    let mut reward_sum = 0.0;
    for r in per_example {
        let (g, s) = r?;
        total.add_scaled(&g, 1.0);
        reward_sum += s;
    }
    let n = (examples.len() * config.rollouts_per_example).max(1) as f64;
    total.scale(1.0 / n);
    Ok((total, reward_sum / n))
}

/// Fraction of examples whose greedy walk ends on the target.
pub fn greedy_hit1(agent: &Agent<'_>, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<Result<bool>> = examples
        .par_iter()
        .map(|ex| Ok(agent.greedy(ex.start, &ex.message, None)?.final_vertex == ex.target))
        .collect();
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / examples.len() as f64)
}

/// Trains `policy` in place. Writes one JSON line per epoch to `log` when
/// given.
pub fn train_selector(
    policy: &mut Policy,
    graph: &AugmentedGraph,
    env_config: crate::env::EpisodeConfig,
    reader: Option<&dyn SpanReader>,
    train: &[TrainExample],
    holdout: &[TrainExample],
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let env = Environment::new(graph, env_config)?;
    policy.check_graph(graph)?;
    for ex in train.iter().chain(holdout) {
        for v in [ex.start, ex.target] {
            if !graph.contains(v) {
                return Err(GraphError::UnknownVertex(v).into());
            }
        }
    }
    let usable: Vec<(usize, &TrainExample)> = train
        .iter()
        .enumerate()
        .filter(|(_, ex)| env.reachable(ex.start, ex.target))
        .collect();
    let skipped = train.len() - usable.len();
    if skipped > 0 {
        log::warn!("{skipped} training examples have targets beyond the horizon and are skipped");
    }

    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        skipped_unreachable: skipped,
    };
    let mut baseline = Baseline::default();
    for epoch in 0..config.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, epoch as u64, u64::MAX])));
        let mut reward_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (grads, mean) = {
                let agent = Agent::new(policy, env, reader)?;
                batch_gradient(&agent, batch, config, epoch, baseline.value)?
            };
            let params = policy.params_mut();
            params.accumulate(&grads);
            params.adam_step(config.learning_rate, 0.9, 0.999, 1e-8);
            baseline.update(mean, config.baseline_decay);
            reward_total += mean * batch.len() as f64;
        }
        let mean_reward = if usable.is_empty() { 0.0 } else { reward_total / usable.len() as f64 };
        let evaluate = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
        let holdout_hit1 = if evaluate && !holdout.is_empty() {
            let agent = Agent::new(policy, env, reader)?;
            Some(greedy_hit1(&agent, holdout)?)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            mean_reward,
            holdout_hit1,
            baseline: baseline.value,
        };
        log::info!(
            "epoch {epoch}: mean reward {mean_reward:.4}, holdout hit@1 {:?}, baseline {:.4}",
            holdout_hit1,
            baseline.value
        );
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut **w, &entry).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        report.epochs.push(entry);
    }
    Ok(report)
}
