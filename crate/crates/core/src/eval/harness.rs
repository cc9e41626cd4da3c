//! Train-and-evaluate loops for ablations and data-reduction curves.

use std::io::Write;

use serde::Serialize;

use crate::env::{EpisodeConfig, Environment};
use crate::generator::compose_copy;
use crate::graph::{AugmentedGraph, VertexId};
use crate::policy::{Agent, Heads, Policy, PolicyConfig};
use crate::reader::{LexicalReader, SpanReader};
use crate::trainer::{train_selector, TrainConfig, TrainExample, TrainReport};
use crate::vocab::Vocab;

use super::metrics::MetricReport;
use super::planted::SyntheticTask;
use super::EvalError;

/// Everything needed to train one selector.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorSetup {
    pub policy: PolicyConfig,
    pub trainer: TrainConfig,
    pub reader_window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Reader head off.
    NoReader,
    /// Bilinear head off.
    NoBilinear,
    NoBilinearNoReader,
    /// Graph without Sentence vertices.
    NoSentences,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoReader,
        Variant::NoBilinear,
        Variant::NoBilinearNoReader,
        Variant::NoSentences,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoReader => "no_reader",
            Variant::NoBilinear => "no_bilinear",
            Variant::NoBilinearNoReader => "no_bilinear_no_reader",
            Variant::NoSentences => "no_sentences",
        }
    }

    fn heads(self, base: Heads) -> Heads {
        match self {
            Variant::Full | Variant::NoSentences => base,
            Variant::NoReader => Heads { reader: false, ..base },
            Variant::NoBilinear => Heads { bilinear: false, ..base },
            Variant::NoBilinearNoReader => Heads {
                bilinear: false,
                reader: false,
                ..base
            },
        }
    }
}

/// Vocabulary of the training messages; anything else maps to the unknown
/// token.
pub fn message_vocab(examples: &[TrainExample]) -> Vocab {
    Vocab::build(examples.iter().map(|e| &e.message))
}

/// Greedy selections on `examples` and the text metrics of the copied
/// responses against the copied gold knowledge.
pub fn evaluate_selector(
    policy: &Policy,
    graph: &AugmentedGraph,
    env: EpisodeConfig,
    reader: Option<&dyn SpanReader>,
    examples: &[TrainExample],
) -> Result<(MetricReport, Vec<VertexId>), EvalError> {
    let agent = Agent::new(policy, Environment::new(graph, env)?, reader)?;
    let mut predicted = Vec::with_capacity(examples.len());
    for ex in examples {
        predicted.push(agent.greedy(ex.start, &ex.message, None)?.final_vertex);
    }
    let report = report_for(graph, examples, &predicted);
    Ok((report, predicted))
}

fn report_for(graph: &AugmentedGraph, examples: &[TrainExample], predicted: &[VertexId]) -> MetricReport {
    let text = |v: VertexId| graph.vertex(v).map(compose_copy).unwrap_or_default();
    let pairs: Vec<(Vec<String>, Vec<String>)> = examples
        .iter()
        .zip(predicted)
        .map(|(ex, &p)| (text(p), text(ex.target)))
        .collect();
    let selections: Vec<(VertexId, VertexId)> = predicted.iter().copied().zip(examples.iter().map(|e| e.target)).collect();
    MetricReport::compute(&pairs, &selections)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: MetricReport,
    pub train: TrainReport,
}

/// Trains a fresh policy on `train` and evaluates it on `task.test`.
pub fn train_and_evaluate(
    task: &SyntheticTask,
    train: &[TrainExample],
    setup: &SelectorSetup,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<(Policy, RunResult), EvalError> {
    let reader = match setup.policy.heads.reader {
        true => Some(LexicalReader::from_graph(&task.graph, setup.reader_window).map_err(crate::policy::PolicyError::from)?),
        false => None,
    };
    let reader_ref = reader.as_ref().map(|r| r as &dyn SpanReader);
    let mut policy = Policy::new(&task.graph, message_vocab(train), setup.policy.clone(), seed)?;
    let cfg = TrainConfig {
        seed,
        ..setup.trainer.clone()
    };
    let env = task.episode_config();
    let train_report = train_selector(&mut policy, &task.graph, env, reader_ref, train, &task.test, &cfg, log)?;
    let (report, _) = evaluate_selector(&policy, &task.graph, env, reader_ref, &task.test)?;
    Ok((
        policy,
        RunResult {
            report,
            train: train_report,
        },
    ))
}

/// Trains on the Entity-only subgraph. Examples whose endpoints were removed
/// are dropped from training; in evaluation a walk that cannot start counts
/// as a miss.
fn run_without_sentences(task: &SyntheticTask, setup: &SelectorSetup, seed: u64) -> Result<RunResult, EvalError> {
    let (sub, origin) = task.graph.without_sentences();
    let mut remap = vec![None; task.graph.num_vertices()];
    for (new, old) in origin.iter().enumerate() {
        remap[old.index()] = Some(VertexId(new as u32));
    }
    let train: Vec<TrainExample> = task
        .train
        .iter()
        .filter_map(|ex| {
            Some(TrainExample {
                message: ex.message.clone(),
                start: remap[ex.start.index()]?,
                target: remap[ex.target.index()]?,
            })
        })
        .collect();
    let reader = match setup.policy.heads.reader {
        true => Some(LexicalReader::from_graph(&sub, setup.reader_window).map_err(crate::policy::PolicyError::from)?),
        false => None,
    };
    let reader_ref = reader.as_ref().map(|r| r as &dyn SpanReader);
    let env = task.episode_config();
    let mut policy = Policy::new(&sub, message_vocab(&task.train), setup.policy.clone(), seed)?;
    let mut train_report = TrainReport::default();
    if !train.is_empty() {
        let tc = TrainConfig {
            seed,
            ..setup.trainer.clone()
        };
        train_report = train_selector(&mut policy, &sub, env, reader_ref, &train, &[], &tc, None)?;
    }
    let agent = Agent::new(&policy, Environment::new(&sub, env)?, reader_ref)?;
    let mut predicted = Vec::with_capacity(task.test.len());
    for ex in &task.test {
        predicted.push(match remap[ex.start.index()] {
            Some(start) => Some(origin[agent.greedy(start, &ex.message, None)?.final_vertex.index()]),
            None => None,
        });
    }
    let graph = &task.graph;
    let text = |v: Option<VertexId>| v.and_then(|v| graph.vertex(v)).map(compose_copy).unwrap_or_default();
    let pairs: Vec<_> = task.test.iter().zip(&predicted).map(|(ex, &p)| (text(p), text(Some(ex.target)))).collect();
    let selections: Vec<_> = predicted.iter().zip(&task.test).map(|(&p, ex)| (p, Some(ex.target))).collect();
    Ok(RunResult {
        report: MetricReport::compute(&pairs, &selections),
        train: train_report,
    })
}

pub fn run_variant(task: &SyntheticTask, setup: &SelectorSetup, variant: Variant, seed: u64) -> Result<RunResult, EvalError> {
    if variant == Variant::NoSentences {
        return run_without_sentences(task, setup, seed);
    }
    let s = SelectorSetup {
        policy: PolicyConfig {
            heads: variant.heads(setup.policy.heads),
            ..setup.policy.clone()
        },
        ..setup.clone()
    };
    Ok(train_and_evaluate(task, &task.train, &s, seed, None)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub report: MetricReport,
}

/// Every variant under every seed, one after another.
pub fn run_ablation(task: &SyntheticTask, setup: &SelectorSetup, seeds: &[u64]) -> Result<Vec<AblationRow>, EvalError> {
    let mut rows = Vec::with_capacity(Variant::ALL.len() * seeds.len());
    for variant in Variant::ALL {
        for &seed in seeds {
            let r = run_variant(task, setup, variant, seed)?;
            log::info!("ablation {} seed {seed}: hit@1 {:.3}", variant.name(), r.report.hit1);
            rows.push(AblationRow {
                variant,
                seed,
                report: r.report,
            });
        }
    }
    Ok(rows)
}

/// One JSON line per metric of one variant, averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricLine<'a> {
    pub variant: &'a str,
    pub metric: &'a str,
    pub mean: f64,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
}

pub const METRICS: [&str; 4] = ["bleu4", "rouge2", "rougeL", "hit1"];

fn metric(r: &MetricReport, name: &str) -> f64 {
    match name {
        "bleu4" => r.bleu4,
        "rouge2" => r.rouge2,
        "rougeL" => r.rouge_l,
        "hit1" => r.hit1,
        _ => unreachable!("unknown metric {name}"),
    }
}

pub fn write_ablation_report(rows: &[AblationRow], mut out: impl Write) -> std::io::Result<()> {
    for variant in Variant::ALL {
        let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
        if mine.is_empty() {
            continue;
        }
        for name in METRICS {
            let per_seed: Vec<f64> = mine.iter().map(|r| metric(&r.report, name)).collect();
            let line = MetricLine {
                variant: variant.name(),
                metric: name,
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                seeds: mine.iter().map(|r| r.seed).collect(),
                per_seed,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub seed: u64,
    pub num_train: usize,
    pub hit1: f64,
}

/// Size of the training prefix used at `fraction`.
pub fn reduced_size(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).round() as usize).clamp(1, total.max(1))
}

/// Trains on the first `fraction` of the training examples for each
/// fraction and seed.
pub fn run_data_reduction(
    task: &SyntheticTask,
    fractions: &[f64],
    setup: &SelectorSetup,
    seeds: &[u64],
) -> Result<Vec<CurvePoint>, EvalError> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::Task(format!("training fraction {f} is outside (0, 1]")));
    }
    let mut points = Vec::with_capacity(fractions.len() * seeds.len());
    for &fraction in fractions {
        let n = reduced_size(task.train.len(), fraction);
        for &seed in seeds {
            let (_, r) = train_and_evaluate(task, &task.train[..n], setup, seed, None)?;
            log::info!("fraction {fraction} seed {seed}: hit@1 {:.3}", r.report.hit1);
            points.push(CurvePoint {
                fraction,
                seed,
                num_train: n,
                hit1: r.report.hit1,
            });
        }
    }
    Ok(points)
}

pub fn write_jsonl<T: Serialize>(items: &[T], mut out: impl Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
