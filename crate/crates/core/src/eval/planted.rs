//! Synthetic selection tasks with a known answer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionLabel, EpisodeConfig, Environment};
use crate::graph::{AugmentedGraph, VertexId, VertexKind};
use crate::trainer::TrainExample;

use super::EvalError;

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub graph: AugmentedGraph,
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub horizon: usize,
    pub max_fanout: usize,
    pub rule: String,
}

impl SyntheticTask {
    pub fn examples(&self) -> impl Iterator<Item = &TrainExample> {
        self.train.iter().chain(&self.test)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            horizon: self.horizon,
            max_fanout: self.max_fanout,
        }
    }
}

/// Name of label `k` of the planted alphabet.
pub fn planted_label(k: usize) -> String {
    format!("l{k}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PlantedSpec {
    pub num_vertices: usize,
    pub branching: usize,
    pub horizon: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub seed: u64,
}

/// Draws per example before giving up.
const MAX_DRAWS_PER_EXAMPLE: usize = 100_000;

/// Random graph in which every vertex has `branching` out-edges to distinct
/// other vertices, labelled with distinct labels from a shared alphabet of
/// `branching + 3`. A message lists the labels of a random `horizon`-step
/// walk and the target is where the walk ends.
///
/// Walks are kept only when their labels are pairwise distinct and, at every
/// vertex on the walk, exactly one outgoing label is among the message
/// tokens. The target is then recoverable whatever the token order.
pub fn make_planted_task(spec: PlantedSpec) -> Result<SyntheticTask, EvalError> {
    let PlantedSpec {
        num_vertices: n,
        branching,
        horizon,
        num_train,
        num_test,
        seed,
    } = spec;
    let alphabet = branching + 3;
    if horizon == 0 || branching == 0 || n <= branching || horizon > alphabet {
        return Err(EvalError::Task(format!(
            "no unique planted target with {n} vertices, branching {branching}, horizon {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = (0..n).map(|i| (VertexKind::Entity, format!("n{i}"))).collect();
    let mut edges = Vec::with_capacity(n * branching);
    for v in 0..n {
        let mut ks: Vec<usize> = (0..alphabet).collect();
        ks.shuffle(&mut rng);
        let others: Vec<usize> = (0..n).filter(|&u| u != v).collect();
        let dsts = others.choose_multiple(&mut rng, branching);
        for (k, &d) in ks.into_iter().zip(dsts) {
            edges.push((VertexId(v as u32), planted_label(k), VertexId(d as u32)));
        }
    }
    let graph = AugmentedGraph::from_parts(vertices, edges)?;
    let num_examples = num_train + num_test;
    let mut examples = Vec::with_capacity(num_examples);
    let mut draws = 0usize;
    while examples.len() < num_examples {
        draws += 1;
        if draws > MAX_DRAWS_PER_EXAMPLE * num_examples {
            return Err(EvalError::Task(format!(
                "found only {} of {num_examples} planted walks with unique signatures",
                examples.len()
            )));
        }
        let start = VertexId(rng.gen_range(0..n) as u32);
        let mut at = start;
        let mut message = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let out = graph.out_edges(at);
            let e = out[rng.gen_range(0..out.len())];
            message.push(graph.label_name(e.label).to_string());
            at = e.dst;
        }
        let mut distinct = message.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() == horizon && follow_signature(&graph, start, &message, horizon) == Some(at) {
            examples.push(TrainExample {
                message,
                start,
                target: at,
            });
        }
    }
    let test = examples.split_off(num_train);
    Ok(SyntheticTask {
        graph,
        train: examples,
        test,
        horizon,
        max_fanout: EpisodeConfig::default().max_fanout,
        rule: format!("from the start vertex, take the edge whose label appears in the message, {horizon} times"),
    })
}

/// Follows the labels named in a planted message: at each hop, the unique
/// out-edge whose label is one of the message tokens. `None` when no edge or
/// more than one edge qualifies.
pub fn follow_signature(graph: &AugmentedGraph, start: VertexId, message: &[String], horizon: usize) -> Option<VertexId> {
    let mut at = start;
    for _ in 0..horizon {
        let mut hits = graph
            .out_edges(at)
            .iter()
            .filter(|e| message.iter().any(|t| t == graph.label_name(e.label)));
        let e = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        at = e.dst;
    }
    Some(at)
}

/// Monte-Carlo Hit@1 of the uniformly random policy.
pub fn random_policy_floor(task: &SyntheticTask, examples: &[TrainExample], samples: usize, seed: u64) -> f64 {
    let env = Environment::new(&task.graph, task.episode_config()).expect("task horizon is positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..samples {
        for ex in examples {
            let mut at = ex.start;
            for _ in 0..task.horizon {
                let acts = env.actions_at(at);
                let a = acts[rng.gen_range(0..acts.len())];
                debug_assert!(a.label == ActionLabel::NoOp || a.src == at);
                at = a.dst;
            }
            hits += usize::from(at == ex.target);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderTaskSpec {
    pub hubs: usize,
    pub per_hub: usize,
    /// Sentences per hub that appear as training targets.
    pub seen_per_hub: usize,
    pub seed: u64,
}

const FILLERS: [&str; 6] = ["a note that", "the record says", "someone wrote", "this entry lists", "we heard of", "people mention"];

/// Keyword identifying sentence `i`.
pub fn reader_keyword(i: usize) -> String {
    format!("kw{i}")
}

/// One-hop task in which every hub links to its sentences with the same
/// label, so only the sentence text tells them apart. Each message names
/// the keyword of its target sentence.
///
/// Training asks about `seen_per_hub` sentences per hub. The test set asks
/// about every other sentence, whose keywords never occur in training, plus
/// one seen sentence per hub phrased differently.
pub fn make_reader_task(spec: ReaderTaskSpec) -> Result<SyntheticTask, EvalError> {
    let ReaderTaskSpec {
        hubs,
        per_hub,
        seen_per_hub,
        seed,
    } = spec;
    if hubs == 0 || per_hub < 2 || seen_per_hub == 0 || seen_per_hub >= per_hub {
        return Err(EvalError::Task(format!(
            "reader task needs hubs > 0 and 0 < seen {seen_per_hub} < per_hub {per_hub}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices: Vec<(VertexKind, String)> = (0..hubs).map(|h| (VertexKind::Entity, format!("hub{h}"))).collect();
    let mut edges = Vec::with_capacity(hubs * per_hub * 2);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let ask = |k: &str| vec!["tell".to_string(), "me".into(), "about".into(), k.to_string()];
    let rephrase = |k: &str| vec!["what".to_string(), "is".into(), "known".into(), "on".into(), k.to_string()];
    for h in 0..hubs {
        let hub = VertexId(h as u32);
        let mut ids = Vec::with_capacity(per_hub);
        for _ in 0..per_hub {
            let idx = vertices.len() - hubs;
            let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
            vertices.push((VertexKind::Sentence, format!("{filler} {} here.", reader_keyword(idx))));
            let v = VertexId((vertices.len() - 1) as u32);
            edges.push((hub, "has_comment".to_string(), v));
            edges.push((v, "has_comment_inv".to_string(), hub));
            ids.push((v, reader_keyword(idx)));
        }
        ids.shuffle(&mut rng);
        for (k, (v, kw)) in ids.iter().enumerate() {
            let ex = |message| TrainExample {
                message,
                start: hub,
                target: *v,
            };
            if k < seen_per_hub {
                train.push(ex(ask(kw)));
                if k == 0 {
                    test.push(ex(rephrase(kw)));
                }
            } else {
                test.push(ex(ask(kw)));
            }
        }
    }
    train.shuffle(&mut rng);
    let graph = AugmentedGraph::from_parts(vertices, edges)?;
    Ok(SyntheticTask {
        graph,
        train,
        test,
        horizon: 1,
        max_fanout: EpisodeConfig::default().max_fanout,
        rule: "pick the hub sentence containing the keyword named in the message".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> PlantedSpec {
        PlantedSpec {
            num_vertices: 200,
            branching: 5,
            horizon: 3,
            num_train: 500,
            num_test: 100,
            seed,
        }
    }

    #[test]
    fn structure_and_reachability() {
        let task = make_planted_task(spec(1)).unwrap();
        let g = &task.graph;
        assert_eq!(g.num_vertices(), 200);
        assert_eq!(g.num_labels(), 8);
        for v in g.vertices() {
            let out = g.out_edges(v.id);
            assert_eq!(out.len(), 5);
            let mut labels: Vec<_> = out.iter().map(|e| e.label).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), 5, "labels distinct per vertex");
            let mut dsts: Vec<_> = out.iter().map(|e| e.dst).collect();
            dsts.sort();
            dsts.dedup();
            assert_eq!(dsts.len(), 5);
            assert!(out.iter().all(|e| e.dst != v.id));
        }
        assert_eq!((task.train.len(), task.test.len()), (500, 100));
        for ex in task.examples() {
            assert_eq!(ex.message.len(), 3);
            let mut m = ex.message.clone();
            m.sort();
            m.dedup();
            assert_eq!(m.len(), 3);
            assert_eq!(follow_signature(g, ex.start, &ex.message, 3), Some(ex.target));
            let mut shuffled = ex.message.clone();
            shuffled.reverse();
            assert_eq!(follow_signature(g, ex.start, &shuffled, 3), Some(ex.target), "order free");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_planted_task(spec(3)).unwrap();
        let b = make_planted_task(spec(3)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!((&a.train, &a.test), (&b.train, &b.test));
        let c = make_planted_task(spec(4)).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn invalid_parameters() {
        for (n, b, t) in [(1, 1, 1), (5, 0, 3), (5, 5, 3), (5, 2, 0), (10, 1, 5)] {
            let s = PlantedSpec {
                num_vertices: n,
                branching: b,
                horizon: t,
                num_train: 1,
                num_test: 0,
                seed: 0,
            };
            assert!(matches!(make_planted_task(s), Err(EvalError::Task(_))));
        }
    }

    #[test]
    fn single_branch_single_hop_is_forced() {
        let task = make_planted_task(PlantedSpec {
            num_vertices: 10,
            branching: 1,
            horizon: 1,
            num_train: 20,
            num_test: 0,
            seed: 2,
        })
        .unwrap();
        for ex in task.examples() {
            let out = task.graph.out_edges(ex.start);
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].dst, ex.target);
        }
    }

    #[test]
    fn reader_task_shape() {
        let task = make_reader_task(ReaderTaskSpec {
            hubs: 4,
            per_hub: 5,
            seen_per_hub: 3,
            seed: 1,
        })
        .unwrap();
        assert_eq!(task.train.len(), 12);
        assert_eq!(task.test.len(), 4 + 8);
        let seen: std::collections::HashSet<&String> = task.train.iter().map(|e| &e.message[3]).collect();
        let mut unseen = 0;
        for ex in task.examples() {
            let kw = ex.message.last().unwrap();
            let target = task.graph.vertex(ex.target).unwrap();
            assert!(target.tokens.contains(kw));
            let labels: Vec<_> = task.graph.out_edges(ex.start).iter().map(|e| e.label).collect();
            assert!(labels.windows(2).all(|w| w[0] == w[1]), "one label per hub");
            assert!(task.graph.has_edge(ex.start, "has_comment", ex.target));
            unseen += usize::from(!seen.contains(kw));
        }
        assert_eq!(unseen, 8);
        assert!(make_reader_task(ReaderTaskSpec { hubs: 1, per_hub: 3, seen_per_hub: 3, seed: 0 }).is_err());
    }

    #[test]
    fn random_floor_matches_exact_walk_distribution() {
        let task = make_planted_task(spec(5)).unwrap();
        let g = &task.graph;
        // Exact hit probability by pushing the uniform walk distribution
        // forward, NO_OP included.
        let exact: f64 = task
            .test
            .iter()
            .map(|ex| {
                let mut p = vec![0.0; g.num_vertices()];
                p[ex.start.index()] = 1.0;
                for _ in 0..3 {
                    let mut q = vec![0.0; p.len()];
                    for (v, &mass) in p.iter().enumerate() {
                        let out = g.out_edges(VertexId(v as u32));
                        let share = mass / (out.len() + 1) as f64;
                        q[v] += share;
                        for e in out {
                            q[e.dst.index()] += share;
                        }
                    }
                    p = q;
                }
                p[ex.target.index()]
            })
            .sum::<f64>()
            / task.test.len() as f64;
        let floor = random_policy_floor(&task, &task.test, 400, 7);
        // 40k Bernoulli draws: sd is about sqrt(p / 40000).
        let sd = (exact / 40_000.0).sqrt();
        assert!((floor - exact).abs() < 4.0 * sd, "{floor} vs {exact}");
        assert!(exact > (1.0f64 / 6.0).powi(3) && exact < 0.05, "{exact}");
    }
}

