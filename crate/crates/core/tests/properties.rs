use std::collections::HashMap;

use proptest::prelude::*;

use kgselect::env::{EpisodeConfig, Environment};
use kgselect::eval::metrics::{bleu4, rouge2};
use kgselect::eval::planted::{follow_signature, make_planted_task, PlantedSpec};
use kgselect::graph::{build_graph, read_graph, write_graph, Document, Triple, VertexId, VertexKind, INVERSE_SUFFIX};
use kgselect::policy::combine_scores;
use kgselect::reader::{lcs_len, rouge_l, CandidateDocument, LexicalReader, SpanReader};
use kgselect::trainer::Baseline;

const WORDS: [&str; 10] = ["paris", "rome", "film", "river", "old", "city", "the", "blue", "north", "light"];

fn words(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), min..=max).prop_map(|w| w.join(" "))
}

fn phrase(max: usize) -> impl Strategy<Value = String> {
    words(1, max)
}

fn triples() -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec(
        (phrase(2), prop::sample::select(vec!["near", "in", "about"]), phrase(2)),
        0..8,
    )
    .prop_map(|v| v.into_iter().map(|(h, r, t)| Triple::new(&h, r, &t)).collect())
}

fn documents() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec((phrase(2), prop::collection::vec(words(3, 6), 1..3)), 0..5).prop_map(|v| {
        v.into_iter()
            .map(|(a, sents)| Document::new(&a, sents.iter().map(|s| format!("{s}.")).collect::<Vec<_>>().join(" ")))
            .collect()
    })
}

fn tokens(alphabet: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..alphabet).prop_map(|i| format!("t{i}")), 0..=max)
}

/// Cosine similarity of unigram TF-IDF vectors, computed densely.
fn dense_similarity(graph: &kgselect::graph::AugmentedGraph, message: &[String]) -> Vec<f64> {
    let n = graph.num_vertices();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for v in graph.vertices() {
        let mut seen: Vec<&str> = v.tokens.iter().map(String::as_str).collect();
        seen.sort();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let idf = |t: &str| ((1.0 + n as f64) / (1.0 + *df.get(t).unwrap_or(&0) as f64)).ln() + 1.0;
    let vec_of = |toks: &[String]| -> HashMap<String, f64> {
        let mut m: HashMap<String, f64> = HashMap::new();
        for t in toks {
            *m.entry(t.clone()).or_default() += 1.0;
        }
        m.into_iter().map(|(t, c)| { let w = c * idf(&t); (t, w) }).collect()
    };
    let q = vec_of(message);
    let qn = q.values().map(|x| x * x).sum::<f64>().sqrt();
    graph
        .vertices()
        .iter()
        .map(|v| {
            let d = vec_of(&v.tokens);
            let dot: f64 = q.iter().map(|(t, w)| w * d.get(t).unwrap_or(&0.0)).sum();
            let dn = d.values().map(|x| x * x).sum::<f64>().sqrt();
            if dot == 0.0 { 0.0 } else { dot / (qn * dn) }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_graphs_keep_structural_invariants(t in triples(), d in documents()) {
        let g = build_graph(&t, &d, "has_comment").unwrap();
        let align = g.label_id("has_comment");
        for v in g.vertices() {
            if v.kind == VertexKind::Sentence {
                prop_assert!(!v.tokens.is_empty());
                let aligned = g.edges().any(|e| e.dst == v.id && Some(e.label) == align);
                prop_assert!(aligned, "sentence {} has no alignment in-edge", v.surface);
            } else {
                prop_assert!(!v.surface.is_empty());
                prop_assert_eq!(g.entity(&v.surface), Some(v.id));
            }
        }
        prop_assert_eq!(g.entity_count(), g.vertices().iter().filter(|v| v.kind == VertexKind::Entity).count());
        for e in g.edges() {
            prop_assert!(g.contains(e.src) && g.contains(e.dst));
            let name = g.label_name(e.label);
            let inverse = match name.strip_suffix(INVERSE_SUFFIX) {
                Some(base) => base.to_string(),
                None => format!("{name}{INVERSE_SUFFIX}"),
            };
            prop_assert!(g.has_edge(e.dst, &inverse, e.src), "no inverse for {}", name);
            prop_assert_ne!(name, kgselect::graph::NO_OP);
        }
        let mut buf = Vec::new();
        write_graph(&g, &mut buf).unwrap();
        prop_assert_eq!(read_graph(buf.as_slice()).unwrap(), g.clone());
        prop_assert_eq!(build_graph(&t, &d, "has_comment").unwrap(), g);
    }

    #[test]
    fn retrieval_is_the_exhaustive_argmax(t in triples(), d in documents(), m in phrase(4)) {
        let g = build_graph(&t, &d, "has_comment").unwrap();
        prop_assume!(!g.is_empty());
        let msg: Vec<String> = m.split(' ').map(str::to_string).collect();
        let sims = dense_similarity(&g, &msg);
        let best = sims.iter().cloned().fold(0.0, f64::max);
        let got = g.retrieve_start_vertex(&msg).unwrap();
        if best > 0.0 {
            let first = sims.iter().position(|&s| (s - best).abs() <= 1e-9).unwrap();
            prop_assert_eq!(got.vertex, VertexId(first as u32));
            prop_assert!((got.score - best).abs() <= 1e-9);
            prop_assert!(!got.low_confidence);
        } else {
            prop_assert!(got.low_confidence);
        }
    }

    #[test]
    fn actions_are_never_empty_and_stay_on_edges(t in triples(), d in documents(), fanout in 1usize..4, horizon in 1usize..4) {
        let g = build_graph(&t, &d, "has_comment").unwrap();
        let env = Environment::new(&g, EpisodeConfig { horizon, max_fanout: fanout }).unwrap();
        for v in g.vertices() {
            let acts = env.actions_at(v.id);
            prop_assert!(!acts.is_empty() && acts.len() <= fanout);
            prop_assert!(acts[0].is_no_op() && acts[0].dst == v.id);
            for a in &acts[1..] {
                prop_assert!(g.has_edge(a.src, a.label_name(&g), a.dst));
            }
            let mut s = env.reset(v.id, vec!["m".to_string()], None).unwrap();
            let mut reach = vec![v.id];
            while s.t < horizon {
                let a = *env.available_actions(&s).last().unwrap();
                let next = env.step(&s, &a).unwrap();
                prop_assert_eq!(&env.step(&s, &a).unwrap(), &next);
                prop_assert!(env.reachable(v.id, next.current));
                reach.push(next.current);
                s = next;
            }
            prop_assert_eq!(s.t, horizon);
        }
    }

    #[test]
    fn rouge_l_properties(a in tokens(4, 12), b in tokens(4, 12)) {
        prop_assert!((rouge_l(&a, &b) - rouge_l(&b, &a)).abs() < 1e-12);
        let r = rouge_l(&a, &b);
        prop_assert!((0.0..=1.0).contains(&r));
        let l = lcs_len(&a, &b);
        prop_assert!(l <= a.len().min(b.len()));
        if !a.is_empty() {
            prop_assert_eq!(rouge_l(&a, &a), 1.0);
        }
    }

    #[test]
    fn metric_ranges(a in tokens(5, 15), b in tokens(5, 15)) {
        for m in [bleu4(&a, &b), rouge2(&a, &b), rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
        }
        if a.len() >= 4 {
            prop_assert!((bleu4(&a, &a) - 1.0).abs() < 1e-12);
        }
        if a.len() >= 2 {
            prop_assert!((rouge2(&a, &a) - 1.0).abs() < 1e-12);
        }
        let disjoint: Vec<String> = b.iter().map(|t| format!("x{t}")).collect();
        prop_assert_eq!(bleu4(&a, &disjoint), 0.0);
        prop_assert_eq!(rouge2(&a, &disjoint), 0.0);
        prop_assert_eq!(rouge_l(&a, &disjoint), 0.0);
    }

    #[test]
    fn spans_lie_inside_one_segment(segs in prop::collection::vec(tokens(8, 10), 1..6), q in tokens(8, 4), window in 1usize..8) {
        let doc = CandidateDocument::new(segs.iter());
        prop_assume!(!doc.flat().is_empty());
        let mut covered = 0;
        for i in 0..doc.num_segments() {
            let (s, e) = doc.segment_range(i);
            prop_assert_eq!(s, covered);
            prop_assert_eq!(doc.segment(i), segs[i].as_slice());
            covered = e;
        }
        prop_assert_eq!(covered, doc.flat().len());
        let reader = LexicalReader::from_documents(&[], window).unwrap();
        let span = reader.predict_span(&doc, &q).unwrap();
        prop_assert!(span.start < span.end && span.end <= doc.flat().len());
        prop_assert!(span.end - span.start <= window);
        prop_assert_eq!(doc.segment_of(span.start), doc.segment_of(span.end - 1));
    }

    #[test]
    fn mixed_distribution_is_valid_and_shift_invariant(
        scores in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..1.0), 1..12),
        mix in prop::array::uniform3(-2.0f64..2.0),
        shift in -50.0f64..50.0,
    ) {
        let f: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let b: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let r: Vec<f64> = scores.iter().map(|s| s.2).collect();
        let p = combine_scores(&f, &b, &r, mix).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assume!(mix[0].abs() > 1e-3);
        let shifted: Vec<f64> = f.iter().map(|x| x + shift / mix[0]).collect();
        let q = combine_scores(&shifted, &b, &r, mix).unwrap();
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn baseline_stays_in_unit_interval(rewards in prop::collection::vec(prop::collection::vec(0u8..2, 1..10), 1..40), decay in 0.0f64..1.0) {
        let mut b = Baseline::default();
        for batch in rewards {
            let mean = batch.iter().map(|&r| r as f64).sum::<f64>() / batch.len() as f64;
            b.update(mean, decay);
            prop_assert!((0.0..=1.0).contains(&b.value));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn planted_examples_follow_their_signature(n in 8usize..40, branching in 1usize..4, horizon in 1usize..4, seed in 0u64..1000) {
        prop_assume!(n > branching + 1);
        let task = make_planted_task(PlantedSpec {
            num_vertices: n,
            branching,
            horizon,
            num_train: 20,
            num_test: 5,
            seed,
        });
        let Ok(task) = task else { return Ok(()); };
        let env = Environment::new(&task.graph, task.episode_config()).unwrap();
        for ex in task.examples() {
            prop_assert_eq!(follow_signature(&task.graph, ex.start, &ex.message, horizon), Some(ex.target));
            prop_assert!(env.reachable(ex.start, ex.target));
        }
    }
}
