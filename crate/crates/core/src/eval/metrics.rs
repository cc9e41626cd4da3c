use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use crate::reader::rouge_l;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the number of candidate n-grams.
fn modified_precision(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU-4 with uniform weights and brevity penalty, no smoothing:
/// zero when any of the four precisions is zero.
pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, total) = modified_precision(candidate, reference, n);
        if m == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

/// Bigram-overlap F1.
pub fn rouge2(candidate: &[String], reference: &[String]) -> f64 {
    let cand = ngram_counts(candidate, 2);
    let refs = ngram_counts(reference, 2);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / (candidate.len() - 1) as f64;
    let r = overlap as f64 / (reference.len() - 1) as f64;
    2.0 * p * r / (p + r)
}

/// Fraction of positions where prediction equals gold. `None` when the
/// lengths differ or both are empty.
pub fn hit_at_1<T: PartialEq>(predicted: &[T], gold: &[T]) -> Option<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return None;
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Some(hits as f64 / gold.len() as f64)
}

/// Averages of the text metrics over a set of pairs, plus Hit@1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub hit1: f64,
    pub text_pairs: usize,
    pub selections: usize,
}

impl MetricReport {
    /// `pairs` are `(candidate, reference)` responses; `selections` are
    /// `(predicted, gold)` vertices.
    pub fn compute<T: PartialEq>(pairs: &[(Vec<String>, Vec<String>)], selections: &[(T, T)]) -> Self {
        let mean = |f: fn(&[String], &[String]) -> f64| {
            if pairs.is_empty() {
                0.0
            } else {
                pairs.iter().map(|(c, r)| f(c, r)).sum::<f64>() / pairs.len() as f64
            }
        };
        let hit1 = if selections.is_empty() {
            0.0
        } else {
            selections.iter().filter(|(p, g)| p == g).count() as f64 / selections.len() as f64
        };
        Self {
            bleu4: mean(bleu4),
            rouge2: mean(rouge2),
            rouge_l: mean(rouge_l),
            hit1,
            text_pairs: pairs.len(),
            selections: selections.len(),
        }
    }
}
