use std::collections::HashMap;

use serde::Serialize;

use super::{AugmentedGraph, GraphError, VertexId, VertexKind};

/// Similarities closer than this count as tied; ties go to the lowest id.
const TIE_EPS: f64 = 1e-12;

/// Result of start-vertex retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Retrieval {
    pub vertex: VertexId,
    pub score: f64,
    /// Set when no vertex shares a token with the message.
    pub low_confidence: bool,
}

/// Unigram TF-IDF vectors for every vertex, stored as an inverted index.
#[derive(Clone, Debug, Default)]
pub struct TfIdfIndex {
    idf: HashMap<String, f64>,
    postings: HashMap<String, Vec<(VertexId, f64)>>,
    norms: Vec<f64>,
    num_docs: usize,
}

fn counts(tokens: &[String]) -> HashMap<&str, f64> {
    let mut tf = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    tf
}

impl TfIdfIndex {
    pub fn build(graph: &AugmentedGraph) -> Self {
        let num_docs = graph.num_vertices();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for v in graph.vertices() {
            for t in counts(&v.tokens).into_keys() {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let idf: HashMap<String, f64> = df
            .iter()
            .map(|(t, &n)| (t.to_string(), smoothed_idf(num_docs, n)))
            .collect();
        let mut postings: HashMap<String, Vec<(VertexId, f64)>> = HashMap::new();
        let mut norms = vec![0.0; num_docs];
        for v in graph.vertices() {
            let mut tf: Vec<_> = counts(&v.tokens).into_iter().collect();
            tf.sort_by(|a, b| a.0.cmp(b.0));
            let mut sq = 0.0;
            for (t, c) in tf {
                let w = c * idf[t];
                sq += w * w;
                postings.entry(t.to_string()).or_default().push((v.id, w));
            }
            norms[v.id.index()] = sq.sqrt();
        }
        Self {
            idf,
            postings,
            norms,
            num_docs,
        }
    }

    /// IDF of a token; tokens never seen get the maximum value.
    pub fn idf(&self, token: &str) -> f64 {
        self.idf
            .get(token)
            .copied()
            .unwrap_or_else(|| smoothed_idf(self.num_docs, 0))
    }

    /// Cosine similarity between the message and every vertex.
    pub fn similarities(&self, message: &[String]) -> Vec<f64> {
        let mut dots = vec![0.0; self.num_docs];
        let mut qsq = 0.0;
        let mut terms: Vec<_> = counts(message).into_iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        for (t, c) in terms {
            let w = c * self.idf(t);
            qsq += w * w;
            if let Some(list) = self.postings.get(t) {
                for &(v, dw) in list {
                    dots[v.index()] += w * dw;
                }
            }
        }
        let qn = qsq.sqrt();
        dots.iter()
            .zip(&self.norms)
            .map(|(&d, &n)| if d == 0.0 || n == 0.0 || qn == 0.0 { 0.0 } else { d / (n * qn) })
            .collect()
    }

    pub fn retrieve(&self, graph: &AugmentedGraph, message: &[String]) -> Result<Retrieval, GraphError> {
        if graph.is_empty() {
            return Err(GraphError::Empty);
        }
        let sims = self.similarities(message);
        let mut best = 0;
        for (i, &s) in sims.iter().enumerate() {
            if s > sims[best] + TIE_EPS {
                best = i;
            }
        }
        if sims[best] > 0.0 {
            return Ok(Retrieval {
                vertex: VertexId(best as u32),
                score: sims[best],
                low_confidence: false,
            });
        }
        let fallback = graph
            .vertices()
            .iter()
            .find(|v| v.kind == VertexKind::Entity)
            .map_or(VertexId(0), |v| v.id);
        Ok(Retrieval {
            vertex: fallback,
            score: 0.0,
            low_confidence: true,
        })
    }
}

/// `ln((1 + n) / (1 + df)) + 1`, positive for every df.
pub fn smoothed_idf(num_docs: usize, df: usize) -> f64 {
    ((1.0 + num_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}
