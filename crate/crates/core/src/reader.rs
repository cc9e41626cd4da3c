//! Reading-comprehension scoring of candidate destinations.
//!
//! The texts of all candidate destinations are concatenated into one
//! document, a [`SpanReader`] extracts the answer span for the message, and
//! each candidate is scored by ROUGE-L against that span. The default reader
//! is lexical; a trained reader can implement the same trait.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::env::ActionCandidate;
use crate::graph::{AugmentedGraph, VertexKind};

pub const DEFAULT_WINDOW: usize = 30;

/// Scores closer than this count as tied, so summation order cannot break
/// ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ReaderError {
    #[error("candidate document is empty")]
    EmptyDocument,
    #[error("span window must be positive")]
    ZeroWindow,
}

/// Candidate texts laid end to end. Segment `i` belongs to candidate `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateDocument {
    flat: Vec<String>,
    offsets: Vec<usize>,
}

impl CandidateDocument {
    pub fn new<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[String]>,
    {
        let mut flat = Vec::new();
        let mut offsets = vec![0];
        for seg in segments {
            flat.extend_from_slice(seg.as_ref());
            offsets.push(flat.len());
        }
        Self { flat, offsets }
    }

    pub fn flat(&self) -> &[String] {
        &self.flat
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `[start, end)` of segment `i` within [`flat`](Self::flat).
    pub fn segment_range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.offsets[i + 1])
    }

    pub fn segment(&self, i: usize) -> &[String] {
        let (s, e) = self.segment_range(i);
        &self.flat[s..e]
    }

    /// Index of the segment containing flat offset `pos`.
    pub fn segment_of(&self, pos: usize) -> usize {
        self.offsets.partition_point(|&o| o <= pos) - 1
    }
}

/// Answer span `[start, end)` over the flat document.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

pub trait SpanReader: Send + Sync {
    fn predict_span(&self, doc: &CandidateDocument, query: &[String]) -> Result<SpanPrediction, ReaderError>;
}

/// Picks the window of at most `window` tokens, inside one segment, that
/// maximizes the summed IDF of tokens also present in the query. Ties go to
/// the earliest start, then the shortest window.
#[derive(Clone, Debug)]
pub struct LexicalReader {
    idf: Arc<HashMap<String, f64>>,
    unseen_idf: f64,
    window: usize,
}

impl LexicalReader {
    /// IDF is computed over the graph's sentence vertices.
    pub fn from_graph(graph: &AugmentedGraph, window: usize) -> Result<Self, ReaderError> {
        let docs: Vec<&[String]> = graph
            .vertices()
            .iter()
            .filter(|v| v.kind == VertexKind::Sentence)
            .map(|v| v.tokens.as_slice())
            .collect();
        Self::from_documents(&docs, window)
    }

    pub fn from_documents(docs: &[&[String]], window: usize) -> Result<Self, ReaderError> {
        if window == 0 {
            return Err(ReaderError::ZeroWindow);
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in docs {
            let uniq: HashSet<&str> = d.iter().map(String::as_str).collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let n = docs.len();
        let idf = df
            .into_iter()
            .map(|(t, c)| (t.to_string(), crate::graph::smoothed_idf(n, c)))
            .collect();
        Ok(Self {
            idf: Arc::new(idf),
            unseen_idf: crate::graph::smoothed_idf(n, 0),
            window,
        })
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.idf.get(token).copied().unwrap_or(self.unseen_idf)
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl SpanReader for LexicalReader {
    fn predict_span(&self, doc: &CandidateDocument, query: &[String]) -> Result<SpanPrediction, ReaderError> {
        if doc.flat().is_empty() {
            return Err(ReaderError::EmptyDocument);
        }
        let query: HashSet<&str> = query.iter().map(String::as_str).collect();
        let weights: Vec<f64> = doc
            .flat()
            .iter()
            .map(|t| if query.contains(t.as_str()) { self.idf(t) } else { 0.0 })
            .collect();
        let mut best: Option<SpanPrediction> = None;
        for seg in 0..doc.num_segments() {
            let (lo, hi) = doc.segment_range(seg);
            for start in lo..hi {
                let mut score = 0.0;
                for end in start + 1..=(start + self.window).min(hi) {
                    score += weights[end - 1];
                    if best.is_none_or(|b| score > b.score + TIE_EPS) {
                        best = Some(SpanPrediction { start, end, score });
                    }
                }
            }
        }
        Ok(best.expect("non-empty document has a window"))
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1-form ROUGE-L of `candidate` against `reference`.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Reader-head scores, one per action: ROUGE-L of each destination's text
/// against the span the reader extracts from all destinations together.
/// When the span shares nothing with the query every score is 0.
pub fn score_candidates_global(
    actions: &[ActionCandidate],
    graph: &AugmentedGraph,
    query: &[String],
    reader: &dyn SpanReader,
) -> Result<Vec<f64>, ReaderError> {
    let texts: Vec<&[String]> = actions
        .iter()
        .map(|a| graph.vertex(a.dst).map_or(&[][..], |v| v.tokens.as_slice()))
        .collect();
    let doc = CandidateDocument::new(texts.iter().copied());
    let span = reader.predict_span(&doc, query)?;
    if span.score <= 0.0 {
        return Ok(vec![0.0; actions.len()]);
    }
    let answer = &doc.flat()[span.start..span.end];
    Ok(texts.iter().map(|t| rouge_l(t, answer)).collect())
}
