//! The augmented knowledge graph: entity vertices from factoid triples plus
//! sentence vertices aligned to the entities they mention.

mod build;
mod io;
mod retrieve;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub use build::{build_graph, Document, Triple};
pub use io::{load_graph, read_graph, save_graph, write_graph};
pub use retrieve::{smoothed_idf, Retrieval, TfIdfIndex};

/// Reserved label of the synthetic self-loop action.
pub const NO_OP: &str = "NO_OP";
/// Suffix appended to a label to name its reverse edge.
pub const INVERSE_SUFFIX: &str = "_inv";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex text {surface:?} appears as both an entity and a sentence")]
    ConflictingKind { surface: String },
    #[error("invalid entity surface {0:?}")]
    InvalidEntity(String),
    #[error("sentence {0:?} has no tokens")]
    EmptySentence(String),
    #[error("relation of triple ({head:?}, _, {tail:?}) is empty")]
    EmptyRelation { head: String, tail: String },
    #[error("label {0:?} is reserved")]
    ReservedLabel(String),
    #[error("edge ({src}, {label}, {dst}) references a missing vertex")]
    DanglingEdge {
        src: VertexId,
        label: String,
        dst: VertexId,
    },
    #[error("graph is empty")]
    Empty,
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Index into [`AugmentedGraph::labels`]. Label ids follow the lexicographic
/// order of label strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Entity,
    Sentence,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub id: VertexId,
    pub kind: VertexKind,
    pub surface: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: VertexId,
    pub label: LabelId,
    pub dst: VertexId,
}

/// Immutable after construction; share it behind `&` or `Arc` freely.
#[derive(Clone, Debug, Default)]
pub struct AugmentedGraph {
    vertices: Vec<Vertex>,
    out_edges: Vec<Vec<Edge>>,
    labels: Vec<String>,
    entity_index: HashMap<Vec<String>, VertexId>,
    tfidf: OnceLock<TfIdfIndex>,
}

impl PartialEq for AugmentedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.labels == other.labels
            && self.out_edges == other.out_edges
    }
}

/// Checks the entity-surface invariant: non-empty tokens and no internal
/// sentence boundary.
pub(crate) fn valid_entity_surface(surface: &str) -> bool {
    !text::normalize(surface).is_empty() && text::segment_sentences(surface).len() == 1
}

impl AugmentedGraph {
    /// Assembles a graph from vertex descriptions and labeled edges. Vertex
    /// ids are assigned densely in input order. Duplicate edges collapse.
    /// No inverse edges are synthesized here.
    pub fn from_parts<S: AsRef<str>>(
        vertices: Vec<(VertexKind, String)>,
        edges: impl IntoIterator<Item = (VertexId, S, VertexId)>,
    ) -> Result<Self, GraphError> {
        let mut table = Vec::with_capacity(vertices.len());
        let mut entity_index = HashMap::new();
        for (i, (kind, surface)) in vertices.into_iter().enumerate() {
            let tokens = text::normalize(&surface);
            match kind {
                VertexKind::Entity if !valid_entity_surface(&surface) => {
                    return Err(GraphError::InvalidEntity(surface));
                }
                VertexKind::Sentence if tokens.is_empty() => {
                    return Err(GraphError::EmptySentence(surface));
                }
                _ => {}
            }
            let id = VertexId(i as u32);
            if kind == VertexKind::Entity {
                entity_index.entry(tokens.clone()).or_insert(id);
            }
            table.push(Vertex {
                id,
                kind,
                surface,
                tokens,
            });
        }

        let mut raw: BTreeSet<(String, VertexId, VertexId)> = BTreeSet::new();
        for (src, label, dst) in edges {
            let label = label.as_ref();
            if src.index() >= table.len() || dst.index() >= table.len() {
                return Err(GraphError::DanglingEdge {
                    src,
                    label: label.to_string(),
                    dst,
                });
            }
            if label == NO_OP {
                return Err(GraphError::ReservedLabel(label.to_string()));
            }
            raw.insert((label.to_string(), src, dst));
        }

        let labels: Vec<String> = raw
            .iter()
            .map(|(l, _, _)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let label_ids: HashMap<&str, LabelId> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), LabelId(i as u32)))
            .collect();
        let mut out_edges = vec![Vec::new(); table.len()];
        // `raw` is ordered by (label, src, dst) so pushes keep (label, dst) order.
        for (label, src, dst) in &raw {
            out_edges[src.index()].push(Edge {
                src: *src,
                label: label_ids[label.as_str()],
                dst: *dst,
            });
        }

        Ok(Self {
            vertices: table,
            out_edges,
            labels,
            entity_index,
            tfidf: OnceLock::new(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Vertex> {
        self.vertices.get(id.index())
    }

    pub fn contains(&self, id: VertexId) -> bool {
        id.index() < self.vertices.len()
    }

    /// Out-edges of `id`, sorted by (label, dst). Unknown ids have none.
    pub fn out_edges(&self, id: VertexId) -> &[Edge] {
        self.out_edges.get(id.index()).map_or(&[], Vec::as_slice)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.out_edges.iter().flatten()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, id: LabelId) -> &str {
        &self.labels[id.index()]
    }

    pub fn label_id(&self, name: &str) -> Option<LabelId> {
        self.labels
            .binary_search_by(|l| l.as_str().cmp(name))
            .ok()
            .map(|i| LabelId(i as u32))
    }

    /// Looks up an entity vertex by its normalized token sequence.
    pub fn entity(&self, surface: &str) -> Option<VertexId> {
        self.entity_index.get(&text::normalize(surface)).copied()
    }

    pub fn entity_count(&self) -> usize {
        self.entity_index.len()
    }

    pub fn has_edge(&self, src: VertexId, label: &str, dst: VertexId) -> bool {
        self.out_edges(src)
            .iter()
            .any(|e| e.dst == dst && self.label_name(e.label) == label)
    }

    /// TF-IDF index over all vertices, built on first use.
    pub fn tfidf(&self) -> &TfIdfIndex {
        self.tfidf.get_or_init(|| TfIdfIndex::build(self))
    }

    pub fn retrieve_start_vertex(&self, message: &[String]) -> Result<Retrieval, GraphError> {
        self.tfidf().retrieve(self, message)
    }

    /// Copy of the graph with every Sentence vertex (and incident edge)
    /// removed. The returned table maps each new id to its original id.
    pub fn without_sentences(&self) -> (AugmentedGraph, Vec<VertexId>) {
        let mut remap = vec![None; self.vertices.len()];
        let mut origin = Vec::new();
        let mut parts = Vec::new();
        for v in &self.vertices {
            if v.kind == VertexKind::Entity {
                remap[v.id.index()] = Some(VertexId(origin.len() as u32));
                origin.push(v.id);
                parts.push((v.kind, v.surface.clone()));
            }
        }
        let edges: Vec<_> = self
            .edges()
            .filter_map(|e| {
                Some((
                    remap[e.src.index()]?,
                    self.label_name(e.label).to_string(),
                    remap[e.dst.index()]?,
                ))
            })
            .collect();
        let graph = Self::from_parts(parts, edges)
            .expect("subgraph of a valid graph is valid");
        (graph, origin)
    }
}
