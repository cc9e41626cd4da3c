use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{valid_entity_surface, AugmentedGraph, GraphError, VertexId, VertexKind, INVERSE_SUFFIX, NO_OP};
use crate::text;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Free text attached to an anchor entity (plot, comment, review...).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub anchor: String,
    pub body: String,
}

impl Document {
    pub fn new(anchor: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            anchor: anchor.into(),
            body: body.into(),
        }
    }
}

#[derive(Default)]
struct VertexTable {
    parts: Vec<(VertexKind, String)>,
    by_tokens: HashMap<Vec<String>, (VertexId, VertexKind)>,
}

impl VertexTable {
    fn intern(&mut self, kind: VertexKind, surface: &str, tokens: Vec<String>) -> Result<VertexId, GraphError> {
        if let Some(&(id, existing)) = self.by_tokens.get(&tokens) {
            if existing != kind {
                return Err(GraphError::ConflictingKind {
                    surface: surface.to_string(),
                });
            }
            return Ok(id);
        }
        let id = VertexId(self.parts.len() as u32);
        self.parts.push((kind, surface.trim().to_string()));
        self.by_tokens.insert(tokens, (id, kind));
        Ok(id)
    }

    fn entity(&mut self, surface: &str) -> Result<VertexId, GraphError> {
        if !valid_entity_surface(surface) {
            return Err(GraphError::InvalidEntity(surface.to_string()));
        }
        self.intern(VertexKind::Entity, surface, text::normalize(surface))
    }
}

/// Builds the augmented graph.
///
/// Entity vertices come first (in order of first mention across triples, then
/// document anchors), followed by sentence vertices in document order. Every
/// sentence is linked from its anchor and from each entity whose token
/// sequence occurs contiguously inside it. Every edge gets a `_inv` twin.
pub fn build_graph(
    triples: &[Triple],
    documents: &[Document],
    alignment_label: &str,
) -> Result<AugmentedGraph, GraphError> {
    let alignment_label = alignment_label.trim();
    if alignment_label.is_empty() {
        return Err(GraphError::EmptyRelation {
            head: "<document anchor>".into(),
            tail: "<sentence>".into(),
        });
    }
    if alignment_label == NO_OP {
        return Err(GraphError::ReservedLabel(alignment_label.to_string()));
    }

    let mut table = VertexTable::default();
    let mut edges: Vec<(VertexId, String, VertexId)> = Vec::new();

    for t in triples {
        let relation = t.relation.trim();
        if relation.is_empty() {
            return Err(GraphError::EmptyRelation {
                head: t.head.clone(),
                tail: t.tail.clone(),
            });
        }
        if relation == NO_OP {
            return Err(GraphError::ReservedLabel(relation.to_string()));
        }
        let head = table.entity(&t.head)?;
        let tail = table.entity(&t.tail)?;
        edges.push((head, relation.to_string(), tail));
    }
    let anchors = documents
        .iter()
        .map(|d| table.entity(&d.anchor))
        .collect::<Result<Vec<_>, _>>()?;

    // Entities by first token, for containment matching.
    let mut by_first: HashMap<String, Vec<(Vec<String>, VertexId)>> = HashMap::new();
    for (tokens, &(id, kind)) in &table.by_tokens {
        if kind == VertexKind::Entity {
            by_first
                .entry(tokens[0].clone())
                .or_default()
                .push((tokens.clone(), id));
        }
    }

    for (doc, &anchor) in documents.iter().zip(&anchors) {
        for sentence in text::segment_sentences(&doc.body) {
            let tokens = text::normalize(&sentence);
            if tokens.is_empty() {
                continue;
            }
            let sid = table.intern(VertexKind::Sentence, &sentence, tokens.clone())?;
            edges.push((anchor, alignment_label.to_string(), sid));
            for (pos, tok) in tokens.iter().enumerate() {
                let Some(cands) = by_first.get(tok) else { continue };
                for (etoks, eid) in cands {
                    if tokens[pos..].starts_with(etoks) {
                        edges.push((*eid, alignment_label.to_string(), sid));
                    }
                }
            }
        }
    }

    let inverse: Vec<_> = edges
        .iter()
        .map(|(s, l, d)| (*d, format!("{l}{INVERSE_SUFFIX}"), *s))
        .collect();
    edges.extend(inverse);
    AugmentedGraph::from_parts(table.parts, edges)
}
