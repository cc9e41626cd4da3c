//! One chat turn: retrieve a start vertex, walk the graph to a knowledge
//! vertex, and turn that vertex into a response.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::config::{AppConfig, ConfigError, GeneratorKind};
use crate::env::{EpisodeConfig, Environment};
use crate::generator::{compose_copy, Generator, GeneratorError};
use crate::graph::{load_graph, AugmentedGraph, GraphError, Retrieval, VertexId};
use crate::policy::{Agent, EpisodeTrace, Policy, PolicyError};
use crate::reader::{LexicalReader, ReaderError};
use crate::text::normalize;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("message has no tokens")]
    EmptyMessage,
    #[error("message has {tokens} tokens, the limit is {limit}")]
    TooLong { tokens: usize, limit: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Clone, Debug)]
pub struct ChatSettings {
    pub episode: EpisodeConfig,
    /// 1 means greedy decoding.
    pub beam_width: usize,
    pub max_message_tokens: usize,
    pub reader_window: usize,
    /// Cap on generated tokens for the neural generator.
    pub max_response_tokens: usize,
}

/// One hop of the selected path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathHop {
    pub src: VertexId,
    pub label: String,
    pub dst: VertexId,
    /// Up to five `(label, destination, probability)` entries.
    pub top5: Vec<(String, VertexId, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Turn {
    pub message: Vec<String>,
    pub retrieval: Retrieval,
    pub selected: VertexId,
    pub path: Vec<PathHop>,
    pub knowledge_text: String,
    pub response: Vec<String>,
    #[serde(skip)]
    pub trace: EpisodeTrace,
}

impl Turn {
    pub fn response_text(&self) -> String {
        self.response.join(" ")
    }
}

/// Read-only after construction, so one engine can serve many threads.
pub struct ChatEngine {
    graph: Arc<AugmentedGraph>,
    policy: Policy,
    reader: Option<LexicalReader>,
    generator: Option<Generator>,
    settings: ChatSettings,
}

impl ChatEngine {
    /// `generator` selects the neural generator; `None` uses the copy
    /// baseline.
    pub fn new(
        graph: Arc<AugmentedGraph>,
        policy: Policy,
        generator: Option<Generator>,
        settings: ChatSettings,
    ) -> Result<Self, ChatError> {
        policy.check_graph(&graph)?;
        settings.episode.validate().map_err(PolicyError::from)?;
        if settings.beam_width == 0 {
            return Err(PolicyError::Config("beam_width must be at least 1".into()).into());
        }
        let reader = if policy.config().heads.reader {
            Some(LexicalReader::from_graph(&graph, settings.reader_window)?)
        } else {
            None
        };
        Ok(Self {
            graph,
            policy,
            reader,
            generator,
            settings,
        })
    }

    /// Loads the graph, policy and, when configured, the neural generator
    /// named in `cfg`. Beam search is used only when `chat.beam` is set.
    pub fn from_config(cfg: &AppConfig) -> Result<Self, ChatError> {
        let graph = Arc::new(load_graph(cfg.existing("paths.graph")?)?);
        let policy = Policy::load(cfg.existing("paths.policy_checkpoint")?)?;
        let generator = match cfg.chat.generator {
            GeneratorKind::Copy => None,
            GeneratorKind::Neural => Some(Generator::load(cfg.existing("paths.generator_checkpoint")?)?),
        };
        let settings = ChatSettings {
            episode: cfg.env,
            beam_width: if cfg.chat.beam { cfg.policy.beam_width } else { 1 },
            max_message_tokens: cfg.chat.max_message_tokens,
            reader_window: cfg.eval.reader_window,
            max_response_tokens: cfg.generator.max_len,
        };
        Self::new(graph, policy, generator, settings)
    }

    pub fn graph(&self) -> &AugmentedGraph {
        &self.graph
    }

    pub fn settings(&self) -> &ChatSettings {
        &self.settings
    }

    /// Token count after normalization, checked against the limit.
    pub fn tokenize(&self, text: &str) -> Result<Vec<String>, ChatError> {
        let tokens = normalize(text);
        if tokens.is_empty() {
            return Err(ChatError::EmptyMessage);
        }
        if tokens.len() > self.settings.max_message_tokens {
            return Err(ChatError::TooLong {
                tokens: tokens.len(),
                limit: self.settings.max_message_tokens,
            });
        }
        Ok(tokens)
    }

    /// Runs one turn. Only the current message conditions the selection.
    pub fn respond(&self, text: &str) -> Result<Turn, ChatError> {
        let message = self.tokenize(text)?;
        let retrieval = self.graph.retrieve_start_vertex(&message)?;
        let env = Environment::new(&self.graph, self.settings.episode).map_err(PolicyError::from)?;
        let reader = self.reader.as_ref().map(|r| r as &dyn crate::reader::SpanReader);
        let agent = Agent::new(&self.policy, env, reader)?;
        let (selected, trace) = agent.select_knowledge(retrieval.vertex, &message, self.settings.beam_width)?;

        let path = trace
            .steps
            .iter()
            .map(|s| {
                let a = s.action();
                PathHop {
                    src: a.src,
                    label: a.label_name(&self.graph).to_string(),
                    dst: a.dst,
                    top5: s
                        .top_k(5)
                        .into_iter()
                        .map(|(c, p)| (c.label_name(&self.graph).to_string(), c.dst, p))
                        .collect(),
                }
            })
            .collect();
        let vertex = self.graph.vertex(selected).ok_or(GraphError::UnknownVertex(selected))?;
        let response = match &self.generator {
            None => compose_copy(vertex),
            Some(g) => g.generate(&message, &vertex.tokens, self.settings.max_response_tokens)?,
        };
        Ok(Turn {
            message,
            retrieval,
            selected,
            path,
            knowledge_text: vertex.surface.clone(),
            response,
            trace,
        })
    }
}

/// `v0 —label→ v1 —label→ … vT`, using vertex surfaces.
pub fn format_path(graph: &AugmentedGraph, start: VertexId, path: &[PathHop]) -> String {
    let surface = |v: VertexId| graph.vertex(v).map_or_else(|| format!("#{}", v.0), |x| x.surface.clone());
    let mut out = surface(start);
    for hop in path {
        out.push_str(&format!(" —{}→ {}", hop.label, surface(hop.dst)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Heads, PolicyConfig};
    use crate::testing::twenty_vertex_graph;
    use crate::vocab::Vocab;

    fn engine(beam: usize, horizon: usize) -> ChatEngine {
        let graph = Arc::new(twenty_vertex_graph());
        let vocab = Vocab::build(graph.vertices().iter().map(|v| &v.tokens));
        let cfg = PolicyConfig {
            dim: 4,
            hidden: 8,
            heads: Heads::default(),
            ..PolicyConfig::default()
        };
        let policy = Policy::new(&graph, vocab, cfg, 1).unwrap();
        let settings = ChatSettings {
            episode: EpisodeConfig {
                horizon,
                ..EpisodeConfig::default()
            },
            beam_width: beam,
            max_message_tokens: 6,
            reader_window: 30,
            max_response_tokens: 20,
        };
        ChatEngine::new(graph, policy, None, settings).unwrap()
    }

    #[test]
    fn path_has_horizon_hops_of_real_edges() {
        for (beam, t) in [(1, 1), (1, 3), (4, 2)] {
            let e = engine(beam, t);
            let turn = e.respond("who directed toy story").unwrap();
            assert_eq!(turn.path.len(), t);
            assert_eq!(turn.trace.start, turn.retrieval.vertex);
            let mut at = turn.retrieval.vertex;
            for hop in &turn.path {
                assert_eq!(hop.src, at);
                assert!(hop.label == crate::graph::NO_OP && hop.dst == at || e.graph().has_edge(at, &hop.label, hop.dst));
                assert!(!hop.top5.is_empty() && hop.top5.len() <= 5);
                at = hop.dst;
            }
            assert_eq!(at, turn.selected);
            let line = format_path(e.graph(), turn.retrieval.vertex, &turn.path);
            assert_eq!(line.matches('→').count(), t);
            assert_eq!(turn.response, compose_copy(e.graph().vertex(turn.selected).unwrap()));
        }
    }

    #[test]
    fn greedy_is_repeatable() {
        let e = engine(1, 2);
        let a = e.respond("the climax is great").unwrap();
        let b = e.respond("the climax is great").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn message_limits() {
        let e = engine(1, 1);
        assert!(matches!(e.respond("  ... "), Err(ChatError::EmptyMessage)));
        assert!(matches!(e.respond("a b c d e f g"), Err(ChatError::TooLong { tokens: 7, limit: 6 })));
    }
}
