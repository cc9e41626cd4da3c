//! The walk environment: a deterministic, partially observed decision
//! process over the augmented graph.
//!
//! An episode starts at the retrieved vertex and lasts exactly `horizon`
//! steps. At every step the agent may follow an out-edge or stay put via the
//! synthetic `NO_OP` self-loop. The only reward is terminal: 1 when the final
//! vertex is the hidden ground truth, 0 otherwise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AugmentedGraph, LabelId, VertexId, NO_OP};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(VertexId),
    #[error("action {0:?} is not available in the current state")]
    UnavailableAction(ActionCandidate),
    #[error("episode already reached its horizon of {0} steps")]
    HorizonReached(usize),
    #[error("reward requested at step {t} before the horizon {horizon}")]
    NotTerminal { t: usize, horizon: usize },
    #[error("state carries no ground truth")]
    NoGroundTruth,
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Cap on the number of enumerated actions, `NO_OP` included.
    pub max_fanout: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            max_fanout: 200,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be at least 1".into()));
        }
        if self.max_fanout == 0 {
            return Err(EnvError::Config("max_fanout must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionLabel {
    NoOp,
    Edge(LabelId),
}

/// An outgoing edge `(src, label, dst)` or the `NO_OP` self-loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub src: VertexId,
    pub label: ActionLabel,
    pub dst: VertexId,
}

impl ActionCandidate {
    pub fn no_op(at: VertexId) -> Self {
        Self {
            src: at,
            label: ActionLabel::NoOp,
            dst: at,
        }
    }

    pub fn is_no_op(&self) -> bool {
        self.label == ActionLabel::NoOp
    }

    pub fn label_name<'g>(&self, graph: &'g AugmentedGraph) -> &'g str {
        match self.label {
            ActionLabel::NoOp => NO_OP,
            ActionLabel::Edge(l) => graph.label_name(l),
        }
    }
}

/// Full state, including the hidden ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub current: VertexId,
    pub start: VertexId,
    pub message: Arc<[String]>,
    ground_truth: Option<VertexId>,
    pub t: usize,
}

impl EnvState {
    pub fn ground_truth(&self) -> Option<VertexId> {
        self.ground_truth
    }
}

/// What the agent is allowed to see.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub current: VertexId,
    pub start: VertexId,
    pub message: Arc<[String]>,
}

pub fn observe(state: &EnvState) -> Observation {
    Observation {
        current: state.current,
        start: state.start,
        message: Arc::clone(&state.message),
    }
}

/// Environment over a borrowed, immutable graph.
#[derive(Clone, Copy, Debug)]
pub struct Environment<'g> {
    graph: &'g AugmentedGraph,
    config: EpisodeConfig,
}

impl<'g> Environment<'g> {
    pub fn new(graph: &'g AugmentedGraph, config: EpisodeConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { graph, config })
    }

    pub fn graph(&self) -> &'g AugmentedGraph {
        self.graph
    }

    pub fn config(&self) -> EpisodeConfig {
        self.config
    }

    pub fn reset(
        &self,
        start: VertexId,
        message: impl Into<Arc<[String]>>,
        ground_truth: Option<VertexId>,
    ) -> Result<EnvState, EnvError> {
        if !self.graph.contains(start) {
            return Err(EnvError::UnknownVertex(start));
        }
        Ok(EnvState {
            current: start,
            start,
            message: message.into(),
            ground_truth,
            t: 0,
        })
    }

    /// `NO_OP` first, then out-edges in graph order, truncated to
    /// `max_fanout` entries in total. Never empty.
    pub fn available_actions(&self, state: &EnvState) -> Vec<ActionCandidate> {
        self.actions_at(state.current)
    }

    pub fn actions_at(&self, vertex: VertexId) -> Vec<ActionCandidate> {
        let edges = self.graph.out_edges(vertex);
        let keep = edges.len().min(self.config.max_fanout - 1);
        let mut out = Vec::with_capacity(keep + 1);
        out.push(ActionCandidate::no_op(vertex));
        out.extend(edges[..keep].iter().map(|e| ActionCandidate {
            src: e.src,
            label: ActionLabel::Edge(e.label),
            dst: e.dst,
        }));
        out
    }

    pub fn step(&self, state: &EnvState, action: &ActionCandidate) -> Result<EnvState, EnvError> {
        if state.t >= self.config.horizon {
            return Err(EnvError::HorizonReached(self.config.horizon));
        }
        if !self.available_actions(state).contains(action) {
            return Err(EnvError::UnavailableAction(*action));
        }
        Ok(EnvState {
            current: action.dst,
            t: state.t + 1,
            ..state.clone()
        })
    }

    pub fn terminal_reward(&self, state: &EnvState) -> Result<f64, EnvError> {
        if state.t < self.config.horizon {
            return Err(EnvError::NotTerminal {
                t: state.t,
                horizon: self.config.horizon,
            });
        }
        let gt = state.ground_truth.ok_or(EnvError::NoGroundTruth)?;
        Ok(if state.current == gt { 1.0 } else { 0.0 })
    }

    /// Whether `target` can be the final vertex of some episode from `start`.
    pub fn reachable(&self, start: VertexId, target: VertexId) -> bool {
        if !self.graph.contains(start) {
            return false;
        }
        let mut frontier = vec![start];
        let mut seen = vec![false; self.graph.num_vertices()];
        seen[start.index()] = true;
        for _ in 0..self.config.horizon {
            let mut next = Vec::new();
            for &v in &frontier {
                for a in self.actions_at(v) {
                    if !seen[a.dst.index()] {
                        seen[a.dst.index()] = true;
                        next.push(a.dst);
                    }
                }
            }
            frontier = next;
        }
        seen.get(target.index()).copied().unwrap_or(false)
    }
}
