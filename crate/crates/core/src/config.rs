//! Application configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EpisodeConfig;
use crate::eval::planted::{PlantedSpec, ReaderTaskSpec};
use crate::generator::GeneratorConfig;
use crate::policy::PolicyConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("`{field}` is required for this command")]
    Missing { field: String },
    #[error("`{field}` points to {path}, which does not exist")]
    NotFound { field: String, path: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Triples, one JSON object `{"head","relation","tail"}` per line.
    pub triples: Option<PathBuf>,
    /// Documents, one JSON object `{"anchor","body"}` per line.
    pub documents: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub policy_checkpoint: Option<PathBuf>,
    pub generator_checkpoint: Option<PathBuf>,
    /// Selection examples, one `{"message","target"}` per line.
    pub selection_data: Option<PathBuf>,
    /// Generation examples, one `{"message","knowledge","response"}` per line.
    pub generation_data: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub alignment_label: String,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            alignment_label: "has_comment".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Copy,
    Neural,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    /// Beam decoding when true, greedy otherwise.
    pub beam: bool,
    pub generator: GeneratorKind,
    pub max_message_tokens: usize,
}

impl Default for ChatSection {
    fn default() -> Self {
        Self {
            beam: true,
            generator: GeneratorKind::Copy,
            max_message_tokens: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub host: String,
    pub port: u16,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fraction of selection examples held out for evaluation.
    pub holdout_fraction: f64,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Window of the lexical reader.
    pub reader_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.2,
            fractions: vec![1.0, 0.5, 0.25, 0.1],
            seeds: vec![0],
            reader_window: crate::reader::DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub graph: GraphSection,
    pub policy: PolicyConfig,
    pub env: EpisodeConfig,
    pub trainer: TrainConfig,
    pub generator: GeneratorConfig,
    pub chat: ChatSection,
    pub service: ServiceSection,
    pub eval: EvalSection,
    /// When set, selection commands run on a generated planted-path task
    /// instead of `paths.selection_data`.
    pub planted: Option<PlantedSection>,
    /// Like `planted`, for the one-hop task only the reader head can solve.
    /// Takes precedence over `planted`.
    pub reader_task: Option<ReaderTaskSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSection {
    pub num_vertices: usize,
    pub branching: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl PlantedSection {
    pub fn spec(&self, horizon: usize) -> PlantedSpec {
        PlantedSpec {
            num_vertices: self.num_vertices,
            branching: self.branching,
            horizon,
            num_train: self.num_train,
            num_test: self.num_test,
            seed: self.seed,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(invalid(field, "must be at least 1"));
    }
    Ok(())
}

fn positive_f(field: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(field, format!("must be a positive number, got {v}")));
    }
    Ok(())
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Paths in a config file are relative to the file's directory.
    fn resolve_relative(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.triples,
            &mut p.documents,
            &mut p.graph,
            &mut p.policy_checkpoint,
            &mut p.generator_checkpoint,
            &mut p.selection_data,
            &mut p.generation_data,
            &mut p.reports,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    /// Range checks, each naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let p = &self.policy;
        positive("policy.dim", p.dim)?;
        positive("policy.hidden", p.hidden)?;
        positive("policy.beam_width", p.beam_width)?;
        for (i, w) in p.mix.iter().enumerate() {
            if !w.is_finite() {
                return Err(invalid(&format!("policy.mix[{i}]"), "must be finite"));
            }
        }
        if !(p.vertex_init_scale.is_finite() && p.vertex_init_scale >= 0.0) {
            return Err(invalid("policy.vertex_init_scale", "must be non-negative"));
        }
        if !(p.heads.ffn || p.heads.bilinear || p.heads.reader) {
            return Err(invalid("policy.heads", "at least one head must be enabled"));
        }
        positive("env.horizon", self.env.horizon)?;
        positive("env.max_fanout", self.env.max_fanout)?;

        let t = &self.trainer;
        positive_f("trainer.learning_rate", t.learning_rate)?;
        positive("trainer.rollouts_per_example", t.rollouts_per_example)?;
        positive("trainer.batch_size", t.batch_size)?;
        if !(0.0..1.0).contains(&t.baseline_decay) {
            return Err(invalid("trainer.baseline_decay", "must be in [0, 1)"));
        }
        if !(t.entropy_weight.is_finite() && t.entropy_weight >= 0.0) {
            return Err(invalid("trainer.entropy_weight", "must be non-negative"));
        }

        let g = &self.generator;
        positive("generator.dim", g.dim)?;
        positive("generator.hidden", g.hidden)?;
        positive_f("generator.learning_rate", g.learning_rate)?;
        positive("generator.batch_size", g.batch_size)?;
        positive("generator.max_len", g.max_len)?;

        positive("chat.max_message_tokens", self.chat.max_message_tokens)?;
        if self.graph.alignment_label.trim().is_empty() {
            return Err(invalid("graph.alignment_label", "must not be empty"));
        }

        let e = &self.eval;
        if !(e.holdout_fraction > 0.0 && e.holdout_fraction < 1.0) {
            return Err(invalid("eval.holdout_fraction", "must be in (0, 1)"));
        }
        if e.fractions.is_empty() {
            return Err(invalid("eval.fractions", "must not be empty"));
        }
        for (i, f) in e.fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(invalid(&format!("eval.fractions[{i}]"), "must be in (0, 1]"));
            }
        }
        if e.seeds.is_empty() {
            return Err(invalid("eval.seeds", "must not be empty"));
        }
        positive("eval.reader_window", e.reader_window)?;

        if let Some(pl) = &self.planted {
            if pl.num_vertices < 2 {
                return Err(invalid("planted.num_vertices", "must be at least 2"));
            }
            if pl.branching == 0 || pl.branching >= pl.num_vertices {
                return Err(invalid("planted.branching", "must be in [1, num_vertices)"));
            }
            positive("planted.num_train", pl.num_train)?;
        }
        if let Some(r) = &self.reader_task {
            positive("reader_task.hubs", r.hubs)?;
            if r.per_hub < 2 {
                return Err(invalid("reader_task.per_hub", "must be at least 2"));
            }
            if r.seen_per_hub == 0 || r.seen_per_hub >= r.per_hub {
                return Err(invalid("reader_task.seen_per_hub", "must be in [1, per_hub)"));
            }
        }
        Ok(())
    }

    /// The path in `field`, which must be set.
    pub fn required(&self, field: &str) -> Result<&Path> {
        let p = &self.paths;
        let slot = match field {
            "paths.triples" => &p.triples,
            "paths.documents" => &p.documents,
            "paths.graph" => &p.graph,
            "paths.policy_checkpoint" => &p.policy_checkpoint,
            "paths.generator_checkpoint" => &p.generator_checkpoint,
            "paths.selection_data" => &p.selection_data,
            "paths.generation_data" => &p.generation_data,
            "paths.reports" => &p.reports,
            _ => panic!("unknown path field {field}"),
        };
        slot.as_deref().ok_or_else(|| ConfigError::Missing { field: field.into() })
    }

    /// Like [`AppConfig::required`], and the file must exist.
    pub fn existing(&self, field: &str) -> Result<&Path> {
        let path = self.required(field)?;
        if !path.exists() {
            return Err(ConfigError::NotFound {
                field: field.into(),
                path: path.display().to_string(),
            });
        }
        Ok(path)
    }
}
