//! Run configuration file (TOML, strict schema).
//!
//! ```toml
//! plan = "single"        # optional; the corpus plan when absent
//!
//! [model]
//! d_model = 128
//! layers = 4
//! heads = 4
//! ff_dim = 512
//! max_positions = 32
//!
//! [train]
//! batch_size = 32
//! iterations = 2000
//! peak_lr = 1e-3
//! warmup = 200
//! weight_decay = 0.01
//! label_smoothing = 0.1
//! grad_clip = 1.0
//! seed = 0
//! objective = "masked"   # or "teacher_forcing" / "ar"
//! checkpoint_every = 1000
//! ```
//!
//! Every section and key is optional; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::levels::LengthLevelPlan;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {}", .errors.join("; "))]
    Invalid { path: String, errors: Vec<String> },
}

/// Architecture section; vocabulary size and level count come from the
/// corpus and plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let m = ModelConfig::new(0, 0);
        Architecture { d_model: m.d_model, layers: m.layers, heads: m.heads, ff_dim: m.ff_dim, max_positions: m.max_positions }
    }
}

impl Architecture {
    pub fn model_config(&self, vocab: &Vocabulary, plan: &LengthLevelPlan) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            ff_dim: self.ff_dim,
            max_positions: self.max_positions,
            ..ModelConfig::new(vocab.len(), plan.num_levels())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plan: Option<String>,
    pub model: Architecture,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.message().to_string() })?;
        let mut errors = cfg.train.validate().err().unwrap_or_default();
        if let Some(p) = &cfg.plan {
            if let Err(e) = p.parse::<LengthLevelPlan>() {
                errors.push(format!("plan: {e}"));
            }
        }
        let probe = cfg.model.model_config(&Vocabulary::scene_grammar(), &LengthLevelPlan::four_level());
        errors.extend(probe.validate().err().unwrap_or_default());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid { path: path.into(), errors })
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
        Self::from_toml(&text, &p)
    }

    /// The configured plan, or `fallback` when the file names none.
    pub fn plan_or(&self, fallback: &LengthLevelPlan) -> LengthLevelPlan {
        self.plan.as_ref().and_then(|p| p.parse().ok()).unwrap_or_else(|| fallback.clone())
    }
}
