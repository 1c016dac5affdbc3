//! Run configuration.
//!
//! A TOML file of top-level keys; every key is optional and falls back to
//! the defaults below. Paths and the seed can be overridden from the
//! environment with `GRPOLAB_DATASET`, `GRPOLAB_OUT_DIR` and `GRPOLAB_SEED`.
//!
//! ```toml
//! training_steps = 2000
//! group_size = 6
//! beta = 0.04
//! temperature = 0.9
//! variant = "grpo"            # or "dr_grpo"
//! template_kind = "detailed"
//! keyframe_mode = "top_k:3"   # needs template_kind = "detailed_keyframes"
//! scorer = "probability"      # or "cosine"
//! seed = 7
//! dataset = "data/train.jsonl"
//! out_dir = "runs/grpo-7"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{GrpoHyperParams, Variant};
use crate::keyframe::{KeyframeMode, ScorerKind};
use crate::prompt::{FrameRequest, PromptTemplate};

pub const ENV_DATASET: &str = "GRPOLAB_DATASET";
pub const ENV_OUT_DIR: &str = "GRPOLAB_OUT_DIR";
pub const ENV_SEED: &str = "GRPOLAB_SEED";
pub const ENV_CONFIG: &str = "GRPOLAB_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub training_steps: usize,
    pub group_size: usize,
    pub beta: f64,
    pub temperature: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub variant: Variant,
    pub template_kind: PromptTemplate,
    pub keyframe_mode: Option<KeyframeMode>,
    pub scorer: ScorerKind,
    pub seed: u64,
    /// Sampling stops after this many tokens.
    pub max_completion_len: usize,
    /// Dr. GRPO length divisor; defaults to `max_completion_len`.
    pub generation_budget: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Precomputed proxy keyframes (see the `keyframes` subcommand).
    pub keyframe_cache: Option<PathBuf>,
    /// Remote embedding service for the cosine scorer; synthetic if unset.
    pub embedding_url: Option<String>,
    pub embedding_dim: usize,
    pub embedding_timeout_ms: u64,
    pub embedding_retries: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            training_steps: 3200,
            group_size: 6,
            beta: 0.04,
            temperature: 0.9,
            clip_epsilon: 0.2,
            learning_rate: 10.0,
            variant: Variant::Grpo,
            template_kind: PromptTemplate::Detailed,
            keyframe_mode: None,
            scorer: ScorerKind::Probability,
            seed: 0,
            max_completion_len: 24,
            generation_budget: None,
            dataset: None,
            out_dir: None,
            keyframe_cache: None,
            embedding_url: None,
            embedding_dim: 16,
            embedding_timeout_ms: 10_000,
            embedding_retries: 2,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(p) = lookup(ENV_DATASET) {
            self.dataset = Some(p.into());
        }
        if let Some(p) = lookup(ENV_OUT_DIR) {
            self.out_dir = Some(p.into());
        }
        if let Some(s) = lookup(ENV_SEED) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}={s:?} is not an integer")))?;
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.generation_budget.unwrap_or(self.max_completion_len)
    }

    pub fn hyper_params(&self) -> GrpoHyperParams {
        GrpoHyperParams {
            group_size: self.group_size,
            clip_epsilon: self.clip_epsilon,
            kl_coeff: self.beta,
            learning_rate: self.learning_rate,
            variant: self.variant,
            generation_budget: self.budget(),
        }
    }

    /// The frame request the keyframe template is rendered with.
    pub fn frame_request(&self) -> Option<FrameRequest> {
        match self.keyframe_mode {
            Some(KeyframeMode::TopK(k)) => Some(FrameRequest::Count(k)),
            Some(_) => Some(FrameRequest::Unbounded),
            None => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.hyper_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.variant == Variant::Grpo && self.group_size < 2 {
            return bad("GRPO needs group_size >= 2".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_completion_len == 0 {
            return bad("max_completion_len must be positive".into());
        }
        if self.budget() < self.max_completion_len {
            return bad(format!(
                "generation_budget {} is shorter than max_completion_len {}",
                self.budget(),
                self.max_completion_len
            ));
        }
        if self.template_kind == PromptTemplate::Direct {
            return bad("the direct template is for evaluation only".into());
        }
        match (self.keyframe_mode, self.template_kind) {
            (None, t) if t.expects_frames() => {
                return bad(format!("template {t} needs a keyframe_mode"));
            }
            (Some(KeyframeMode::BottomP(_)), PromptTemplate::DetailedIrrelevant) => {}
            (Some(KeyframeMode::BottomP(_)), t) => {
                return bad(format!("bottom_p keyframes use detailed_irrelevant, not {t}"));
            }
            (Some(_), PromptTemplate::DetailedKeyframes) | (None, _) => {}
            (Some(m), t) => {
                return bad(format!("keyframe_mode {m} uses detailed_keyframes, not {t}"));
            }
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        Ok(())
    }
}
