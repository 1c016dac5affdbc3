//! Group-relative policy optimization on a small, exactly differentiable
//! token policy.
//!
//! The crate trains a per-prompt-class bigram policy with GRPO or Dr. GRPO
//! against rule-based rewards: a format reward for the
//! `<think>`/`<frames>`/`<answer>` tag protocol, an exact-match or ROUGE-L
//! accuracy reward, and an optional keyframe F1 reward against proxy
//! ground-truth frames.
//!
//! ```
//! use grpolab::{compute_advantages, Variant};
//!
//! let adv = compute_advantages(&[2.0, 0.0, 1.0, 1.0, 0.0, 2.0], Variant::DrGrpo).unwrap();
//! assert_eq!(adv.values, vec![1.0, -1.0, 0.0, 0.0, -1.0, 1.0]);
//! ```

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grpo;
pub mod keyframe;
pub mod metrics;
pub mod policy;
pub mod prior;
pub mod prompt;
pub mod proxy;
pub mod reward;
pub mod rng;
pub mod score;
pub mod train;
pub mod vocab;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{generate_synthetic_tasks, load_dataset, QaRecord, SynthSpec, TaskMix};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalMode, EvalOptions, EvalReport};
pub use grpo::{
    apply_update, compute_advantages, kl_penalty_token, objective_gradient, surrogate_objective, token_ratio,
    AdvantageVector, GroupSample, GrpoHyperParams, ObjectiveReport, Variant,
};
pub use keyframe::{keyframe_f1, FrameSet, ImportanceProfile, KeyframeMode, ScorerKind};
pub use metrics::StepMetrics;
pub use policy::{Completion, PolicyParams, PolicySet};
pub use prompt::{render_prompt, FrameRequest, PromptTemplate};
pub use reward::{parse_tags, rouge_l, total_reward, RewardBreakdown, TaskKind, TaskSpec};
pub use train::{train, Trainer};
pub use vocab::Vocabulary;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/keyframes.md")]
    mod keyframes {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
