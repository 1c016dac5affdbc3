//! Group-relative advantages, the clipped KL-regularized objective, and its
//! exact gradient.
//!
//! For a group of `G` completions with rewards `r`:
//!
//! ```text
//! GRPO:     A_i = (r_i - mean(r)) / std(r)        (population std; 0 if std = 0)
//! Dr. GRPO: A_i =  r_i - mean(r)
//!
//! J = 1/G · Σ_i w_i · Σ_t [ min(ρ_it·A_i, clip(ρ_it, 1-ε, 1+ε)·A_i) - β·k3_it ]
//!
//! ρ_it  = π_θ(o_it) / π_old(o_it)
//! k3_it = π_ref(o_it)/π_θ(o_it) - log(π_ref(o_it)/π_θ(o_it)) - 1
//! w_i   = 1/|o_i|                (GRPO)
//!       = 1/generation_budget    (Dr. GRPO)
//! ```
//!
//! The objective is maximized, so [`apply_update`] takes an ascent step.

use serde::{Deserialize, Serialize};

use crate::error::{arg, numeric, Error, Result};
use crate::policy::{grad_logprob, Completion, Gradient, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Grpo,
    DrGrpo,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Self::Grpo),
            "dr_grpo" | "dr-grpo" => Ok(Self::DrGrpo),
            other => Err(arg(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Grpo => "grpo",
            Self::DrGrpo => "dr_grpo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoHyperParams {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub variant: Variant,
    /// Fixed per-completion divisor used by Dr. GRPO.
    pub generation_budget: usize,
}

impl Default for GrpoHyperParams {
    fn default() -> Self {
        Self {
            group_size: 6,
            clip_epsilon: 0.2,
            kl_coeff: 0.04,
            learning_rate: 1.0,
            variant: Variant::Grpo,
            generation_budget: 24,
        }
    }
}

impl GrpoHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(arg("group size must be positive"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(arg(format!("clip epsilon must be in (0, 1), got {}", self.clip_epsilon)));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return Err(arg(format!("KL coefficient must be >= 0, got {}", self.kl_coeff)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(arg(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.generation_budget == 0 {
            return Err(arg("generation budget must be positive"));
        }
        Ok(())
    }
}

/// The completions sampled for one question and their scalar rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub question_id: String,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
}

impl GroupSample {
    pub fn new(question_id: impl Into<String>, completions: Vec<Completion>, rewards: Vec<f64>) -> Result<Self> {
        if completions.len() != rewards.len() {
            return Err(arg(format!(
                "{} completions but {} rewards",
                completions.len(),
                rewards.len()
            )));
        }
        if completions.is_empty() {
            return Err(arg("empty group"));
        }
        Ok(Self {
            question_id: question_id.into(),
            completions,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }
}

/// One advantage per completion, shared by all of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub variant: Variant,
    pub values: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Group-relative advantages.
///
/// Groups whose rewards are all equal (population std below `1e-12` times
/// the reward scale) get all-zero advantages in both variants.
pub fn compute_advantages(rewards: &[f64], variant: Variant) -> Result<AdvantageVector> {
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(numeric("rewards must be finite"));
    }
    match variant {
        Variant::Grpo if rewards.len() < 2 => {
            return Err(arg("GRPO advantages need at least two rewards"))
        }
        Variant::DrGrpo if rewards.is_empty() => return Err(arg("no rewards")),
        _ => {}
    }
    let m = mean(rewards);
    let centered: Vec<f64> = rewards.iter().map(|r| r - m).collect();
    let var = centered.iter().map(|d| d * d).sum::<f64>() / rewards.len() as f64;
    let std = var.sqrt();
    let scale = rewards.iter().fold(1.0f64, |a, r| a.max(r.abs()));
    if std <= 1e-12 * scale {
        return Ok(AdvantageVector {
            variant,
            values: vec![0.0; rewards.len()],
        });
    }
    let values = match variant {
        Variant::Grpo => centered.iter().map(|d| d / std).collect(),
        Variant::DrGrpo => centered,
    };
    Ok(AdvantageVector { variant, values })
}

/// `π_θ / π_old` for token `t`, from stored log-probabilities.
pub fn token_ratio(completion: &Completion, t: usize) -> f64 {
    (completion.logprobs_current[t] - completion.logprobs_old[t]).exp()
}

/// Per-token k3 estimate of `KL(π_θ ‖ π_ref)`; never negative.
pub fn kl_penalty_token(completion: &Completion, t: usize) -> f64 {
    k3(completion.logprobs_ref[t] - completion.logprobs_current[t])
}

/// `e^d - d - 1` for `d = log(π_ref / π_θ)`, via `expm1` to stay exact near 0.
pub fn k3(log_ratio: f64) -> f64 {
    (log_ratio.exp_m1() - log_ratio).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub surrogate: f64,
    pub kl_penalty: f64,
    pub total_objective: f64,
    pub clipped_fraction: f64,
    /// Each completion's share of `surrogate` (the `1/G` factor included).
    pub contributions: Vec<f64>,
}

fn completion_weight(completion: &Completion, hp: &GrpoHyperParams) -> f64 {
    match hp.variant {
        Variant::Grpo => 1.0 / completion.len() as f64,
        Variant::DrGrpo => 1.0 / hp.generation_budget as f64,
    }
}

/// Which branch of `min(ρA, clip(ρ)A)` is in force for one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Unclipped,
    /// The clipped term is strictly smaller and therefore constant in θ.
    Clipped,
}

fn branch(ratio: f64, advantage: f64, eps: f64) -> Branch {
    if (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps) {
        Branch::Clipped
    } else {
        Branch::Unclipped
    }
}

fn check_pair(group: &GroupSample, advantages: &AdvantageVector, hp: &GrpoHyperParams) -> Result<()> {
    if advantages.variant != hp.variant {
        return Err(Error::Contract(format!(
            "advantages computed for {} but objective configured for {}",
            advantages.variant, hp.variant
        )));
    }
    if advantages.values.len() != group.len() {
        return Err(Error::Contract(format!(
            "{} advantages for a group of {}",
            advantages.values.len(),
            group.len()
        )));
    }
    for c in &group.completions {
        if c.is_empty()
            || c.logprobs_current.len() != c.len()
            || c.logprobs_old.len() != c.len()
            || c.logprobs_ref.len() != c.len()
        {
            return Err(arg("completion log-prob lengths do not match its tokens"));
        }
    }
    Ok(())
}

pub fn surrogate_objective(
    group: &GroupSample,
    advantages: &AdvantageVector,
    hp: &GrpoHyperParams,
) -> Result<ObjectiveReport> {
    check_pair(group, advantages, hp)?;
    let g = group.len() as f64;
    let (lo, hi) = (1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
    let mut contributions = Vec::with_capacity(group.len());
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    for (c, &adv) in group.completions.iter().zip(&advantages.values) {
        let w = completion_weight(c, hp) / g;
        let mut surr = 0.0;
        let mut kl = 0.0;
        for t in 0..c.len() {
            let ratio = token_ratio(c, t);
            surr += (ratio * adv).min(ratio.clamp(lo, hi) * adv);
            kl += kl_penalty_token(c, t);
            if branch(ratio, adv, hp.clip_epsilon) == Branch::Clipped {
                clipped += 1;
            }
        }
        tokens += c.len();
        contributions.push(w * surr);
        kl_total += w * kl;
    }
    let surrogate: f64 = contributions.iter().sum();
    Ok(ObjectiveReport {
        surrogate,
        kl_penalty: kl_total,
        total_objective: surrogate - hp.kl_coeff * kl_total,
        clipped_fraction: clipped as f64 / tokens as f64,
        contributions,
    })
}

/// Exact gradient of `total_objective` with respect to the current logits.
///
/// Per token, the coefficient on `∇ log π_θ(o_it)` is
/// `w_i · (ρ_it·A_i · [unclipped] + β·(π_ref/π_θ − 1))`.
/// Accumulation runs in completion then token order, so the result is
/// bit-reproducible.
pub fn objective_gradient(
    group: &GroupSample,
    advantages: &AdvantageVector,
    hp: &GrpoHyperParams,
    params: &PolicyParams,
) -> Result<Gradient> {
    check_pair(group, advantages, hp)?;
    let g = group.len() as f64;
    let mut grad = Gradient::zeros_like(params);
    for (c, &adv) in group.completions.iter().zip(&advantages.values) {
        let w = completion_weight(c, hp) / g;
        for t in 0..c.len() {
            let ratio = token_ratio(c, t);
            let policy_term = match branch(ratio, adv, hp.clip_epsilon) {
                Branch::Unclipped => ratio * adv,
                Branch::Clipped => 0.0,
            };
            let kl_term = hp.kl_coeff * (c.logprobs_ref[t] - c.logprobs_current[t]).exp_m1();
            let coef = w * (policy_term + kl_term);
            if coef != 0.0 {
                let row = grad_logprob(params, c.prompt_class, &c.tokens, t)?;
                grad.add_row(&row, coef);
            }
        }
    }
    Ok(grad)
}

/// `logits += learning_rate · gradient`.
pub fn apply_update(params: &mut PolicyParams, gradient: &Gradient, learning_rate: f64) -> Result<()> {
    if !gradient.matches(params) {
        return Err(arg("gradient shape does not match parameters"));
    }
    if !learning_rate.is_finite() {
        return Err(numeric(format!("learning rate {learning_rate} is not finite")));
    }
    if let Some(i) = gradient.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(numeric(format!("gradient entry {i} is not finite")));
    }
    if learning_rate == 0.0 {
        return Ok(());
    }
    for (p, g) in params.logits_mut().iter_mut().zip(gradient.as_slice()) {
        *p += learning_rate * g;
    }
    Ok(())
}

/// Re-evaluates every completion under `params` and returns the objective.
///
/// This is the function [`objective_gradient`] differentiates; finite
/// differences of it are the reference for gradient checks.
pub fn evaluate_objective(
    params: &PolicyParams,
    group: &GroupSample,
    advantages: &AdvantageVector,
    hp: &GrpoHyperParams,
) -> Result<ObjectiveReport> {
    let mut refreshed = group.clone();
    for c in &mut refreshed.completions {
        c.refresh_current(params)?;
    }
    surrogate_objective(&refreshed, advantages, hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{logprob_sequence, PolicySet};
    use crate::vocab::Vocabulary;
    use approx::assert_abs_diff_eq;

    fn fake(len: usize, cur: f64, old: f64, reference: f64) -> Completion {
        Completion {
            prompt_class: 0,
            tokens: vec![2; len],
            logprobs_current: vec![cur; len],
            logprobs_old: vec![old; len],
            logprobs_ref: vec![reference; len],
        }
    }

    #[test]
    fn advantage_examples() {
        let r = [2.0, 0.0, 1.0, 1.0, 0.0, 2.0];
        let a = compute_advantages(&r, Variant::Grpo).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [1.0 / s, -1.0 / s, 0.0, 0.0, -1.0 / s, 1.0 / s];
        for (x, y) in a.values.iter().zip(expect) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.values[0], 1.2247, epsilon = 1e-4);
        let d = compute_advantages(&r, Variant::DrGrpo).unwrap();
        assert_eq!(d.values, vec![1.0, -1.0, 0.0, 0.0, -1.0, 1.0]);
        for v in [Variant::Grpo, Variant::DrGrpo] {
            let z = compute_advantages(&[0.7; 6], v).unwrap();
            assert_eq!(z.values, vec![0.0; 6]);
        }
        assert!(compute_advantages(&[1.0], Variant::Grpo).is_err());
        assert_eq!(compute_advantages(&[1.0], Variant::DrGrpo).unwrap().values, vec![0.0]);
    }

    #[test]
    fn ratio_and_kl() {
        let c = fake(2, -1.0, -1.0, -1.0);
        assert_eq!(token_ratio(&c, 0), 1.0);
        assert_eq!(kl_penalty_token(&c, 1), 0.0);
        let c = fake(1, -1.0, -1.0 - 2f64.ln(), 0.0);
        assert_abs_diff_eq!(token_ratio(&c, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_penalty_token(&c, 0), std::f64::consts::E - 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k3(1.0), 0.7183, epsilon = 1e-4);
    }

    #[test]
    fn clip_arithmetic() {
        let c = fake(3, 1.5f64.ln() - 1.0, -1.0, -1.0);
        let group = GroupSample::new("q", vec![c], vec![1.0]).unwrap();
        let adv = AdvantageVector {
            variant: Variant::Grpo,
            values: vec![1.0],
        };
        let hp = GrpoHyperParams {
            kl_coeff: 0.0,
            ..Default::default()
        };
        let rep = surrogate_objective(&group, &adv, &hp).unwrap();
        assert_abs_diff_eq!(rep.surrogate, 1.2, epsilon = 1e-12);
        assert_eq!(rep.clipped_fraction, 1.0);
        assert_eq!(rep.total_objective, rep.surrogate);
    }

    #[test]
    fn variant_mismatch_is_contract_error() {
        let group = GroupSample::new("q", vec![fake(1, -1.0, -1.0, -1.0); 2], vec![0.0, 1.0]).unwrap();
        let adv = compute_advantages(&group.rewards, Variant::DrGrpo).unwrap();
        let err = surrogate_objective(&group, &adv, &GrpoHyperParams::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn ratio_one_closed_form() {
        let group = GroupSample::new(
            "q",
            vec![fake(4, -1.0, -1.0, -1.0), fake(4, -1.0, -1.0, -1.0), fake(4, -1.0, -1.0, -1.0)],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        let adv = compute_advantages(&group.rewards, Variant::Grpo).unwrap();
        let rep = surrogate_objective(&group, &adv, &GrpoHyperParams::default()).unwrap();
        assert_abs_diff_eq!(rep.surrogate, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_advantage_zero_beta_gives_zero_gradient() {
        let vocab = Vocabulary::new(["<bos>", "<eos>", "a", "b"]).unwrap();
        let params = PolicyParams::zeros(1, &vocab).unwrap();
        let set = PolicySet::single(&params);
        let comps = vec![
            Completion::evaluate(&set, 0, vec![2, 3, 1]).unwrap(),
            Completion::evaluate(&set, 0, vec![3, 1]).unwrap(),
        ];
        let group = GroupSample::new("q", comps, vec![1.0, 1.0]).unwrap();
        let adv = compute_advantages(&group.rewards, Variant::Grpo).unwrap();
        let hp = GrpoHyperParams {
            kl_coeff: 0.0,
            ..Default::default()
        };
        assert!(objective_gradient(&group, &adv, &hp, &params).unwrap().is_zero());
    }

    #[test]
    fn ascent_raises_rewarded_token() {
        let vocab = Vocabulary::new(["<bos>", "<eos>", "a", "b"]).unwrap();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        let set = PolicySet::single(&params);
        let comp = Completion::evaluate(&set, 0, vec![2]).unwrap();
        let group = GroupSample::new("q", vec![comp], vec![1.0]).unwrap();
        let adv = AdvantageVector {
            variant: Variant::Grpo,
            values: vec![1.0],
        };
        let hp = GrpoHyperParams::default();
        let grad = objective_gradient(&group, &adv, &hp, &params).unwrap();
        let before = logprob_sequence(&params, 0, &[2]).unwrap()[0];
        apply_update(&mut params, &grad, 0.5).unwrap();
        let after = logprob_sequence(&params, 0, &[2]).unwrap()[0];
        assert!(after > before);

        let frozen = params.clone();
        apply_update(&mut params, &Gradient::zeros_like(&frozen), 1.0).unwrap();
        apply_update(&mut params, &grad, 0.0).unwrap();
        assert_eq!(params, frozen);

        let mut bad = grad.clone();
        bad.as_mut_slice()[0] = f64::INFINITY;
        assert!(matches!(apply_update(&mut params, &bad, 1.0), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn fully_clipped_completion_has_no_gradient() {
        let vocab = Vocabulary::new(["<bos>", "<eos>", "a", "b"]).unwrap();
        let mut current = PolicyParams::zeros(1, &vocab).unwrap();
        let old = current.clone();
        current.set(0, 0, 2, 2.0);
        current.set(0, 2, 2, 2.0);
        let set = PolicySet {
            current: &current,
            old: &old,
            reference: &old,
        };
        let comp = Completion::evaluate(&set, 0, vec![2, 2]).unwrap();
        assert!(token_ratio(&comp, 0) > 1.2 && token_ratio(&comp, 1) > 1.2);
        let group = GroupSample::new("q", vec![comp], vec![1.0]).unwrap();
        let adv = AdvantageVector {
            variant: Variant::Grpo,
            values: vec![1.0],
        };
        let hp = GrpoHyperParams {
            kl_coeff: 0.0,
            ..Default::default()
        };
        assert!(objective_gradient(&group, &adv, &hp, &current).unwrap().is_zero());
    }
}
