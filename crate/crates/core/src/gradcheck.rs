//! Finite-difference check of [`objective_gradient`].
//!
//! Each case is a small random problem: six tokens, two prompt classes, a
//! group of 2 to 6 completions sampled from a perturbed old policy, and
//! random rewards. Cases cycle through both variants, `β ∈ {0, 0.04}`, and a
//! strong or mild old-policy perturbation (the strong one makes clipping
//! bind on many tokens). Cases with a ratio within `KINK_MARGIN` of a clip
//! boundary are redrawn, because the objective is not differentiable there.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::grpo::{
    compute_advantages, evaluate_objective, objective_gradient, surrogate_objective, token_ratio, AdvantageVector,
    GroupSample, GrpoHyperParams, Variant,
};
use crate::policy::{sample_tokens, Completion, PolicyParams, PolicySet};
use crate::rng::{derive_seed, rng_from_seed, LabRng};
use crate::vocab::Vocabulary;

pub const FD_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_CASES: usize = 50;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub params: PolicyParams,
    pub group: GroupSample,
    pub advantages: AdvantageVector,
    pub hp: GrpoHyperParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub cases: usize,
    pub max_relative_error: f64,
    /// Index of the case with the largest error.
    pub worst_case: usize,
    /// Cases in which at least one token sat on the clipped branch.
    pub clip_active_cases: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= GRADCHECK_TOLERANCE
    }
}

fn gradcheck_vocab() -> Vocabulary {
    Vocabulary::new(["<bos>", "<eos>", "a", "b", "c", "d"]).expect("static vocabulary")
}

fn perturbed(base: &PolicyParams, scale: f64, rng: &mut LabRng) -> PolicyParams {
    let mut p = base.clone();
    for x in p.logits_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x += scale * z;
    }
    p
}

fn near_kink(group: &GroupSample, adv: &AdvantageVector, eps: f64) -> bool {
    group.completions.iter().zip(&adv.values).any(|(c, &a)| {
        a != 0.0
            && (0..c.len()).any(|t| {
                let r = token_ratio(c, t);
                (r - (1.0 + eps)).abs() < KINK_MARGIN || (r - (1.0 - eps)).abs() < KINK_MARGIN
            })
    })
}

/// Builds case `index` of the suite seeded by `seed`.
pub fn random_case(seed: u64, index: usize) -> Result<GradcheckCase> {
    let vocab = gradcheck_vocab();
    let variant = if index.is_multiple_of(2) { Variant::Grpo } else { Variant::DrGrpo };
    let kl_coeff = if (index / 2).is_multiple_of(2) { 0.0 } else { 0.04 };
    let old_scale = if (index / 4).is_multiple_of(2) { 0.8 } else { 0.1 };
    let max_len = 6;
    let mut attempt = 0u64;
    loop {
        let mut rng = rng_from_seed(derive_seed(seed, &[index as u64, attempt]));
        attempt += 1;
        let mut current = PolicyParams::zeros(2, &vocab)?;
        for x in current.logits_mut() {
            *x = rng.sample(StandardNormal);
        }
        let old = perturbed(&current, old_scale, &mut rng);
        let reference = perturbed(&current, 0.5, &mut rng);
        let set = PolicySet {
            current: &current,
            old: &old,
            reference: &reference,
        };
        let g = rng.random_range(2..=6);
        let mut completions = Vec::with_capacity(g);
        let mut rewards = Vec::with_capacity(g);
        for _ in 0..g {
            let class = rng.random_range(0..2);
            let tokens = sample_tokens(&old, class, 1.0, max_len, &mut rng)?;
            completions.push(Completion::evaluate(&set, class, tokens)?);
            rewards.push(rng.random_range(0.0..3.0));
        }
        let hp = GrpoHyperParams {
            group_size: g,
            kl_coeff,
            variant,
            generation_budget: max_len,
            ..Default::default()
        };
        let group = GroupSample::new(format!("case{index}"), completions, rewards)?;
        let advantages = compute_advantages(&group.rewards, variant)?;
        if near_kink(&group, &advantages, hp.clip_epsilon) {
            continue;
        }
        return Ok(GradcheckCase {
            params: current,
            group,
            advantages,
            hp,
        });
    }
}

/// `max_j |analytic_j − numeric_j| / max(‖analytic‖∞, ‖numeric‖∞)`, or 0
/// when both gradients vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Central differences of the total objective, one coordinate at a time.
pub fn numeric_gradient(case: &GradcheckCase, h: f64) -> Result<Vec<f64>> {
    let mut params = case.params.clone();
    let mut out = Vec::with_capacity(params.logits().len());
    for j in 0..params.logits().len() {
        let x = params.logits()[j];
        params.logits_mut()[j] = x + h;
        let plus = evaluate_objective(&params, &case.group, &case.advantages, &case.hp)?.total_objective;
        params.logits_mut()[j] = x - h;
        let minus = evaluate_objective(&params, &case.group, &case.advantages, &case.hp)?.total_objective;
        params.logits_mut()[j] = x;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Relative error of the analytic gradient for one case, and whether any
/// token was clipped.
pub fn check_case(case: &GradcheckCase) -> Result<(f64, bool)> {
    let analytic = objective_gradient(&case.group, &case.advantages, &case.hp, &case.params)?;
    let numeric = numeric_gradient(case, FD_STEP)?;
    let report = surrogate_objective(&case.group, &case.advantages, &case.hp)?;
    Ok((relative_error(analytic.as_slice(), &numeric), report.clipped_fraction > 0.0))
}

pub fn run_gradcheck(seed: u64, cases: usize) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        cases,
        max_relative_error: 0.0,
        worst_case: 0,
        clip_active_cases: 0,
    };
    for i in 0..cases {
        let (err, clipped) = check_case(&random_case(seed, i)?)?;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_case = i;
        }
        report.clip_active_cases += usize::from(clipped);
    }
    Ok(report)
}
