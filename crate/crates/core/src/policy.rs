//! Prompt-class-conditioned bigram policy.
//!
//! The policy is a table of logits indexed by `(prompt class, previous token,
//! next token)`. The next-token distribution is the softmax of one row, so
//! log-probabilities and their gradients have closed forms:
//!
//! ```text
//! log pi(v | p, c)          = logits[p, c, v] - logsumexp(logits[p, c, .])
//! d log pi(v | p, c) / d row = onehot(v) - softmax(row)
//! ```
//!
//! Generation starts from the vocabulary's `<bos>` token as context. Sampling
//! may be tempered; stored log-probabilities are always untempered.

use std::sync::Arc;

use rand::Rng;

use crate::error::{arg, numeric, Result};
use crate::rng::{rng_from_seed, LabRng};
use crate::vocab::Vocabulary;

/// Logit table of shape `[n_classes, V, V]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    n_classes: usize,
    vocab_size: usize,
    bos: usize,
    eos: usize,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// The uniform policy.
    pub fn zeros(n_classes: usize, vocab: &Vocabulary) -> Result<Self> {
        if n_classes == 0 {
            return Err(arg("policy needs at least one prompt class"));
        }
        let v = vocab.len();
        Ok(Self {
            n_classes,
            vocab_size: v,
            bos: vocab.bos(),
            eos: vocab.eos(),
            logits: vec![0.0; n_classes * v * v],
        })
    }

    pub fn from_logits(n_classes: usize, vocab: &Vocabulary, logits: Vec<f64>) -> Result<Self> {
        let mut params = Self::zeros(n_classes, vocab)?;
        if logits.len() != params.logits.len() {
            return Err(arg(format!(
                "expected {} logits for shape [{n_classes}, {v}, {v}], got {}",
                params.logits.len(),
                logits.len(),
                v = vocab.len()
            )));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(numeric(format!("logit {i} is not finite")));
        }
        params.logits = logits;
        Ok(params)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Raw mutable access; callers are responsible for keeping entries finite.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn offset(&self, class: usize, prev: usize, next: usize) -> usize {
        (class * self.vocab_size + prev) * self.vocab_size + next
    }

    pub fn get(&self, class: usize, prev: usize, next: usize) -> f64 {
        self.logits[self.offset(class, prev, next)]
    }

    pub fn set(&mut self, class: usize, prev: usize, next: usize, value: f64) {
        let i = self.offset(class, prev, next);
        self.logits[i] = value;
    }

    pub fn row(&self, class: usize, prev: usize) -> &[f64] {
        let start = self.offset(class, prev, 0);
        &self.logits[start..start + self.vocab_size]
    }

    pub fn row_mut(&mut self, class: usize, prev: usize) -> &mut [f64] {
        let start = self.offset(class, prev, 0);
        let v = self.vocab_size;
        &mut self.logits[start..start + v]
    }

    pub fn same_shape(&self, other: &PolicyParams) -> bool {
        self.n_classes == other.n_classes && self.vocab_size == other.vocab_size
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.n_classes {
            return Err(arg(format!(
                "prompt class {class} out of range (policy has {})",
                self.n_classes
            )));
        }
        Ok(())
    }

    fn finite_row(&self, class: usize, prev: usize) -> Result<&[f64]> {
        let row = self.row(class, prev);
        if row.iter().any(|x| !x.is_finite()) {
            return Err(numeric(format!(
                "non-finite logits in row (class {class}, prev {prev})"
            )));
        }
        Ok(row)
    }

    /// Full next-token distribution for `(class, prev)` at temperature 1.
    pub fn next_token_probs(&self, class: usize, prev: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        if prev >= self.vocab_size {
            return Err(arg(format!("context token {prev} out of range")));
        }
        Ok(softmax(self.finite_row(class, prev)?, 1.0))
    }
}

/// `softmax(row / temperature)` with max subtraction.
pub fn softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn log_prob_of(row: &[f64], token: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[token] - lse
}

/// Per-token log-probabilities of `tokens` under `params`, at temperature 1.
pub fn logprob_sequence(params: &PolicyParams, class: usize, tokens: &[usize]) -> Result<Vec<f64>> {
    params.check_class(class)?;
    if let Some(&bad) = tokens.iter().find(|&&t| t >= params.vocab_size) {
        return Err(arg(format!(
            "token {bad} out of range (vocabulary size {})",
            params.vocab_size
        )));
    }
    let mut prev = params.bos;
    let mut out = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let row = params.finite_row(class, prev)?;
        out.push(log_prob_of(row, tok).min(0.0));
        prev = tok;
    }
    Ok(out)
}

/// Gradient of one token's log-probability; non-zero only on a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub class: usize,
    pub prev: usize,
    pub values: Vec<f64>,
}

/// `d log pi(tokens[position] | ...) / d logits`, i.e. `onehot - softmax(row)`
/// on the active `(class, prev)` row.
pub fn grad_logprob(
    params: &PolicyParams,
    class: usize,
    tokens: &[usize],
    position: usize,
) -> Result<RowGradient> {
    params.check_class(class)?;
    if position >= tokens.len() {
        return Err(arg(format!(
            "position {position} out of range for a sequence of length {}",
            tokens.len()
        )));
    }
    let target = tokens[position];
    if target >= params.vocab_size {
        return Err(arg(format!("token {target} out of range")));
    }
    let prev = if position == 0 {
        params.bos
    } else {
        tokens[position - 1]
    };
    if prev >= params.vocab_size {
        return Err(arg(format!("token {prev} out of range")));
    }
    let mut values = softmax(params.finite_row(class, prev)?, 1.0);
    for p in &mut values {
        *p = -*p;
    }
    values[target] += 1.0;
    Ok(RowGradient {
        class,
        prev,
        values,
    })
}

/// Dense tensor with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    n_classes: usize,
    vocab_size: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            n_classes: params.n_classes,
            vocab_size: params.vocab_size,
            values: vec![0.0; params.logits.len()],
        }
    }

    pub fn add_row(&mut self, row: &RowGradient, scale: f64) {
        let start = (row.class * self.vocab_size + row.prev) * self.vocab_size;
        for (dst, src) in self.values[start..start + self.vocab_size]
            .iter_mut()
            .zip(&row.values)
        {
            *dst += scale * src;
        }
    }

    pub fn get(&self, class: usize, prev: usize, next: usize) -> f64 {
        self.values[(class * self.vocab_size + prev) * self.vocab_size + next]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn matches(&self, params: &PolicyParams) -> bool {
        self.n_classes == params.n_classes && self.vocab_size == params.vocab_size
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }
}

impl RowGradient {
    pub fn to_dense(&self, params: &PolicyParams) -> Gradient {
        let mut g = Gradient::zeros_like(params);
        g.add_row(self, 1.0);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotRole {
    /// The policy that generated the current group (ratio denominator).
    Old,
    /// The frozen anchor of the KL penalty.
    Reference,
}

/// An immutable copy of a parameter table.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: Arc<PolicyParams>,
}

impl PolicySnapshot {
    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

pub fn snapshot(params: &PolicyParams, role: SnapshotRole) -> PolicySnapshot {
    PolicySnapshot {
        role,
        params: Arc::new(params.clone()),
    }
}

/// The three parameter sets a completion is evaluated under.
#[derive(Debug, Clone, Copy)]
pub struct PolicySet<'a> {
    pub current: &'a PolicyParams,
    pub old: &'a PolicyParams,
    pub reference: &'a PolicyParams,
}

impl<'a> PolicySet<'a> {
    /// All three roles played by the same table.
    pub fn single(params: &'a PolicyParams) -> Self {
        Self {
            current: params,
            old: params,
            reference: params,
        }
    }
}

/// A sampled response with its per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub prompt_class: usize,
    pub tokens: Vec<usize>,
    pub logprobs_current: Vec<f64>,
    pub logprobs_old: Vec<f64>,
    pub logprobs_ref: Vec<f64>,
}

impl Completion {
    pub fn evaluate(policies: &PolicySet<'_>, prompt_class: usize, tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(arg("a completion needs at least one token"));
        }
        Ok(Self {
            prompt_class,
            logprobs_current: logprob_sequence(policies.current, prompt_class, &tokens)?,
            logprobs_old: logprob_sequence(policies.old, prompt_class, &tokens)?,
            logprobs_ref: logprob_sequence(policies.reference, prompt_class, &tokens)?,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Re-evaluates the current-policy log-probabilities under `params`.
    pub fn refresh_current(&mut self, params: &PolicyParams) -> Result<()> {
        self.logprobs_current = logprob_sequence(params, self.prompt_class, &self.tokens)?;
        Ok(())
    }
}

fn check_sampling_args(params: &PolicyParams, class: usize, temperature: f64, max_len: usize) -> Result<()> {
    params.check_class(class)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(arg(format!("temperature must be positive, got {temperature}")));
    }
    if max_len == 0 {
        return Err(arg("max_len must be at least 1"));
    }
    Ok(())
}

fn draw(probs: &[f64], rng: &mut LabRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws tokens from `softmax(row / temperature)` until `<eos>` or `max_len`.
pub fn sample_tokens(
    params: &PolicyParams,
    class: usize,
    temperature: f64,
    max_len: usize,
    rng: &mut LabRng,
) -> Result<Vec<usize>> {
    check_sampling_args(params, class, temperature, max_len)?;
    let mut prev = params.bos;
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let probs = softmax(params.finite_row(class, prev)?, temperature);
        let tok = draw(&probs, rng);
        tokens.push(tok);
        if tok == params.eos {
            break;
        }
        prev = tok;
    }
    Ok(tokens)
}

/// Samples from `policies.old` and scores the result under all three roles.
pub fn sample_completion(
    policies: &PolicySet<'_>,
    prompt_class: usize,
    temperature: f64,
    max_len: usize,
    rng_seed: u64,
) -> Result<Completion> {
    let mut rng = rng_from_seed(rng_seed);
    let tokens = sample_tokens(policies.old, prompt_class, temperature, max_len, &mut rng)?;
    Completion::evaluate(policies, prompt_class, tokens)
}

/// Argmax decoding from `start`; ties go to the lower token id.
///
/// Stops after emitting `<eos>`, any token in `stop`, or `max_len` tokens.
pub fn greedy_decode(
    params: &PolicyParams,
    class: usize,
    start: usize,
    stop: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    check_sampling_args(params, class, 1.0, max_len)?;
    if start >= params.vocab_size {
        return Err(arg(format!("start token {start} out of range")));
    }
    let mut prev = start;
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let row = params.finite_row(class, prev)?;
        let mut best = 0;
        for (i, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = i;
            }
        }
        tokens.push(best);
        if best == params.eos || stop.contains(&best) {
            break;
        }
        prev = best;
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_vocab() -> Vocabulary {
        Vocabulary::new(["<bos>", "<eos>", "a", "b"]).unwrap()
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let vocab = tiny_vocab();
        let params = PolicyParams::zeros(1, &vocab).unwrap();
        let mut rng = rng_from_seed(3);
        let mut counts = [0usize; 4];
        let mut draws = 0;
        while draws < 10_000 {
            let toks = sample_tokens(&params, 0, 1.0, 8, &mut rng).unwrap();
            for t in toks {
                counts[t] += 1;
                draws += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn spiked_row_repeats_until_max_len() {
        let vocab = tiny_vocab();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        for c in 0..4 {
            params.set(0, c, 2, 20.0);
        }
        let completion = sample_completion(&PolicySet::single(&params), 0, 1.0, 7, 42).unwrap();
        assert_eq!(completion.tokens, vec![2; 7]);
    }

    #[test]
    fn lower_temperature_lowers_entropy() {
        // Exact tempered distributions of logits [2, 1, 0].
        let exact = |t: f64| {
            let p = softmax(&[2.0, 1.0, 0.0], t);
            -p.iter().map(|q| q * q.ln()).sum::<f64>()
        };
        assert!(exact(0.5) < exact(2.0));

        let vocab = Vocabulary::new(["<bos>", "<eos>", "x"]).unwrap();
        let params = PolicyParams::from_logits(1, &vocab, [2.0, 1.0, 0.0].repeat(3)).unwrap();
        let empirical = |t: f64| {
            let mut rng = rng_from_seed(9);
            let mut counts = [0f64; 3];
            for _ in 0..10_000 {
                let tok = sample_tokens(&params, 0, t, 1, &mut rng).unwrap()[0];
                counts[tok] += 1.0;
            }
            -counts
                .iter()
                .filter(|&&c| c > 0.0)
                .map(|c| (c / 10_000.0) * (c / 10_000.0).ln())
                .sum::<f64>()
        };
        let (cold, hot) = (empirical(0.5), empirical(2.0));
        assert!(cold < hot);
        assert!((cold - exact(0.5)).abs() < 0.02);
        assert!((hot - exact(2.0)).abs() < 0.02);
    }

    #[test]
    fn logprob_examples() {
        let vocab = tiny_vocab();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        let lp = logprob_sequence(&params, 0, &[2, 3, 1]).unwrap();
        for x in &lp {
            assert_abs_diff_eq!(*x, (0.25f64).ln(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(lp[0], -1.3863, epsilon = 1e-4);

        params.row_mut(0, 0).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let lp = logprob_sequence(&params, 0, &[0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(lp[0], (e / (e + 3.0)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lp[0], -0.7437, epsilon = 1e-4);
    }

    #[test]
    fn logprob_rejects_bad_tokens() {
        let params = PolicyParams::zeros(1, &tiny_vocab()).unwrap();
        assert!(logprob_sequence(&params, 0, &[4]).is_err());
        assert!(logprob_sequence(&params, 1, &[0]).is_err());
    }

    #[test]
    fn rows_normalize() {
        let vocab = Vocabulary::standard();
        let mut params = PolicyParams::zeros(2, &vocab).unwrap();
        let mut rng = rng_from_seed(1);
        for x in params.logits_mut() {
            *x = rng.random_range(-5.0..5.0);
        }
        for p in 0..2 {
            for c in 0..vocab.len() {
                let lp = log_softmax(params.row(p, c));
                let total: f64 = lp.iter().map(|x| x.exp()).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grad_uniform_row() {
        let params = PolicyParams::zeros(1, &tiny_vocab()).unwrap();
        let g = grad_logprob(&params, 0, &[3, 2], 1).unwrap();
        assert_eq!(g.prev, 3);
        assert_eq!(g.values, vec![-0.25, -0.25, 0.75, -0.25]);
        assert!(grad_logprob(&params, 0, &[3, 2], 2).is_err());
        let dense = g.to_dense(&params);
        assert_eq!(dense.get(0, 3, 2), 0.75);
        assert_eq!(dense.get(0, 0, 2), 0.0);
    }

    #[test]
    fn snapshot_is_frozen() {
        let vocab = tiny_vocab();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        let snap = snapshot(&params, SnapshotRole::Old);
        let completion = sample_completion(
            &PolicySet {
                current: &params,
                old: snap.params(),
                reference: snap.params(),
            },
            0,
            0.9,
            5,
            1,
        )
        .unwrap();
        assert_eq!(completion.logprobs_current, completion.logprobs_old);
        params.set(0, 0, 2, 3.0);
        assert_eq!(snap.params().get(0, 0, 2), 0.0);
        assert_eq!(snap.role(), SnapshotRole::Old);
    }

    #[test]
    fn sampling_argument_errors() {
        let vocab = tiny_vocab();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        let set = PolicySet::single(&params);
        assert!(sample_completion(&set, 0, 1.0, 0, 0).is_err());
        assert!(sample_completion(&set, 0, 0.0, 3, 0).is_err());
        assert!(sample_completion(&set, 2, 1.0, 3, 0).is_err());
        params.set(0, 0, 1, f64::NAN);
        let err = sample_completion(&PolicySet::single(&params), 0, 1.0, 3, 0).unwrap_err();
        assert!(matches!(err, crate::Error::NumericDomain(_)));
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let vocab = tiny_vocab();
        let mut params = PolicyParams::zeros(1, &vocab).unwrap();
        params.set(0, 0, 2, 1.0);
        params.set(0, 2, 3, 1.0);
        params.set(0, 2, 2, 1.0);
        let toks = greedy_decode(&params, 0, 0, &[], 4).unwrap();
        assert_eq!(toks, vec![2, 2, 2, 2]);
        let toks = greedy_decode(&params, 0, 0, &[2], 4).unwrap();
        assert_eq!(toks, vec![2]);
    }
}
