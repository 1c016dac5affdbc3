//! Frame importance, proxy keyframe selection, and the F1 keyframe reward.
//!
//! Raw per-frame importance comes from one of two scorers: the cosine
//! similarity between a text embedding of question + answer and each frame
//! embedding, or a conditional answer probability per frame. Raw scores are
//! softmax-normalized into a distribution over frames, and a selection rule
//! turns that distribution into a proxy ground-truth [`FrameSet`]:
//!
//! * top-k: the `k` most important frames;
//! * top-p: the shortest prefix of frames in descending importance whose
//!   cumulative mass reaches `p`;
//! * bottom-p: the same in ascending order, i.e. the irrelevant frames.
//!
//! Ties always resolve toward the lower frame index. Frame indices are
//! 1-based throughout, matching the `<frames>` protocol.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, numeric, Error, Result};

/// Slack used when comparing cumulative mass against a threshold, so that
/// softmax round-off cannot push an exact boundary hit past the threshold.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl ImportanceProfile {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        let normalized = softmax_normalize(&raw)?;
        Ok(Self { raw, normalized })
    }

    /// Builds a profile from an already-normalized distribution. The raw
    /// scores are its logarithms, so re-normalizing reproduces it.
    pub fn from_normalized(normalized: Vec<f64>) -> Result<Self> {
        if normalized.is_empty() {
            return Err(arg("importance profile needs at least one frame"));
        }
        if normalized.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(arg("normalized importance must be positive and finite"));
        }
        let total: f64 = normalized.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(arg(format!("normalized importance sums to {total}, not 1")));
        }
        let raw = normalized.iter().map(|x| x.ln()).collect();
        Ok(Self { raw, normalized })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn n_frames(&self) -> usize {
        self.raw.len()
    }

    /// 0-based frame positions sorted by normalized score, index-ascending on ties.
    fn ranked(&self, descending: bool) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_frames()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (self.normalized[a], self.normalized[b]);
            let by_score = if descending {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            };
            by_score.then(a.cmp(&b))
        });
        order
    }
}

/// A set of 1-based frame indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameSet(BTreeSet<usize>);

impl FrameSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, n_frames: usize) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(bad) = set.iter().find(|&&i| i == 0 || i > n_frames) {
            return Err(arg(format!("frame index {bad} outside [1, {n_frames}]")));
        }
        Ok(Self(set))
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection_len(&self, other: &FrameSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    fn from_positions(positions: &[usize]) -> Self {
        Self(positions.iter().map(|p| p + 1).collect())
    }
}

impl fmt::Display for FrameSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// A fixed-dimension embedding of a text or a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn new(subject_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(numeric("embedding has non-finite entries"));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            vector,
        })
    }

    fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of the text embedding with every frame embedding.
pub fn cosine_importance(text: &EmbeddingRecord, frames: &[EmbeddingRecord]) -> Result<ImportanceProfile> {
    if frames.is_empty() {
        return Err(arg("no frame embeddings"));
    }
    let d = text.vector.len();
    let t_norm = text.norm();
    if t_norm == 0.0 {
        return Err(numeric(format!("text embedding {} has zero norm", text.subject_id)));
    }
    let mut raw = Vec::with_capacity(frames.len());
    for frame in frames {
        if frame.vector.len() != d {
            return Err(arg(format!(
                "frame embedding {} has dimension {}, expected {d}",
                frame.subject_id,
                frame.vector.len()
            )));
        }
        let f_norm = frame.norm();
        if f_norm == 0.0 {
            return Err(numeric(format!("frame embedding {} has zero norm", frame.subject_id)));
        }
        let dot: f64 = text.vector.iter().zip(&frame.vector).map(|(a, b)| a * b).sum();
        raw.push((dot / (t_norm * f_norm)).clamp(-1.0, 1.0));
    }
    ImportanceProfile::from_raw(raw)
}

/// Adopts externally supplied answer probabilities as raw importance.
pub fn probability_importance(scores: &[f64]) -> Result<ImportanceProfile> {
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(arg(format!("probability score {bad} outside [0, 1]")));
    }
    ImportanceProfile::from_raw(scores.to_vec())
}

pub fn softmax_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(arg("cannot normalize an empty score vector"));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(numeric("importance scores must be finite"));
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn select_top_k(profile: &ImportanceProfile, k: usize) -> Result<FrameSet> {
    if k == 0 || k > profile.n_frames() {
        return Err(arg(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            profile.n_frames()
        )));
    }
    Ok(FrameSet::from_positions(&profile.ranked(true)[..k]))
}

fn cumulative_prefix(profile: &ImportanceProfile, p: f64, descending: bool) -> Result<FrameSet> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(arg(format!("mass threshold must be in (0, 1], got {p}")));
    }
    let order = profile.ranked(descending);
    let mut mass = 0.0;
    for (taken, &pos) in order.iter().enumerate() {
        mass += profile.normalized[pos];
        if mass + MASS_TOLERANCE >= p {
            return Ok(FrameSet::from_positions(&order[..=taken]));
        }
    }
    Ok(FrameSet::from_positions(&order))
}

pub fn select_top_p(profile: &ImportanceProfile, p: f64) -> Result<FrameSet> {
    cumulative_prefix(profile, p, true)
}

/// The least important frames whose cumulative mass reaches `p`.
pub fn select_bottom_p(profile: &ImportanceProfile, p: f64) -> Result<FrameSet> {
    cumulative_prefix(profile, p, false)
}

/// F1 between two frame sets: `2|P ∩ G| / (|P| + |G|)`, 1 when both are empty.
pub fn keyframe_f1(predicted: &FrameSet, truth: &FrameSet) -> f64 {
    let denom = predicted.len() + truth.len();
    if denom == 0 {
        return 1.0;
    }
    2.0 * predicted.intersection_len(truth) as f64 / denom as f64
}

/// Parses a `<frames>` span such as `"1, 3,5"`.
///
/// Any malformed or out-of-range entry voids the whole list (empty set).
pub fn parse_frame_indices(span: &str, n_frames: usize) -> FrameSet {
    let mut out = BTreeSet::new();
    for part in span.split(',') {
        match part.trim().parse::<usize>() {
            Ok(i) if i >= 1 && i <= n_frames => {
                out.insert(i);
            }
            _ => return FrameSet::empty(),
        }
    }
    FrameSet(out)
}

/// How proxy ground-truth frames are chosen from a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KeyframeMode {
    TopK(usize),
    TopP(f64),
    BottomP(f64),
}

impl KeyframeMode {
    pub fn select(&self, profile: &ImportanceProfile) -> Result<FrameSet> {
        match *self {
            Self::TopK(k) => select_top_k(profile, k),
            Self::TopP(p) => select_top_p(profile, p),
            Self::BottomP(p) => select_bottom_p(profile, p),
        }
    }
}

impl fmt::Display for KeyframeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TopK(k) => write!(f, "top_k:{k}"),
            Self::TopP(p) => write!(f, "top_p:{p}"),
            Self::BottomP(p) => write!(f, "bottom_p:{p}"),
        }
    }
}

impl FromStr for KeyframeMode {
    type Err = Error;

    /// Accepts `top_k:5`, `top_p:0.5`, `bottom_p:0.2` (`-` works for `_`).
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        let (kind, value) = norm
            .split_once(':')
            .ok_or_else(|| arg(format!("keyframe mode {s:?} should look like top_k:5")))?;
        let bad = || arg(format!("bad keyframe mode value in {s:?}"));
        match kind {
            "top_k" => {
                let k: usize = value.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(Self::TopK(k))
            }
            "top_p" | "bottom_p" => {
                let p: f64 = value.parse().map_err(|_| bad())?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(bad());
                }
                Ok(if kind == "top_p" {
                    Self::TopP(p)
                } else {
                    Self::BottomP(p)
                })
            }
            _ => Err(arg(format!("unknown keyframe mode {kind:?}"))),
        }
    }
}

impl TryFrom<String> for KeyframeMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KeyframeMode> for String {
    fn from(m: KeyframeMode) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Cosine,
    Probability,
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "probability" => Ok(Self::Probability),
            other => Err(arg(format!("unknown scorer {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn four() -> ImportanceProfile {
        ImportanceProfile::from_normalized(vec![0.4, 0.3, 0.2, 0.1]).unwrap()
    }

    fn set(xs: &[usize]) -> FrameSet {
        FrameSet::new(xs.iter().copied(), 32).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_normalize(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let out = softmax_normalize(&[4f64.ln(), 3f64.ln(), 2f64.ln(), 0.0]).unwrap();
        for (a, b) in out.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let shifted = softmax_normalize(&[4f64.ln() + 7.0, 3f64.ln() + 7.0, 2f64.ln() + 7.0, 7.0]).unwrap();
        for (a, b) in out.iter().zip(&shifted) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        assert!(softmax_normalize(&[]).is_err());
        let extreme = softmax_normalize(&[1e300, -1e300, 0.0]).unwrap();
        assert_abs_diff_eq!(extreme.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(select_top_k(&four(), 2).unwrap(), set(&[1, 2]));
        assert_eq!(select_top_k(&four(), 4).unwrap(), set(&[1, 2, 3, 4]));
        let uniform = ImportanceProfile::from_raw(vec![0.0; 4]).unwrap();
        assert_eq!(select_top_k(&uniform, 1).unwrap(), set(&[1]));
        assert!(select_top_k(&four(), 5).is_err());
    }

    #[test]
    fn top_p_examples() {
        assert_eq!(select_top_p(&four(), 0.5).unwrap(), set(&[1, 2]));
        assert_eq!(select_top_p(&four(), 1.0).unwrap(), set(&[1, 2, 3, 4]));
        assert_eq!(select_top_p(&four(), 0.4).unwrap(), set(&[1]));
        // Same profile reached through softmax of logs.
        let via_raw = ImportanceProfile::from_raw(vec![4f64.ln(), 3f64.ln(), 2f64.ln(), 0.0]).unwrap();
        assert_eq!(select_top_p(&via_raw, 0.4).unwrap(), set(&[1]));
    }

    #[test]
    fn bottom_p_examples() {
        assert_eq!(select_bottom_p(&four(), 0.2).unwrap(), set(&[3, 4]));
        assert_eq!(select_bottom_p(&four(), 0.05).unwrap(), set(&[4]));
        let uniform = ImportanceProfile::from_raw(vec![0.0; 4]).unwrap();
        assert_eq!(select_bottom_p(&uniform, 0.5).unwrap(), set(&[1, 2]));
    }

    #[test]
    fn f1_examples() {
        assert_abs_diff_eq!(keyframe_f1(&set(&[1, 2, 3]), &set(&[2, 3, 4])), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(keyframe_f1(&set(&[5, 6]), &set(&[5, 6])), 1.0);
        assert_eq!(keyframe_f1(&FrameSet::empty(), &FrameSet::empty()), 1.0);
        assert_eq!(keyframe_f1(&FrameSet::empty(), &set(&[1])), 0.0);
        let all = set(&(1..=16).collect::<Vec<_>>());
        assert_abs_diff_eq!(keyframe_f1(&all, &set(&[1, 2, 3])), 6.0 / 19.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_parse_examples() {
        assert_eq!(parse_frame_indices("1, 3,5", 16), set(&[1, 3, 5]));
        assert_eq!(parse_frame_indices("0,17", 16), FrameSet::empty());
        assert_eq!(parse_frame_indices("2,2,2", 16), set(&[2]));
        assert_eq!(parse_frame_indices("", 16), FrameSet::empty());
        assert_eq!(parse_frame_indices("1,x", 16), FrameSet::empty());
        assert_eq!(parse_frame_indices("3,7", 16).to_string(), "3,7");
    }

    #[test]
    fn cosine_examples() {
        let t = EmbeddingRecord::new("t", vec![1.0, 2.0, 0.0]).unwrap();
        let prof = cosine_importance(&t, &[t.clone(), t.clone()]).unwrap();
        for r in prof.raw() {
            assert_abs_diff_eq!(*r, 1.0, epsilon = 1e-12);
        }
        let ortho = EmbeddingRecord::new("f1", vec![-2.0, 1.0, 0.0]).unwrap();
        let prof = cosine_importance(&t, &[ortho, t.clone()]).unwrap();
        assert_abs_diff_eq!(prof.raw()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.raw()[1], 1.0, epsilon = 1e-12);

        let zero = EmbeddingRecord::new("z", vec![0.0; 3]).unwrap();
        assert!(matches!(cosine_importance(&t, &[zero]), Err(Error::NumericDomain(_))));
        let short = EmbeddingRecord::new("s", vec![1.0]).unwrap();
        assert!(matches!(cosine_importance(&t, &[short]), Err(Error::Argument(_))));
    }

    #[test]
    fn probability_examples() {
        let prof = probability_importance(&[0.9, 0.1]).unwrap();
        assert_eq!(prof.raw(), &[0.9, 0.1]);
        let flat = probability_importance(&[0.3; 5]).unwrap();
        for x in flat.normalized() {
            assert_abs_diff_eq!(*x, 0.2, epsilon = 1e-15);
        }
        assert!(probability_importance(&[1.2]).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("top_k:5".parse::<KeyframeMode>().unwrap(), KeyframeMode::TopK(5));
        assert_eq!("bottom-p:0.2".parse::<KeyframeMode>().unwrap(), KeyframeMode::BottomP(0.2));
        assert!("top_p:1.5".parse::<KeyframeMode>().is_err());
        assert!("top_k".parse::<KeyframeMode>().is_err());
        let m: KeyframeMode = "top_p:0.5".parse().unwrap();
        assert_eq!(m.to_string().parse::<KeyframeMode>().unwrap(), m);
    }
}
