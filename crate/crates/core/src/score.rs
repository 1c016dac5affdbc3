//! Batch reward scoring of recorded completions.
//!
//! Input is line-delimited JSON, one completion per line:
//!
//! ```json
//! {"question_id":"q1","completion_text":"<think>..</think><answer>A</answer>",
//!  "task_kind":"mcqa","gold_answer":"A","expects_frames":false}
//! ```
//!
//! Optional fields: `choices` (list of strings), and for keyframe scoring
//! `n_frames` together with `keyframe_truth` (1-based indices). Output is one
//! line per input, `{"question_id","format","accuracy","keyframe"?,"total"}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyframe::{keyframe_f1, parse_frame_indices, FrameSet};
use crate::reward::{parse_tags, score_parsed, RewardBreakdown, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub question_id: String,
    pub completion_text: String,
    pub task_kind: TaskKind,
    pub gold_answer: String,
    pub expects_frames: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_truth: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub question_id: String,
    pub format: f64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe: Option<f64>,
    pub total: f64,
}

impl ScoreResult {
    pub fn breakdown(&self) -> RewardBreakdown {
        RewardBreakdown {
            format: self.format,
            accuracy: self.accuracy,
            keyframe: self.keyframe,
            total: self.total,
        }
    }
}

struct Prepared {
    request: ScoreRequest,
    spec: TaskSpec,
    truth: Option<(usize, FrameSet)>,
}

fn prepare(request: ScoreRequest) -> std::result::Result<Prepared, (&'static str, String)> {
    let spec = TaskSpec::new(
        request.question_id.clone(),
        request.task_kind,
        request.gold_answer.clone(),
        request.choices.clone(),
    )
    .map_err(|e| ("gold_answer", e.to_string()))?;
    let truth = match (&request.keyframe_truth, request.n_frames) {
        (None, _) => None,
        (Some(_), None) => return Err(("n_frames", "required with keyframe_truth".into())),
        (Some(idx), Some(n)) => {
            let set = FrameSet::new(idx.iter().copied(), n).map_err(|e| ("keyframe_truth", e.to_string()))?;
            Some((n, set))
        }
    };
    Ok(Prepared { request, spec, truth })
}

pub fn score_request(request: &ScoreRequest) -> Result<ScoreResult> {
    let p = prepare(request.clone()).map_err(|(field, m)| Error::Argument(format!("{field}: {m}")))?;
    score_prepared(&p)
}

fn score_prepared(p: &Prepared) -> Result<ScoreResult> {
    let parsed = parse_tags(&p.request.completion_text);
    let keyframe = p.truth.as_ref().map(|(n, truth)| {
        let predicted = parsed
            .frames
            .as_deref()
            .map(|s| parse_frame_indices(s, *n))
            .unwrap_or_default();
        keyframe_f1(&predicted, truth)
    });
    let b = score_parsed(&parsed, &p.spec, keyframe, p.request.expects_frames)?;
    Ok(ScoreResult {
        question_id: p.request.question_id.clone(),
        format: b.format,
        accuracy: b.accuracy,
        keyframe: b.keyframe,
        total: b.total,
    })
}

/// Reads every request, then scores them all.
///
/// A malformed line fails the whole batch with a load error naming the line,
/// before anything is scored.
pub fn score_batch<R: BufRead>(reader: R, source: &Path) -> Result<Vec<ScoreResult>> {
    let mut prepared = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |field: &str, message: String| Error::Load {
            path: source.to_path_buf(),
            line: i + 1,
            field: field.to_string(),
            message,
        };
        let request: ScoreRequest = serde_json::from_str(&line).map_err(|e| load_err("record", e.to_string()))?;
        prepared.push(prepare(request).map_err(|(field, m)| load_err(field, m))?);
    }
    prepared.iter().map(score_prepared).collect()
}

pub fn write_results<W: Write>(mut out: W, results: &[ScoreResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
