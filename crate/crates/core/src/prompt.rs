//! Prompt templates used during training and evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::QaRecord;
use crate::error::{arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTemplate {
    Simple,
    Detailed,
    DetailedKeyframes,
    DetailedIrrelevant,
    /// Evaluation-only: answer immediately, no reasoning block.
    Direct,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 5] = [
        Self::Simple,
        Self::Detailed,
        Self::DetailedKeyframes,
        Self::DetailedIrrelevant,
        Self::Direct,
    ];

    /// Whether completions for this template must carry a `<frames>` block.
    pub fn expects_frames(self) -> bool {
        matches!(self, Self::DetailedKeyframes | Self::DetailedIrrelevant)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Detailed => "detailed",
            Self::DetailedKeyframes => "detailed_keyframes",
            Self::DetailedIrrelevant => "detailed_irrelevant",
            Self::Direct => "direct",
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| arg(format!("unknown template {s:?}")))
    }
}

/// How many frames the keyframe template asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRequest {
    /// "pick {k} important frames" (top-k supervision).
    Count(usize),
    /// No fixed count (top-p supervision).
    Unbounded,
}

const TAG_INSTRUCTIONS: &str = "<think> </think> tags and then output the final answer in <answer> </answer> tags";
const VERIFY: &str = "While thinking you must robustly verify your solution. It's encouraged to include self-reflection or verification in the thinking process.";

/// Substitutes the record (and frame request) into `template`.
///
/// Keyframe templates need `record.n_frames`; `DetailedKeyframes` also needs
/// a [`FrameRequest`].
pub fn render_prompt(template: PromptTemplate, record: &QaRecord, frames: Option<FrameRequest>) -> Result<String> {
    let question = record.question_block();
    let n_frames = || {
        record
            .n_frames
            .ok_or_else(|| arg(format!("{}: template {template} needs n_frames", record.question_id)))
    };
    let body = match template {
        PromptTemplate::Simple => format!(
            "First output a thinking process about the video and question within {TAG_INSTRUCTIONS}, \
             e.g. <think> reasoning process here </think> <answer> answer here </answer>."
        ),
        PromptTemplate::Detailed => format!(
            "First analyze and think about the given video and question. Provide a detailed thinking \
             process about the video within {TAG_INSTRUCTIONS}, e.g. <think> thinking process here \
             </think> <answer> answer here </answer>. {VERIFY}"
        ),
        PromptTemplate::DetailedKeyframes => {
            let n = n_frames()?;
            let pick = match frames {
                Some(FrameRequest::Count(k)) => {
                    if k == 0 || k > n {
                        return Err(arg(format!("cannot ask for {k} of {n} frames")));
                    }
                    format!("pick {k} important frames")
                }
                Some(FrameRequest::Unbounded) => "pick the important frames".to_string(),
                None => {
                    return Err(arg(format!(
                        "{}: keyframe template needs a frame count",
                        record.question_id
                    )))
                }
            };
            format!(
                "Analyze and think about the given video and question. The given video contains {n} frames. \
                 First provide a detailed thinking process about the video, how it relates to the question, \
                 and which frames contain important information within <think> </think> tags. Then {pick} \
                 from the video needed to answer the given question and list their indices (1-based, \
                 comma-separated) within <frames> </frames> tags. Finally provide the answer within \
                 <answer> </answer> tags. For example, <think> thinking process here </think> <frames> \
                 frame indices here </frames> <answer> answer here </answer>. {VERIFY}"
            )
        }
        PromptTemplate::DetailedIrrelevant => {
            let n = n_frames()?;
            format!(
                "Analyze and think about the given video and question. The given video contains {n} frames. \
                 First provide a detailed thinking process about the video, explain how it relates to the \
                 question, and locate frames in the video that are irrelevant to the question. Provide this \
                 thinking process within <think> </think> tags. Then list the non-informative frames indices \
                 (1-based, comma-separated) within <frames> </frames> tags. Finally provide the answer within \
                 <answer> </answer> tags. For example, <think> thinking process here </think> <frames> \
                 irrelevant frame indices here </frames> <answer> answer here </answer>. While thinking, you \
                 must filter out irrelevant visual information and robustly verify your solution. It is \
                 encouraged to include self-reflection or verification in the thinking process."
            )
        }
        PromptTemplate::Direct => {
            "Answer the question directly, without any reasoning, by giving only the final answer \
             within <answer> </answer> tags."
                .to_string()
        }
    };
    Ok(format!("{question} {body}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::TaskKind;

    fn record() -> QaRecord {
        QaRecord {
            question_id: "q".into(),
            prompt_class: 0,
            task_kind: TaskKind::Open,
            question_text: "What is X?".into(),
            choices: None,
            gold_answer: "cup".into(),
            n_frames: Some(16),
            frame_scores: None,
            frame_embedding_ids: None,
        }
    }

    #[test]
    fn keyframe_count_is_substituted() {
        let p = render_prompt(PromptTemplate::DetailedKeyframes, &record(), Some(FrameRequest::Count(5))).unwrap();
        assert!(p.contains("pick 5 important frames"));
        assert!(p.contains("contains 16 frames"));
        assert!(render_prompt(PromptTemplate::DetailedKeyframes, &record(), None).is_err());
        let p = render_prompt(PromptTemplate::DetailedKeyframes, &record(), Some(FrameRequest::Unbounded)).unwrap();
        assert!(p.contains("pick the important frames"));
    }

    #[test]
    fn question_appears_once_and_frames_tags_where_expected() {
        for t in PromptTemplate::ALL {
            let p = render_prompt(t, &record(), Some(FrameRequest::Count(3))).unwrap();
            assert_eq!(p.matches("What is X?").count(), 1, "{t}");
            assert_eq!(p.contains("<frames>"), t.expects_frames(), "{t}");
            assert!(!p.contains("  "), "{t}: double space");
        }
        let p = render_prompt(PromptTemplate::Detailed, &record(), None).unwrap();
        assert!(p.contains("self-reflection or verification"));
    }

    #[test]
    fn keyframe_templates_need_frame_count() {
        let mut r = record();
        r.n_frames = None;
        assert!(render_prompt(PromptTemplate::DetailedIrrelevant, &r, None).is_err());
        assert!(render_prompt(PromptTemplate::Simple, &r, None).is_ok());
    }
}
