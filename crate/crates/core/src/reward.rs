//! Rule-based rewards: tag format, answer accuracy, and their sum.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::vocab::{ANSWER_CLOSE, ANSWER_OPEN, FRAMES_CLOSE, FRAMES_OPEN, THINK_CLOSE, THINK_OPEN};

/// Spans extracted from a completion by [`parse_tags`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub think: Option<String>,
    pub answer: Option<String>,
    pub frames: Option<String>,
    /// Blocks appear as `think, [frames,] answer` with nothing but
    /// whitespace around them and no repeated or nested tags.
    pub well_ordered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    FramesOpen,
    FramesClose,
}

const TAG_TEXT: [(Tag, &str); 6] = [
    (Tag::ThinkOpen, THINK_OPEN),
    (Tag::ThinkClose, THINK_CLOSE),
    (Tag::AnswerOpen, ANSWER_OPEN),
    (Tag::AnswerClose, ANSWER_CLOSE),
    (Tag::FramesOpen, FRAMES_OPEN),
    (Tag::FramesClose, FRAMES_CLOSE),
];

fn scan_tags(text: &str) -> Vec<(Tag, usize, usize)> {
    let mut found = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let at = i + off;
        let rest = &text[at..];
        match TAG_TEXT.iter().find(|(_, lit)| rest.starts_with(lit)) {
            Some((tag, lit)) => {
                found.push((*tag, at, at + lit.len()));
                i = at + lit.len();
            }
            None => i = at + 1,
        }
    }
    found
}

fn span(text: &str, tags: &[(Tag, usize, usize)], open: Tag, close: Tag) -> Option<String> {
    let opens: Vec<_> = tags.iter().filter(|t| t.0 == open).collect();
    let closes: Vec<_> = tags.iter().filter(|t| t.0 == close).collect();
    match (opens.as_slice(), closes.as_slice()) {
        ([o], [c]) if o.2 <= c.1 => Some(text[o.2..c.1].to_string()),
        _ => None,
    }
}

/// Extracts the think/frames/answer spans. Never fails.
///
/// A span is present iff its opening and closing tag each occur exactly once,
/// opening first. Tags match literally and case-sensitively.
pub fn parse_tags(text: &str) -> ParsedCompletion {
    let tags = scan_tags(text);
    let think = span(text, &tags, Tag::ThinkOpen, Tag::ThinkClose);
    let answer = span(text, &tags, Tag::AnswerOpen, Tag::AnswerClose);
    let frames = span(text, &tags, Tag::FramesOpen, Tag::FramesClose);

    let order: Vec<Tag> = tags.iter().map(|t| t.0).collect();
    use Tag::*;
    let layout_ok = order == [ThinkOpen, ThinkClose, AnswerOpen, AnswerClose]
        || order == [ThinkOpen, ThinkClose, FramesOpen, FramesClose, AnswerOpen, AnswerClose];
    // Text outside the blocks: before the first tag, between a close and the
    // next open, after the last tag.
    let outside_blank = layout_ok && {
        let mut gaps = vec![&text[..tags[0].1], &text[tags[tags.len() - 1].2..]];
        for pair in tags.windows(2).skip(1).step_by(2) {
            gaps.push(&text[pair[0].2..pair[1].1]);
        }
        gaps.iter().all(|g| g.trim().is_empty())
    };

    ParsedCompletion {
        think,
        answer,
        frames,
        well_ordered: layout_ok && outside_blank,
    }
}

/// 1.0 iff the completion has exactly the block structure the prompt asked for.
///
/// With `expects_frames` the `<frames>` block is mandatory; without it the
/// block must be absent.
pub fn format_reward(parsed: &ParsedCompletion, expects_frames: bool) -> f64 {
    let ok = parsed.well_ordered
        && parsed.think.is_some()
        && parsed.answer.is_some()
        && parsed.frames.is_some() == expects_frames;
    if ok {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mcqa,
    Yesno,
    Open,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcqa" => Ok(Self::Mcqa),
            "yesno" => Ok(Self::Yesno),
            "open" => Ok(Self::Open),
            other => Err(arg(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Choice label for position `i`: `A`, `B`, ...
pub fn choice_label(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

/// What a completion is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub question_id: String,
    pub task_kind: TaskKind,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl TaskSpec {
    pub fn new(
        question_id: impl Into<String>,
        task_kind: TaskKind,
        gold_answer: impl Into<String>,
        choices: Option<Vec<String>>,
    ) -> Result<Self> {
        let spec = Self {
            question_id: question_id.into(),
            task_kind,
            gold_answer: gold_answer.into(),
            choices,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Choice lists, when given, must have at least two entries and the gold
    /// answer must be one of their labels.
    pub fn validate(&self) -> Result<()> {
        if let Some(choices) = &self.choices {
            if choices.len() < 2 || choices.len() > 26 {
                return Err(arg(format!(
                    "{}: need between 2 and 26 choices, got {}",
                    self.question_id,
                    choices.len()
                )));
            }
            let labels: Vec<String> = (0..choices.len()).map(choice_label).collect();
            if !labels.contains(&self.gold_answer) {
                return Err(arg(format!(
                    "{}: gold answer {:?} is not a choice label",
                    self.question_id, self.gold_answer
                )));
            }
        }
        Ok(())
    }
}

/// Normalization applied before exact matching: trim, drop one trailing
/// period, trim again, lowercase.
pub fn normalize_answer(s: &str) -> String {
    let t = s.trim();
    let t = t.strip_suffix('.').unwrap_or(t);
    t.trim().to_lowercase()
}

pub fn exact_match_accuracy(answer: &str, spec: &TaskSpec) -> Result<f64> {
    if spec.task_kind == TaskKind::Open {
        return Err(Error::Contract(format!(
            "{}: exact match is only defined for mcqa and yes/no tasks",
            spec.question_id
        )));
    }
    Ok(if normalize_answer(answer) == normalize_answer(&spec.gold_answer) {
        1.0
    } else {
        0.0
    })
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 over whitespace tokens.
///
/// Two empty strings score 1; one empty string scores 0.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    match (cand.is_empty(), refr.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let lcs = lcs_len(&cand, &refr) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / refr.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub keyframe: Option<f64>,
    pub total: f64,
}

/// Parses, scores format and accuracy, and adds the keyframe term if given.
pub fn total_reward(
    text: &str,
    spec: &TaskSpec,
    keyframe: Option<f64>,
    expects_frames: bool,
) -> Result<RewardBreakdown> {
    if let Some(k) = keyframe {
        if !(0.0..=1.0).contains(&k) {
            return Err(arg(format!("keyframe component {k} outside [0, 1]")));
        }
    }
    let parsed = parse_tags(text);
    score_parsed(&parsed, spec, keyframe, expects_frames)
}

pub(crate) fn score_parsed(
    parsed: &ParsedCompletion,
    spec: &TaskSpec,
    keyframe: Option<f64>,
    expects_frames: bool,
) -> Result<RewardBreakdown> {
    let format = format_reward(parsed, expects_frames);
    let accuracy = match (&parsed.answer, spec.task_kind) {
        (None, _) => 0.0,
        (Some(a), TaskKind::Open) => rouge_l(a, &spec.gold_answer),
        (Some(a), _) => exact_match_accuracy(a, spec)?,
    };
    Ok(RewardBreakdown {
        format,
        accuracy,
        keyframe,
        total: format + accuracy + keyframe.unwrap_or(0.0),
    })
}
