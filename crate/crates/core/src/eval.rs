//! Greedy evaluation of a checkpoint, with and without the reasoning block.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::QaRecord;
use crate::error::{arg, Error, Result};
use crate::policy::greedy_decode;
use crate::prompt::{render_prompt, PromptTemplate};
use crate::reward::{exact_match_accuracy, parse_tags, TaskKind};
use crate::vocab::{Vocabulary, ANSWER_CLOSE, ANSWER_OPEN, TAGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Decode the full think/answer completion and read the answer span.
    Reasoning,
    /// Start inside `<answer>` and read everything up to `</answer>`.
    Direct,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reasoning => "reasoning",
            Self::Direct => "direct",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reasoning" => Ok(Self::Reasoning),
            "direct" => Ok(Self::Direct),
            _ => Err(arg(format!("unknown eval mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub mode: EvalMode,
    pub n_questions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Template rendered in reasoning mode; direct mode always renders
    /// [`PromptTemplate::Direct`].
    pub template: PromptTemplate,
    pub max_len: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Reasoning,
            template: PromptTemplate::Detailed,
            max_len: 24,
        }
    }
}

/// Decodes one answer string for `record`.
pub fn answer_for(checkpoint: &Checkpoint, record: &QaRecord, opts: &EvalOptions) -> Result<Option<String>> {
    let vocab = &checkpoint.vocab;
    let params = &checkpoint.params;
    match opts.mode {
        EvalMode::Reasoning => {
            let tokens = greedy_decode(params, record.prompt_class, params.bos(), &[], opts.max_len)?;
            Ok(parse_tags(&vocab.detokenize(&tokens)).answer)
        }
        EvalMode::Direct => {
            let open = vocab.require(ANSWER_OPEN)?;
            let close = vocab.require(ANSWER_CLOSE)?;
            let tokens = greedy_decode(params, record.prompt_class, open, &[close], opts.max_len)?;
            let words: Vec<usize> = tokens
                .into_iter()
                .filter(|&t| t != params.eos() && vocab.token(t).is_some_and(|s| !TAGS.contains(&s)))
                .collect();
            Ok(Some(vocab.detokenize(&words)))
        }
    }
}

/// Scores `records` by exact match under greedy decoding.
///
/// Only multiple-choice and yes/no records are accepted. The checkpoint must
/// use the standard vocabulary and cover every prompt class in `records`.
pub fn evaluate(checkpoint: &Checkpoint, records: &[QaRecord], dataset_id: &str, opts: &EvalOptions) -> Result<EvalReport> {
    if checkpoint.vocab != Vocabulary::standard() {
        return Err(Error::Checkpoint("checkpoint vocabulary does not match the standard vocabulary".into()));
    }
    if records.is_empty() {
        return Err(arg("cannot evaluate on an empty dataset"));
    }
    let template = match opts.mode {
        EvalMode::Reasoning => opts.template,
        EvalMode::Direct => PromptTemplate::Direct,
    };
    if template.expects_frames() {
        return Err(arg(format!("evaluation does not support template {template}")));
    }
    let n_classes = checkpoint.params.n_classes();
    let mut correct = 0;
    for r in records {
        if r.task_kind == TaskKind::Open {
            return Err(arg(format!("{}: evaluation needs mcqa or yesno records", r.question_id)));
        }
        if r.prompt_class >= n_classes {
            return Err(Error::Checkpoint(format!(
                "{}: prompt class {} but checkpoint has {n_classes} classes",
                r.question_id, r.prompt_class
            )));
        }
        render_prompt(template, r, None)?;
        let spec = r.task_spec()?;
        if let Some(answer) = answer_for(checkpoint, r, opts)? {
            if exact_match_accuracy(&answer, &spec)? == 1.0 {
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        dataset_id: dataset_id.to_string(),
        mode: opts.mode,
        n_questions: records.len(),
        correct,
        accuracy: correct as f64 / records.len() as f64,
    })
}
