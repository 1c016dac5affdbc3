//! QA records: validation, line-delimited JSON I/O, and the synthetic
//! task generator.
//!
//! Dataset files hold one JSON object per line:
//!
//! ```json
//! {"version":1,"question_id":"q00000","prompt_class":3,"task_kind":"mcqa",
//!  "question_text":"...","choices":["cup","knife","door","bowl"],"gold_answer":"B",
//!  "n_frames":16,"frame_scores":[...],"frame_embedding_ids":["q00000/f1",...]}
//! ```
//!
//! `choices`, `n_frames`, `frame_scores` and `frame_embedding_ids` are
//! optional. Blank lines are ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{choice_label, TaskKind, TaskSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::vocab::{ANSWER_WORDS, YES_NO};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question_id: String,
    pub prompt_class: usize,
    pub task_kind: TaskKind,
    pub question_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_embedding_ids: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    version: u32,
    #[serde(flatten)]
    record: QaRecord,
}

impl QaRecord {
    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::new(
            self.question_id.clone(),
            self.task_kind,
            self.gold_answer.clone(),
            self.choices.clone(),
        )
    }

    /// The question as shown to the model: the text, then one `X. choice`
    /// line per option for multiple-choice records.
    pub fn question_block(&self) -> String {
        let mut out = self.question_text.clone();
        if let Some(choices) = &self.choices {
            for (i, c) in choices.iter().enumerate() {
                out.push('\n');
                out.push_str(&format!("{}. {c}", choice_label(i)));
            }
        }
        out
    }

    /// Checks record invariants; on failure returns `(field, message)`.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.question_id.trim().is_empty() {
            return Err(("question_id", "must not be empty".into()));
        }
        match self.task_kind {
            TaskKind::Mcqa => {
                let Some(choices) = &self.choices else {
                    return Err(("choices", "mcqa records need choices".into()));
                };
                if choices.len() < 2 || choices.len() > 26 {
                    return Err(("choices", format!("need 2..=26 choices, got {}", choices.len())));
                }
                let labels: Vec<String> = (0..choices.len()).map(choice_label).collect();
                if !labels.contains(&self.gold_answer) {
                    return Err((
                        "gold_answer",
                        format!("{:?} is not one of the labels {labels:?}", self.gold_answer),
                    ));
                }
            }
            TaskKind::Yesno => {
                if !YES_NO.contains(&self.gold_answer.as_str()) {
                    return Err(("gold_answer", "yes/no records answer Yes or No".into()));
                }
            }
            TaskKind::Open => {
                if self.gold_answer.trim().is_empty() {
                    return Err(("gold_answer", "must not be empty".into()));
                }
            }
        }
        if self.n_frames == Some(0) {
            return Err(("n_frames", "must be positive".into()));
        }
        if let Some(scores) = &self.frame_scores {
            let Some(n) = self.n_frames else {
                return Err(("n_frames", "required when frame_scores is present".into()));
            };
            if scores.len() != n {
                return Err(("frame_scores", format!("expected {n} scores, got {}", scores.len())));
            }
            if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(("frame_scores", format!("score {bad} outside [0, 1]")));
            }
        }
        if let Some(ids) = &self.frame_embedding_ids {
            let Some(n) = self.n_frames else {
                return Err(("n_frames", "required when frame_embedding_ids is present".into()));
            };
            if ids.len() != n {
                return Err(("frame_embedding_ids", format!("expected {n} ids, got {}", ids.len())));
            }
        }
        Ok(())
    }
}

/// Parses and validates a whole dataset; any error rejects the load.
pub fn read_dataset<R: BufRead>(reader: R, source: &Path) -> Result<Vec<QaRecord>> {
    let load_err = |line: usize, field: &str, message: String| Error::Load {
        path: source.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine =
            serde_json::from_str(&line).map_err(|e| load_err(lineno, "record", e.to_string()))?;
        if parsed.version != DATASET_VERSION {
            return Err(load_err(
                lineno,
                "version",
                format!("unsupported version {}", parsed.version),
            ));
        }
        let rec = parsed.record;
        rec.check().map_err(|(field, msg)| load_err(lineno, field, msg))?;
        if !seen.insert(rec.question_id.clone()) {
            return Err(load_err(
                lineno,
                "question_id",
                format!("duplicate id {:?}", rec.question_id),
            ));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaRecord>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_dataset(BufReader::new(file), path)
}

pub fn write_records<W: Write>(mut out: W, records: &[QaRecord]) -> Result<()> {
    for rec in records {
        let line = DatasetLine {
            version: DATASET_VERSION,
            record: rec.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[QaRecord]) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), records)
}

/// Relative frequency of each task kind in a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    pub mcqa: f64,
    pub yesno: f64,
    pub open: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self {
            mcqa: 1.0,
            yesno: 0.0,
            open: 0.0,
        }
    }
}

/// Parameters of the synthetic generator.
///
/// Each prompt class is one underlying question with a fixed task kind and
/// gold answer; records are instances of their class. Multiple-choice gold
/// labels are spread evenly over the classes, so answering `A` everywhere
/// scores `1 / n_choices` on a dataset that visits classes uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub n_questions: usize,
    pub n_choices: usize,
    pub mix: TaskMix,
    /// Frames per video; `None` produces records without frame data.
    pub n_frames: Option<usize>,
    /// Answer-bearing frames per class.
    pub salient_frames: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_questions: 256,
            n_choices: 4,
            mix: TaskMix::default(),
            n_frames: Some(16),
            salient_frames: 1,
        }
    }
}

struct ClassPlan {
    kind: TaskKind,
    gold: String,
    choices: Option<Vec<String>>,
    salient: Vec<usize>,
}

fn pick_kind(mix: &TaskMix, u: f64) -> TaskKind {
    let total = mix.mcqa + mix.yesno + mix.open;
    let x = u * total;
    if x < mix.mcqa {
        TaskKind::Mcqa
    } else if x < mix.mcqa + mix.yesno {
        TaskKind::Yesno
    } else {
        TaskKind::Open
    }
}

fn validate_spec(spec: &SynthSpec) -> Result<()> {
    let bad = |m: String| Err(Error::Argument(m));
    if spec.n_classes == 0 {
        return bad("n_classes must be positive".into());
    }
    if !(2..=ANSWER_WORDS.len()).contains(&spec.n_choices) {
        return bad(format!("n_choices must be in 2..={}", ANSWER_WORDS.len()));
    }
    let m = spec.mix;
    if [m.mcqa, m.yesno, m.open].iter().any(|w| *w < 0.0 || !w.is_finite())
        || m.mcqa + m.yesno + m.open <= 0.0
    {
        return bad("task mix weights must be non-negative and not all zero".into());
    }
    if let Some(n) = spec.n_frames {
        if n == 0 || spec.salient_frames == 0 || spec.salient_frames > n {
            return bad(format!("need 1 <= salient_frames <= n_frames, got {} of {n}", spec.salient_frames));
        }
    }
    Ok(())
}

/// Deterministic synthetic QA records.
pub fn generate_synthetic_tasks(spec: &SynthSpec, seed: u64) -> Result<Vec<QaRecord>> {
    validate_spec(spec)?;
    let mut rng = rng_from_seed(derive_seed(seed, &[0x5954_4e54]));

    let kinds: Vec<TaskKind> = (0..spec.n_classes)
        .map(|_| pick_kind(&spec.mix, rng.random()))
        .collect();
    // Even spread of gold labels over the classes of each closed-form kind.
    let mcqa_classes: Vec<usize> = (0..spec.n_classes).filter(|&c| kinds[c] == TaskKind::Mcqa).collect();
    let mut mcqa_gold: Vec<usize> = (0..mcqa_classes.len()).map(|i| i % spec.n_choices).collect();
    mcqa_gold.shuffle(&mut rng);
    let yesno_classes: Vec<usize> = (0..spec.n_classes).filter(|&c| kinds[c] == TaskKind::Yesno).collect();
    let mut yesno_gold: Vec<usize> = (0..yesno_classes.len()).map(|i| i % 2).collect();
    yesno_gold.shuffle(&mut rng);

    let mut plans = Vec::with_capacity(spec.n_classes);
    for (class, &kind) in kinds.iter().enumerate() {
        let (gold, choices) = match kind {
            TaskKind::Mcqa => {
                let slot = mcqa_classes.iter().position(|&c| c == class).unwrap();
                let mut objects: Vec<String> = ANSWER_WORDS.iter().map(|w| w.to_string()).collect();
                objects.shuffle(&mut rng);
                objects.truncate(spec.n_choices);
                (choice_label(mcqa_gold[slot]), Some(objects))
            }
            TaskKind::Yesno => {
                let slot = yesno_classes.iter().position(|&c| c == class).unwrap();
                (YES_NO[yesno_gold[slot]].to_string(), None)
            }
            TaskKind::Open => {
                let n_words = rng.random_range(1..=3);
                let words: Vec<&str> = (0..n_words)
                    .map(|_| ANSWER_WORDS[rng.random_range(0..ANSWER_WORDS.len())])
                    .collect();
                (words.join(" "), None)
            }
        };
        let salient = match spec.n_frames {
            Some(n) => {
                let mut frames: Vec<usize> = (1..=n).collect();
                frames.shuffle(&mut rng);
                frames.truncate(spec.salient_frames);
                frames.sort_unstable();
                frames
            }
            None => Vec::new(),
        };
        plans.push(ClassPlan {
            kind,
            gold,
            choices,
            salient,
        });
    }

    let mut classes: Vec<usize> = (0..spec.n_questions).map(|i| i % spec.n_classes).collect();
    classes.shuffle(&mut rng);

    let mut records = Vec::with_capacity(spec.n_questions);
    for (i, &class) in classes.iter().enumerate() {
        let plan = &plans[class];
        let question_id = format!("q{i:05}");
        let question_text = match plan.kind {
            TaskKind::Mcqa => format!("Clip {i}, scene {class}: which object does the camera wearer reach for?"),
            TaskKind::Yesno => format!("Clip {i}, scene {class}: does the camera wearer open the door?"),
            TaskKind::Open => format!("Clip {i}, scene {class}: what does the camera wearer do next?"),
        };
        let (n_frames, frame_scores, frame_embedding_ids) = match spec.n_frames {
            Some(n) => {
                let scores: Vec<f64> = (1..=n)
                    .map(|f| {
                        if plan.salient.contains(&f) {
                            rng.random_range(0.8..=1.0)
                        } else {
                            rng.random_range(0.0..0.4)
                        }
                    })
                    .collect();
                let ids = (1..=n).map(|f| format!("{question_id}/f{f}")).collect();
                (Some(n), Some(scores), Some(ids))
            }
            None => (None, None, None),
        };
        records.push(QaRecord {
            question_id,
            prompt_class: class,
            task_kind: plan.kind,
            question_text,
            choices: plan.choices.clone(),
            gold_answer: plan.gold.clone(),
            n_frames,
            frame_scores,
            frame_embedding_ids,
        });
    }
    Ok(records)
}

/// Where a dataset came from, for error messages on in-memory sources.
pub fn memory_source() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyframe::{probability_importance, select_top_k, FrameSet};
    use crate::reward::exact_match_accuracy;

    fn parse(text: &str) -> Result<Vec<QaRecord>> {
        read_dataset(text.as_bytes(), &memory_source())
    }

    const GOOD: &str = r#"{"version":1,"question_id":"a","prompt_class":0,"task_kind":"mcqa","question_text":"q?","choices":["x","y"],"gold_answer":"B"}
{"version":1,"question_id":"b","prompt_class":1,"task_kind":"yesno","question_text":"q?","gold_answer":"No"}
{"version":1,"question_id":"c","prompt_class":2,"task_kind":"open","question_text":"q?","gold_answer":"pick cup","n_frames":2,"frame_scores":[0.5,0.1]}
"#;

    #[test]
    fn loads_happy_path() {
        assert_eq!(parse(GOOD).unwrap().len(), 3);
    }

    #[test]
    fn rejects_mcqa_without_choices() {
        let text = GOOD.replace(r#""choices":["x","y"],"#, "");
        match parse(&text).unwrap_err() {
            Error::Load { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "choices");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = GOOD.replace(r#""question_id":"c""#, r#""question_id":"a""#);
        match parse(&text).unwrap_err() {
            Error::Load { line, field, .. } => assert_eq!((line, field.as_str()), (3, "question_id")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_bad_scores_and_version() {
        assert!(parse(&GOOD.replace("[0.5,0.1]", "[0.5,1.1]")).is_err());
        assert!(parse(&GOOD.replace("[0.5,0.1]", "[0.5]")).is_err());
        let err = parse(&GOOD.replacen(r#""version":1"#, r#""version":9"#, 1)).unwrap_err();
        assert!(err.to_string().contains("version"));
        let err = parse("{not json}\n").unwrap_err();
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SynthSpec::default();
        let a = generate_synthetic_tasks(&spec, 7).unwrap();
        let b = generate_synthetic_tasks(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_tasks(&spec, 8).unwrap();
        assert_ne!(a, c);
        for r in &a {
            r.check().unwrap();
        }
    }

    #[test]
    fn synthetic_gold_labels_are_balanced() {
        let recs = generate_synthetic_tasks(&SynthSpec::default(), 1).unwrap();
        let share_a = recs.iter().filter(|r| r.gold_answer == "A").count() as f64 / recs.len() as f64;
        assert_eq!(share_a, 0.25);
    }

    #[test]
    fn uniform_guessing_baseline() {
        let spec = SynthSpec {
            n_classes: 64,
            n_questions: 1024,
            ..Default::default()
        };
        let recs = generate_synthetic_tasks(&spec, 2).unwrap();
        let mut rng = rng_from_seed(99);
        let mut total = 0.0;
        for _ in 0..10_000 {
            let r = &recs[rng.random_range(0..recs.len())];
            let guess = choice_label(rng.random_range(0..4));
            total += exact_match_accuracy(&guess, &r.task_spec().unwrap()).unwrap();
        }
        let mean = total / 10_000.0;
        assert!((mean - 0.25).abs() <= 0.03, "{mean}");
    }

    #[test]
    fn single_salient_frame_is_recovered() {
        let recs = generate_synthetic_tasks(&SynthSpec::default(), 3).unwrap();
        for r in recs.iter().take(20) {
            let scores = r.frame_scores.as_ref().unwrap();
            let prof = probability_importance(scores).unwrap();
            let top = select_top_k(&prof, 1).unwrap();
            let best = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
                + 1;
            assert_eq!(top, FrameSet::new([best], 16).unwrap());
            assert!(scores.iter().filter(|&&s| s >= 0.8).count() == 1);
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let spec = SynthSpec {
            mix: TaskMix {
                mcqa: 1.0,
                yesno: 1.0,
                open: 1.0,
            },
            n_questions: 40,
            ..Default::default()
        };
        let recs = generate_synthetic_tasks(&spec, 5).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = read_dataset(buf.as_slice(), &memory_source()).unwrap();
        assert_eq!(back, recs);
        let mut again = Vec::new();
        write_records(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }
}
