//! The GRPO training loop.
//!
//! Each step draws one question, samples a group from the old policy (a
//! snapshot of the current parameters taken at the start of the step),
//! scores every completion with the rule-based rewards, computes
//! group-relative advantages and the exact objective gradient, and takes one
//! ascent step. The reference policy is the initialization and never moves.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::QaRecord;
use crate::embedding::{EmbeddingProvider, RemoteEmbeddings, SyntheticEmbeddings};
use crate::error::{arg, Error, Result};
use crate::grpo::{apply_update, compute_advantages, objective_gradient, surrogate_objective, GroupSample, GrpoHyperParams};
use crate::keyframe::{keyframe_f1, parse_frame_indices, FrameSet, ScorerKind};
use crate::metrics::{MetricsWriter, StepMetrics};
use crate::policy::{sample_completion, snapshot, PolicyParams, PolicySet, PolicySnapshot, SnapshotRole};
use crate::prior::{instruction_prior, AnswerSlot, PriorStrengths};
use crate::prompt::{render_prompt, PromptTemplate};
use crate::proxy::{compute_keyframe_truth, read_cache, truth_map};
use crate::reward::{parse_tags, score_parsed, TaskKind, RewardBreakdown};
use crate::rng::{derive_seed, rng_from_seed, LabRng};
use crate::vocab::Vocabulary;

const QUESTION_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

/// Answer slot per prompt class, taken from the first record of each class.
pub fn class_slots(records: &[QaRecord]) -> Result<Vec<AnswerSlot>> {
    let n_classes = records
        .iter()
        .map(|r| r.prompt_class + 1)
        .max()
        .ok_or_else(|| arg("empty dataset"))?;
    let mut slots = vec![None; n_classes];
    for r in records {
        let slot = match r.task_kind {
            TaskKind::Mcqa => AnswerSlot::Choices(r.choices.as_ref().map_or(0, Vec::len)),
            TaskKind::Yesno => AnswerSlot::YesNo,
            TaskKind::Open => AnswerSlot::Open,
        };
        slots[r.prompt_class].get_or_insert(slot);
    }
    Ok(slots.into_iter().map(|s| s.unwrap_or(AnswerSlot::Open)).collect())
}

/// The untrained policy a run starts from.
pub fn initial_policy(vocab: &Vocabulary, records: &[QaRecord], template: PromptTemplate) -> Result<PolicyParams> {
    let frames = if template.expects_frames() {
        let n = records
            .iter()
            .filter_map(|r| r.n_frames)
            .max()
            .ok_or_else(|| arg(format!("template {template} needs records with frames")))?;
        Some(n)
    } else {
        None
    };
    instruction_prior(vocab, &class_slots(records)?, frames, &PriorStrengths::default())
}

fn embedding_provider(config: &RunConfig, records: &[QaRecord]) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match &config.embedding_url {
        Some(url) => Box::new(RemoteEmbeddings::new(
            url.clone(),
            config.embedding_dim,
            Duration::from_millis(config.embedding_timeout_ms),
            config.embedding_retries,
        )),
        None => Box::new(SyntheticEmbeddings::from_records(records, config.embedding_dim, config.seed)?),
    })
}

pub struct Trainer<'a> {
    config: RunConfig,
    hp: GrpoHyperParams,
    records: &'a [QaRecord],
    vocab: Vocabulary,
    params: PolicyParams,
    reference: PolicySnapshot,
    truth: Option<HashMap<String, FrameSet>>,
    rng: LabRng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &RunConfig, records: &'a [QaRecord]) -> Result<Self> {
        config.validate()?;
        if records.is_empty() {
            return Err(arg("cannot train on an empty dataset"));
        }
        let vocab = Vocabulary::standard();
        for r in records {
            render_prompt(config.template_kind, r, config.frame_request())?;
        }
        let truth = match config.keyframe_mode {
            None => None,
            Some(mode) => {
                let entries = match &config.keyframe_cache {
                    Some(path) => read_cache(path)?,
                    None => {
                        let provider = match config.scorer {
                            ScorerKind::Cosine => Some(embedding_provider(config, records)?),
                            ScorerKind::Probability => None,
                        };
                        compute_keyframe_truth(records, mode, config.scorer, provider.as_deref())?
                    }
                };
                let map = truth_map(entries);
                if let Some(r) = records.iter().find(|r| !map.contains_key(&r.question_id)) {
                    return Err(arg(format!("no proxy keyframes for {}", r.question_id)));
                }
                Some(map)
            }
        };
        let params = initial_policy(&vocab, records, config.template_kind)?;
        let reference = snapshot(&params, SnapshotRole::Reference);
        Ok(Self {
            hp: config.hyper_params(),
            config: config.clone(),
            records,
            vocab,
            params,
            reference,
            truth,
            rng: rng_from_seed(derive_seed(config.seed, &[QUESTION_STREAM])),
            step: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(self.vocab.clone(), self.params.clone())
    }

    fn score(&self, record: &QaRecord, text: &str) -> Result<RewardBreakdown> {
        let parsed = parse_tags(text);
        let keyframe = self.truth.as_ref().map(|truth| {
            let n = record.n_frames.unwrap_or(0);
            let predicted = parsed
                .frames
                .as_deref()
                .map(|s| parse_frame_indices(s, n))
                .unwrap_or_default();
            keyframe_f1(&predicted, &truth[&record.question_id])
        });
        score_parsed(&parsed, &record.task_spec()?, keyframe, self.config.template_kind.expects_frames())
    }

    /// Runs one training step and returns its metrics.
    pub fn step(&mut self) -> Result<StepMetrics> {
        self.step += 1;
        let step = self.step;
        let fail = |e: Error| match e {
            Error::NumericDomain(message) => Error::TrainingStep { step, message },
            other => other,
        };
        let record = &self.records[self.rng.random_range(0..self.records.len())];
        let old = snapshot(&self.params, SnapshotRole::Old);
        let policies = PolicySet {
            current: &self.params,
            old: old.params(),
            reference: self.reference.params(),
        };

        let g = self.config.group_size;
        let mut completions = Vec::with_capacity(g);
        let mut breakdowns = Vec::with_capacity(g);
        for i in 0..g {
            let seed = derive_seed(self.config.seed, &[SAMPLE_STREAM, step as u64, i as u64]);
            let c = sample_completion(
                &policies,
                record.prompt_class,
                self.config.temperature,
                self.config.max_completion_len,
                seed,
            )
            .map_err(fail)?;
            breakdowns.push(self.score(record, &self.vocab.detokenize(&c.tokens))?);
            completions.push(c);
        }
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let group = GroupSample::new(record.question_id.clone(), completions, rewards)?;
        let advantages = compute_advantages(&group.rewards, self.hp.variant).map_err(fail)?;
        let report = surrogate_objective(&group, &advantages, &self.hp)?;
        if !(report.total_objective.is_finite() && report.kl_penalty.is_finite()) {
            return Err(Error::TrainingStep {
                step,
                message: "objective is not finite".into(),
            });
        }
        let grad = objective_gradient(&group, &advantages, &self.hp, &self.params).map_err(fail)?;
        apply_update(&mut self.params, &grad, self.hp.learning_rate).map_err(fail)?;

        let n = g as f64;
        let mean = |f: &dyn Fn(&RewardBreakdown) -> f64| breakdowns.iter().map(f).sum::<f64>() / n;
        Ok(StepMetrics {
            step,
            question_id: record.question_id.clone(),
            mean_accuracy_reward: mean(&|b| b.accuracy),
            mean_format_reward: mean(&|b| b.format),
            mean_keyframe_reward: self
                .truth
                .as_ref()
                .map(|_| mean(&|b| b.keyframe.unwrap_or(0.0))),
            mean_completion_length: group.completions.iter().map(|c| c.len() as f64).sum::<f64>() / n,
            objective: report.total_objective,
            kl_penalty: report.kl_penalty,
            clipped_fraction: report.clipped_fraction,
        })
    }

    /// Runs the configured number of steps, handing each record to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        while self.step < self.config.training_steps {
            let m = self.step()?;
            sink(&m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Trains and writes `metrics.jsonl`, `metrics.csv`, `checkpoint.bin` and the
/// resolved `config.toml` into `out_dir`.
pub fn train(config: &RunConfig, records: &[QaRecord], out_dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, records)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), config.to_toml()?)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics_path, Some(&out_dir.join(METRICS_CSV_FILE)))?;
    let mut metrics = Vec::with_capacity(config.training_steps);
    trainer.run(|m| {
        writer.append(m)?;
        metrics.push(m.clone());
        Ok(())
    })?;
    let checkpoint = trainer.checkpoint()?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        checkpoint_path,
        metrics_path,
    })
}
