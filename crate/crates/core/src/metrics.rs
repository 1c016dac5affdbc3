//! Per-step training metrics.
//!
//! The primary log is line-delimited JSON, one [`StepMetrics`] object per
//! step, written in step order and flushed after every line. A CSV
//! projection with the same columns is written alongside for plotting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub question_id: String,
    pub mean_accuracy_reward: f64,
    pub mean_format_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_keyframe_reward: Option<f64>,
    pub mean_completion_length: f64,
    pub objective: f64,
    pub kl_penalty: f64,
    pub clipped_fraction: f64,
}

pub const CSV_HEADER: &str = "step,question_id,mean_accuracy_reward,mean_format_reward,mean_keyframe_reward,mean_completion_length,objective,kl_penalty,clipped_fraction";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.question_id,
            self.mean_accuracy_reward,
            self.mean_format_reward,
            self.mean_keyframe_reward.map(|k| k.to_string()).unwrap_or_default(),
            self.mean_completion_length,
            self.objective,
            self.kl_penalty,
            self.clipped_fraction
        )
    }
}

pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: Option<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(jsonl_path: &Path, csv_path: Option<&Path>) -> Result<Self> {
        let jsonl = BufWriter::new(File::create(jsonl_path)?);
        let csv = match csv_path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "{CSV_HEADER}")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { jsonl, csv })
    }

    pub fn append(&mut self, m: &StepMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, m)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        if let Some(csv) = &mut self.csv {
            writeln!(csv, "{}", m.csv_row())?;
            csv.flush()?;
        }
        Ok(())
    }
}

/// Reads a metrics log back.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
