//! Proxy ground-truth keyframes for a dataset, and their cache file.
//!
//! The cache is line-delimited JSON, one entry per question:
//!
//! ```json
//! {"version":1,"question_id":"q00000","mode":"top_k:1","scorer":"probability",
//!  "n_frames":16,"raw":[...],"normalized":[...],"selected":[7]}
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::QaRecord;
use crate::embedding::{EmbedKind, EmbedRequest, EmbeddingProvider};
use crate::error::{arg, Error, Result};
use crate::keyframe::{cosine_importance, probability_importance, FrameSet, ImportanceProfile, KeyframeMode, ScorerKind};

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeCacheEntry {
    pub version: u32,
    pub question_id: String,
    pub mode: KeyframeMode,
    pub scorer: ScorerKind,
    pub n_frames: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub selected: FrameSet,
}

/// Default frame id when a record carries none: `<question_id>/f<index>`.
pub fn frame_id(question_id: &str, index: usize) -> String {
    format!("{question_id}/f{index}")
}

/// Importance profile of one record under the chosen scorer.
pub fn score_record(
    record: &QaRecord,
    scorer: ScorerKind,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<ImportanceProfile> {
    let n = record
        .n_frames
        .ok_or_else(|| arg(format!("{}: no frames to score", record.question_id)))?;
    match scorer {
        ScorerKind::Probability => {
            let scores = record
                .frame_scores
                .as_ref()
                .ok_or_else(|| arg(format!("{}: probability scorer needs frame_scores", record.question_id)))?;
            probability_importance(scores)
        }
        ScorerKind::Cosine => {
            let provider = provider.ok_or_else(|| arg("cosine scorer needs an embedding provider"))?;
            let mut requests = vec![EmbedRequest {
                kind: EmbedKind::Text,
                id: record.question_id.clone(),
                payload: format!("{} {}", record.question_block(), record.gold_answer),
            }];
            for i in 1..=n {
                let id = match &record.frame_embedding_ids {
                    Some(ids) => ids[i - 1].clone(),
                    None => frame_id(&record.question_id, i),
                };
                requests.push(EmbedRequest {
                    kind: EmbedKind::Frame,
                    payload: id.clone(),
                    id,
                });
            }
            let vectors = provider.embed(&requests)?;
            if vectors.len() != requests.len() {
                return Err(Error::Remote("provider returned the wrong number of vectors".into()));
            }
            cosine_importance(&vectors[0], &vectors[1..])
        }
    }
}

pub fn compute_keyframe_truth(
    records: &[QaRecord],
    mode: KeyframeMode,
    scorer: ScorerKind,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<KeyframeCacheEntry>> {
    records
        .iter()
        .map(|rec| {
            let profile = score_record(rec, scorer, provider)?;
            let selected = mode.select(&profile)?;
            Ok(KeyframeCacheEntry {
                version: CACHE_VERSION,
                question_id: rec.question_id.clone(),
                mode,
                scorer,
                n_frames: profile.n_frames(),
                raw: profile.raw().to_vec(),
                normalized: profile.normalized().to_vec(),
                selected,
            })
        })
        .collect()
}

pub fn write_cache(path: impl AsRef<Path>, entries: &[KeyframeCacheEntry]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<KeyframeCacheEntry>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |field: &str, message: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            field: field.into(),
            message,
        };
        let e: KeyframeCacheEntry = serde_json::from_str(&line).map_err(|e| load_err("entry", e.to_string()))?;
        if e.version != CACHE_VERSION {
            return Err(load_err("version", format!("unsupported version {}", e.version)));
        }
        if e.selected.iter().any(|f| f == 0 || f > e.n_frames) {
            return Err(load_err("selected", "frame index out of range".into()));
        }
        out.push(e);
    }
    Ok(out)
}

/// Indexes cache entries by question id.
pub fn truth_map(entries: Vec<KeyframeCacheEntry>) -> HashMap<String, FrameSet> {
    entries
        .into_iter()
        .map(|e| (e.question_id, e.selected))
        .collect()
}
