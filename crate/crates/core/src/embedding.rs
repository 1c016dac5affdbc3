//! Embedding providers for the cosine importance scorer.
//!
//! Two implementations sit behind [`EmbeddingProvider`]: a deterministic
//! synthetic provider for desk-scale runs, and a client for a remote service
//! speaking the JSON protocol below.
//!
//! Wire protocol (HTTP `POST`, `Content-Type: application/json`): the body is
//! an array of requests
//!
//! ```json
//! [{"kind": "text", "id": "q0001", "payload": "what did I pick up? cup"},
//!  {"kind": "frame", "id": "q0001/f3", "payload": "q0001/f3"}]
//! ```
//!
//! and the response is an array of the same length, in the same order:
//!
//! ```json
//! [{"vector": [0.12, -0.5, ...]}, {"vector": [...]}]
//! ```

use std::collections::HashMap;
use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::QaRecord;
use crate::error::{arg, Error, Result};
use crate::keyframe::EmbeddingRecord;
use crate::rng::{hash_str, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    pub id: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
}

/// Source of text and frame embeddings. Implementations must tolerate
/// concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    /// Dimension of every returned vector.
    fn dim(&self) -> usize;

    /// Embeds a batch; the output is aligned with `requests`.
    fn embed(&self, requests: &[EmbedRequest]) -> Result<Vec<EmbeddingRecord>>;
}

/// Seeded unit vectors, with each frame placed at a controlled angle to its
/// question's text vector.
///
/// A frame with salience `s` in `[0, 1]` gets `s·t + (1 − s)·n` normalized,
/// where `t` is the question's text vector and `n` a unit vector orthogonal
/// to it, so its cosine with `t` is `s / sqrt(s² + (1 − s)²)`, increasing in
/// `s`. Unknown frames have salience 0.
#[derive(Debug, Clone)]
pub struct SyntheticEmbeddings {
    dim: usize,
    seed: u64,
    frames: HashMap<String, (String, f64)>,
}

impl SyntheticEmbeddings {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(arg("synthetic embeddings need dimension >= 2"));
        }
        Ok(Self {
            dim,
            seed,
            frames: HashMap::new(),
        })
    }

    /// Registers every frame of every record, using `frame_scores` as salience.
    pub fn from_records(records: &[QaRecord], dim: usize, seed: u64) -> Result<Self> {
        let mut provider = Self::new(dim, seed)?;
        for rec in records {
            let (Some(ids), Some(scores)) = (&rec.frame_embedding_ids, &rec.frame_scores) else {
                continue;
            };
            for (id, &s) in ids.iter().zip(scores) {
                provider.register_frame(id.clone(), rec.question_id.clone(), s);
            }
        }
        Ok(provider)
    }

    pub fn register_frame(&mut self, frame_id: String, question_id: String, salience: f64) {
        self.frames
            .insert(frame_id, (question_id, salience.clamp(0.0, 1.0)));
    }

    fn unit_vector(&self, key: &str) -> Vec<f64> {
        let mut rng = rng_from_seed(hash_str(self.seed, key));
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn text_vector(&self, id: &str) -> Vec<f64> {
        self.unit_vector(&format!("text:{id}"))
    }

    fn frame_vector(&self, id: &str) -> Vec<f64> {
        let Some((question, salience)) = self.frames.get(id) else {
            return self.unit_vector(&format!("frame:{id}"));
        };
        let t = self.text_vector(question);
        let mut salt = 0u32;
        let n = loop {
            let raw = self.unit_vector(&format!("frame:{id}#{salt}"));
            let along: f64 = raw.iter().zip(&t).map(|(a, b)| a * b).sum();
            let ortho: Vec<f64> = raw.iter().zip(&t).map(|(a, b)| a - along * b).collect();
            let norm = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break ortho.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
            salt += 1;
        };
        let s = *salience;
        let v: Vec<f64> = t.iter().zip(&n).map(|(a, b)| s * a + (1.0 - s) * b).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl EmbeddingProvider for SyntheticEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, requests: &[EmbedRequest]) -> Result<Vec<EmbeddingRecord>> {
        requests
            .iter()
            .map(|r| {
                let vector = match r.kind {
                    EmbedKind::Text => self.text_vector(&r.id),
                    EmbedKind::Frame => self.frame_vector(&r.id),
                };
                EmbeddingRecord::new(r.id.clone(), vector)
            })
            .collect()
    }
}

/// Client for a remote embedding service.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddings {
    url: String,
    dim: usize,
    retries: u32,
    agent: ureq::Agent,
}

impl RemoteEmbeddings {
    /// `retries` is the number of extra attempts after the first failure.
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration, retries: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            dim,
            retries,
            agent,
        }
    }

    fn attempt(&self, requests: &[EmbedRequest]) -> Result<Vec<EmbedResponse>> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(requests)
            .map_err(|e| Error::Remote(e.to_string()))?;
        resp.body_mut()
            .read_json::<Vec<EmbedResponse>>()
            .map_err(|e| Error::Remote(format!("bad response body: {e}")))
    }
}

impl EmbeddingProvider for RemoteEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, requests: &[EmbedRequest]) -> Result<Vec<EmbeddingRecord>> {
        let mut last = None;
        for _ in 0..=self.retries {
            match self.attempt(requests) {
                Ok(responses) => {
                    if responses.len() != requests.len() {
                        return Err(Error::Remote(format!(
                            "asked for {} vectors, got {}",
                            requests.len(),
                            responses.len()
                        )));
                    }
                    return requests
                        .iter()
                        .zip(responses)
                        .map(|(req, resp)| {
                            if resp.vector.len() != self.dim {
                                return Err(Error::Remote(format!(
                                    "vector for {} has dimension {}, expected {}",
                                    req.id,
                                    resp.vector.len(),
                                    self.dim
                                )));
                            }
                            EmbeddingRecord::new(req.id.clone(), resp.vector)
                        })
                        .collect();
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Remote("no attempts made".into())))
    }
}
