//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754
//! `f64`:
//!
//! ```text
//! magic        8 bytes  "GRPOLAB\0"
//! version      u32      1
//! vocab_size   u32      V
//! V times:     u32 byte length, then the token's UTF-8 bytes
//! n_classes    u32      P
//! logits       P·V·V f64, row-major over (class, previous token, next token)
//! ```
//!
//! Encoding is a pure function of the vocabulary and the logits, so
//! save → load → save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"GRPOLAB\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub params: PolicyParams,
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new(vocab: Vocabulary, params: PolicyParams) -> Result<Self> {
        if vocab.len() != params.vocab_size() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but parameters expect {}",
                vocab.len(),
                params.vocab_size()
            )));
        }
        Ok(Self { vocab, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.params.logits().len() * 8);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
        put_u32(&mut out, self.vocab.len())?;
        for tok in self.vocab.tokens() {
            put_u32(&mut out, tok.len())?;
            out.extend_from_slice(tok.as_bytes());
        }
        put_u32(&mut out, self.params.n_classes())?;
        for x in self.params.logits() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let v = r.u32()?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let len = r.u32()?;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Checkpoint(format!("token is not UTF-8: {e}")))?;
            tokens.push(s.to_string());
        }
        let vocab = Vocabulary::new(tokens).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n_classes = r.u32()?;
        let count = n_classes
            .checked_mul(v * v)
            .ok_or_else(|| Error::Checkpoint("shape overflows".into()))?;
        if bytes.len() - r.pos != count * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} bytes of logits, found {}",
                count * 8,
                bytes.len() - r.pos
            )));
        }
        let logits = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let params = PolicyParams::from_logits(n_classes, &vocab, logits)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { vocab, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
