//! The fixed token space of the toy policy.

use std::collections::HashMap;

use crate::error::{arg, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const FRAMES_OPEN: &str = "<frames>";
pub const FRAMES_CLOSE: &str = "</frames>";

/// All six structural tags in opening/closing pairs.
pub const TAGS: [&str; 6] = [
    THINK_OPEN,
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
    FRAMES_OPEN,
    FRAMES_CLOSE,
];

pub const ANSWER_LETTERS: [&str; 5] = ["A", "B", "C", "D", "E"];
pub const YES_NO: [&str; 2] = ["Yes", "No"];
/// Filler words the policy uses inside its reasoning span.
pub const THINK_WORDS: [&str; 6] = ["look", "see", "hand", "so", "then", "check"];
/// Content words for open-ended answers.
pub const ANSWER_WORDS: [&str; 8] = ["cup", "knife", "table", "door", "open", "pick", "put", "bowl"];
/// Largest frame index that has its own token.
pub const MAX_FRAME_TOKEN: usize = 16;

/// An ordered, duplicate-free list of tokens containing exactly one begin and
/// one end-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    bos: usize,
    eos: usize,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(arg(format!("token {i} is empty")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(arg(format!("duplicate token {tok:?}")));
            }
        }
        let bos = *index
            .get(BOS)
            .ok_or_else(|| arg("vocabulary has no begin token"))?;
        let eos = *index
            .get(EOS)
            .ok_or_else(|| arg("vocabulary has no end-of-sequence token"))?;
        Ok(Self {
            tokens,
            index,
            bos,
            eos,
        })
    }

    /// The 46-token vocabulary used by training and evaluation.
    ///
    /// Layout: `<bos> <eos>`, the six tags, `A`..`E`, `Yes No`, frame
    /// numbers `1`..`16`, `,`, the think words, the answer words.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = vec![BOS.into(), EOS.into()];
        tokens.extend(TAGS.iter().map(|t| t.to_string()));
        tokens.extend(ANSWER_LETTERS.iter().map(|t| t.to_string()));
        tokens.extend(YES_NO.iter().map(|t| t.to_string()));
        tokens.extend((1..=MAX_FRAME_TOKEN).map(|n| n.to_string()));
        tokens.push(",".into());
        tokens.extend(THINK_WORDS.iter().map(|t| t.to_string()));
        tokens.extend(ANSWER_WORDS.iter().map(|t| t.to_string()));
        Self::new(tokens).expect("standard vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Like [`Vocabulary::id`] but fails with an argument error.
    pub fn require(&self, token: &str) -> Result<usize> {
        self.id(token)
            .ok_or_else(|| arg(format!("token {token:?} not in vocabulary")))
    }

    /// Renders token ids as completion text.
    ///
    /// Tags are emitted verbatim with no surrounding whitespace; adjacent
    /// non-tag tokens are separated by one space, except around `,`, which
    /// attaches directly (`3,7`). `<bos>` and `<eos>` render as nothing.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut prev_plain: Option<&str> = None;
        for &id in ids {
            let Some(tok) = self.token(id) else { continue };
            if id == self.bos || id == self.eos {
                continue;
            }
            if TAGS.contains(&tok) {
                out.push_str(tok);
                prev_plain = None;
                continue;
            }
            if let Some(prev) = prev_plain {
                if prev != "," && tok != "," {
                    out.push(' ');
                }
            }
            out.push_str(tok);
            prev_plain = Some(tok);
        }
        out
    }
}
