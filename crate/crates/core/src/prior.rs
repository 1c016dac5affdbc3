//! Initial policy that already knows the tag grammar.
//!
//! Training starts from an instruction-following prior rather than a uniform
//! table: each grammar transition (`<bos>` to `<think>`, think words to
//! `</think>`, `<answer>` to an answer token, ...) gets a logit bonus, and
//! every other transition keeps logit 0. At the answer slot the bonus is the
//! same for every admissible answer, so the prior is a uniform guesser over
//! the choices of its prompt class.

use crate::error::{arg, Result};
use crate::policy::PolicyParams;
use crate::vocab::{
    Vocabulary, ANSWER_CLOSE, ANSWER_LETTERS, ANSWER_OPEN, ANSWER_WORDS, FRAMES_CLOSE, FRAMES_OPEN,
    MAX_FRAME_TOKEN, THINK_CLOSE, THINK_OPEN, THINK_WORDS, YES_NO,
};

/// What the answer slot of a prompt class may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSlot {
    /// Letters `A..` for this many choices.
    Choices(usize),
    YesNo,
    Open,
}

/// Logit bonuses of the prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorStrengths {
    /// `<bos>` → `<think>`; the alternative is starting straight with words.
    pub open_think: f64,
    /// `<bos>` → a think word.
    pub skip_think: f64,
    /// Every deterministic grammar edge (closing tags, `</answer>` → `<eos>`, ...).
    pub grammar: f64,
    /// think word → think word.
    pub think_continue: f64,
    /// think word → `</think>`.
    pub think_close: f64,
    /// `<answer>` → each admissible answer token.
    pub answer: f64,
    /// answer word → answer word, for open answers.
    pub answer_continue: f64,
}

impl Default for PriorStrengths {
    fn default() -> Self {
        Self {
            open_think: 7.0,
            skip_think: 4.0,
            grammar: 8.0,
            think_continue: 7.0,
            think_close: 7.5,
            answer: 9.0,
            answer_continue: 6.0,
        }
    }
}

/// Builds the prior for one prompt class per entry of `slots`.
///
/// With `frames = Some(n)` the grammar routes `</think>` through a
/// `<frames>` block listing indices `1..=min(n, 16)`.
pub fn instruction_prior(
    vocab: &Vocabulary,
    slots: &[AnswerSlot],
    frames: Option<usize>,
    strengths: &PriorStrengths,
) -> Result<PolicyParams> {
    let mut params = PolicyParams::zeros(slots.len(), vocab)?;
    let id = |t: &str| vocab.require(t);
    let think_open = id(THINK_OPEN)?;
    let think_close = id(THINK_CLOSE)?;
    let answer_open = id(ANSWER_OPEN)?;
    let answer_close = id(ANSWER_CLOSE)?;
    let frames_open = id(FRAMES_OPEN)?;
    let frames_close = id(FRAMES_CLOSE)?;
    let comma = id(",")?;
    let think_words: Vec<usize> = THINK_WORDS.iter().map(|w| id(w)).collect::<Result<_>>()?;
    let answer_words: Vec<usize> = ANSWER_WORDS.iter().map(|w| id(w)).collect::<Result<_>>()?;
    let frame_tokens: Vec<usize> = match frames {
        Some(0) => return Err(arg("frame count must be positive")),
        Some(n) => (1..=n.min(MAX_FRAME_TOKEN))
            .map(|i| id(&i.to_string()))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let bos = vocab.bos();
    let eos = vocab.eos();
    let s = strengths;

    for (class, slot) in slots.iter().enumerate() {
        let mut bump = |prev: usize, next: usize, bonus: f64| {
            let v = params.get(class, prev, next);
            params.set(class, prev, next, v + bonus);
        };
        bump(bos, think_open, s.open_think);
        for &w in &think_words {
            bump(bos, w, s.skip_think);
            bump(think_open, w, s.grammar);
            for &w2 in &think_words {
                bump(w, w2, s.think_continue);
            }
            bump(w, think_close, s.think_close);
        }
        if frame_tokens.is_empty() {
            bump(think_close, answer_open, s.grammar);
        } else {
            bump(think_close, frames_open, s.grammar);
            for &f in &frame_tokens {
                bump(frames_open, f, s.grammar);
                bump(f, comma, s.think_continue);
                bump(f, frames_close, s.think_close);
                bump(comma, f, s.grammar);
            }
            bump(frames_close, answer_open, s.grammar);
        }
        let answers: Vec<usize> = match *slot {
            AnswerSlot::Choices(n) => {
                if !(2..=ANSWER_LETTERS.len()).contains(&n) {
                    return Err(arg(format!("prior supports 2..=5 choices, got {n}")));
                }
                ANSWER_LETTERS[..n].iter().map(|l| id(l)).collect::<Result<_>>()?
            }
            AnswerSlot::YesNo => YES_NO.iter().map(|l| id(l)).collect::<Result<_>>()?,
            AnswerSlot::Open => answer_words.clone(),
        };
        for &a in &answers {
            bump(answer_open, a, s.answer);
            bump(a, answer_close, s.grammar);
        }
        if *slot == AnswerSlot::Open {
            for &a in &answer_words {
                for &b in &answer_words {
                    bump(a, b, s.answer_continue);
                }
            }
        }
        bump(answer_close, eos, s.grammar);
    }
    Ok(params)
}
