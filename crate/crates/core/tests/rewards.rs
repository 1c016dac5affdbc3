//! Reward protocol golden suite and ROUGE-L properties.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use grpolab::reward::lcs_len;
use grpolab::rouge_l;
use grpolab::score::{score_batch, score_request, ScoreRequest};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    format: f64,
    accuracy: f64,
    keyframe: Option<f64>,
    total: f64,
}

#[derive(Deserialize)]
struct GoldenCase {
    name: String,
    expected: Expected,
    #[serde(flatten)]
    request: serde_json::Map<String, serde_json::Value>,
}

fn golden_cases() -> Vec<GoldenCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/rewards.jsonl");
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn golden_reward_breakdowns_match_exactly() {
    let cases = golden_cases();
    assert!(cases.len() >= 20);
    for case in cases {
        let req: ScoreRequest = serde_json::from_value(serde_json::Value::Object(case.request)).unwrap();
        let got = score_request(&req).unwrap();
        let e = &case.expected;
        assert_eq!(
            (got.format, got.accuracy, got.keyframe, got.total),
            (e.format, e.accuracy, e.keyframe, e.total),
            "case {}",
            case.name
        );
    }
}

#[test]
fn batch_scoring_preserves_order() {
    let cases = golden_cases();
    let mut input = String::new();
    for c in &cases {
        input.push_str(&serde_json::to_string(&c.request).unwrap());
        input.push('\n');
    }
    let results = score_batch(Cursor::new(input), Path::new("golden")).unwrap();
    assert_eq!(results.len(), cases.len());
    for (r, c) in results.iter().zip(&cases) {
        assert_eq!(r.total, c.expected.total, "case {}", c.name);
    }
}

#[test]
fn worked_rouge_example() {
    assert!((rouge_l("the cat sat", "the cat is sat") - 0.8571).abs() <= 1e-4);
}

/// Exhaustive LCS by recursion with memo; independent of the library's
/// rolling-row implementation.
fn lcs_memo(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

fn words(ids: &[u8]) -> String {
    ids.iter().map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
}

fn tokens() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lcs_agrees_with_memoized_recursion(a in tokens(), b in tokens()) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_memo(&a, &b));
    }

    #[test]
    fn rouge_matches_f_measure_of_lcs(a in tokens(), b in tokens()) {
        let l = lcs_memo(&a, &b) as f64;
        let expected = match (a.is_empty(), b.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ if l == 0.0 => 0.0,
            _ => {
                let p = l / a.len() as f64;
                let r = l / b.len() as f64;
                2.0 * p * r / (p + r)
            }
        };
        prop_assert!((rouge_l(&words(&a), &words(&b)) - expected).abs() <= 1e-12);
    }

    #[test]
    fn rouge_is_symmetric_and_bounded(a in tokens(), b in tokens()) {
        let x = rouge_l(&words(&a), &words(&b));
        let y = rouge_l(&words(&b), &words(&a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - y).abs() <= 1e-12);
    }

    #[test]
    fn deleting_a_token_never_raises_lcs(a in tokens(), b in tokens(), at in 0usize..12) {
        prop_assume!(!a.is_empty());
        let mut shorter = a.clone();
        shorter.remove(at % a.len());
        prop_assert!(lcs_len(&shorter, &b) <= lcs_len(&a, &b));
    }

    #[test]
    fn identical_strings_score_one(a in tokens()) {
        prop_assert_eq!(rouge_l(&words(&a), &words(&a)), 1.0);
    }
}
