//! Word-error rate, attack success, and per-experiment aggregation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty reference")]
    EmptyReference,
    #[error("empty record list")]
    EmptyRecords,
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Per-utterance attack outcome.
#[derive(Debug, Clone)]
pub struct AttackRecord {
    pub utterance_id: String,
    pub decoded: String,
    pub wer_vs_label: f64,
    pub wer_vs_target: Option<f64>,
    pub success: Option<bool>,
    pub snr_db: f64,
}

/// One aggregated table row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model_id: String,
    pub attack_id: String,
    pub mean_wer: f64,
    pub mean_snr: f64,
    pub accuracy: Option<f64>,
    pub n: usize,
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, av) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bv) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(av != bv);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Word-error rate in percent; uncapped (insertions can push it past 100).
pub fn wer(hyp: &str, reference: &str) -> Result<f64> {
    let r = words(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let h = words(hyp);
    Ok(100.0 * edit_distance(&h, &r) as f64 / r.len() as f64)
}

/// Exact match after whitespace/case normalization.
pub fn attack_success(decoded: &str, target: &str) -> bool {
    words(decoded) == words(target)
}

pub fn summarize(model_id: &str, attack_id: &str, records: &[AttackRecord]) -> Result<SummaryRow> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords);
    }
    let n = records.len() as f64;
    let mean_wer = records.iter().map(|r| r.wer_vs_label).sum::<f64>() / n;
    let mean_snr = records.iter().map(|r| r.snr_db).sum::<f64>() / n;
    let successes: Vec<bool> = records.iter().filter_map(|r| r.success).collect();
    let accuracy = if successes.is_empty() {
        None
    } else {
        Some(100.0 * successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64)
    };
    Ok(SummaryRow {
        model_id: model_id.to_string(),
        attack_id: attack_id.to_string(),
        mean_wer,
        mean_snr,
        accuracy,
        n: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive recursive edit distance, the oracle for the DP.
    pub fn edit_distance_recursive(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ah, at)), Some((bh, bt))) => {
                let sub = edit_distance_recursive(at, bt) + usize::from(ah != bh);
                let del = edit_distance_recursive(at, b) + 1;
                let ins = edit_distance_recursive(a, bt) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance::<u8>(&[], &[]), 0);
        assert_eq!(edit_distance(&["a", "b", "c"], &["a", "b", "c"]), 0);
        assert_eq!(edit_distance(&["a", "b", "c"], &["a", "x", "c"]), 1);
        assert_eq!(edit_distance::<u8>(&[], &[1, 2, 3, 4]), 4);
    }

    #[test]
    fn dp_matches_exhaustive_recursion() {
        // all pairs over a 3-symbol alphabet, lengths <= 4 here (length 6
        // pairs run in the acceptance suite)
        let seqs = all_seqs(4);
        for a in &seqs {
            for b in &seqs {
                assert_eq!(edit_distance(a, b), edit_distance_recursive(a, b));
            }
        }
    }

    pub fn all_seqs(max_len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 0..3u8 {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer("a b", "a b").unwrap(), 0.0);
        assert_eq!(wer("b c", "a").unwrap(), 200.0);
        assert_eq!(wer("", "a b").unwrap(), 100.0);
        assert!(wer("x", "").is_err());
        assert_eq!(wer("A  B", "a b").unwrap(), 0.0);
    }

    #[test]
    fn success_examples() {
        assert!(attack_success("open the door", "open the door"));
        assert!(!attack_success("open the door", "shut the door"));
        assert!(attack_success("Open The Door", "open the door"));
    }

    #[test]
    fn summarize_examples() {
        let rec = |wer: f64, success: Option<bool>| AttackRecord {
            utterance_id: "u".into(),
            decoded: String::new(),
            wer_vs_label: wer,
            wer_vs_target: success.map(|_| 0.0),
            success,
            snr_db: 20.0,
        };
        let one = summarize("m", "a", &[rec(42.0, None)]).unwrap();
        assert_eq!(one.mean_wer, 42.0);
        assert_eq!(one.accuracy, None);
        assert_eq!(one.n, 1);

        let mixed = summarize("m", "a", &[rec(0.0, Some(true)), rec(100.0, Some(false))]).unwrap();
        assert_eq!(mixed.mean_wer, 50.0);
        assert_eq!(mixed.accuracy, Some(50.0));

        assert!(summarize("m", "a", &[]).is_err());
    }

    #[test]
    fn wer_target_zero_iff_success() {
        for (hyp, target) in [("a b", "a b"), ("a b", "a c"), ("", "x"), ("x y z", "x y z")] {
            let w = wer(hyp, target).unwrap();
            assert_eq!(w == 0.0, attack_success(hyp, target));
        }
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
            c in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let dab = edit_distance(&a, &b);
            let dba = edit_distance(&b, &a);
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(edit_distance(&a, &a), 0);
            let dac = edit_distance(&a, &c);
            let dbc = edit_distance(&b, &c);
            prop_assert!(dac <= dab + dbc);
        }
    }
}
