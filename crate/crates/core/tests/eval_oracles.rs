//! Scoring against exhaustive and closed-form references.

mod common;

use std::collections::BTreeMap;

use asrfuse_core::eval::{
    align_and_count, classification_metrics, mapsswe, mapsswe_from_differences, wer, AlignOp, ScoredTranscriptSet,
    TranscriptRecord, DEFAULT_ALPHA,
};
use asrfuse_core::numcore::SeededRng;
use proptest::prelude::*;

#[test]
fn alignment_matches_recursive_oracle_exhaustively() {
    let refs = common::ternary_sequences(1, 6);
    let hyps = common::ternary_sequences(0, 6);
    assert_eq!(refs.len(), 1092);
    for r in &refs {
        for h in &hyps {
            let al = align_and_count(r, h);
            let c = al.counts;
            assert_eq!(c.errors(), common::edit_distance(r, h), "{r:?} vs {h:?}");
            assert_eq!(c.ref_len, r.len());
            assert_eq!(c.substitutions + c.deletions + al.ops.iter().filter(|o| matches!(o, AlignOp::Match { .. })).count(), r.len());
            assert_eq!(h.len(), r.len() - c.deletions + c.insertions);
        }
    }
}

fn rec(id: String, r: &[&str], h: &[&str], group: &str) -> TranscriptRecord {
    TranscriptRecord {
        utt_id: id,
        reference: r.iter().map(|s| s.to_string()).collect(),
        hypothesis: h.iter().map(|s| s.to_string()).collect(),
        metadata: BTreeMap::from([("group".to_string(), group.to_string())]),
    }
}

#[test]
fn mapsswe_reference_fixture() {
    let ids = (0..4).map(|i| format!("u{i}")).collect();
    let r = mapsswe_from_differences(ids, vec![2.0, 0.0, 2.0, 0.0], DEFAULT_ALPHA).unwrap();
    assert!((r.z.unwrap() - 1.732).abs() < 1e-3);
    assert!((r.p_value.unwrap() - 0.0833).abs() < 1e-3);
    assert!(!r.significant);
}

#[test]
fn classification_identity_on_random_confusions() {
    let mut rng = SeededRng::new(11);
    for _ in 0..100 {
        let n = 2 + rng.below(40);
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let preds: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let m = classification_metrics(&preds, &labels, &true).unwrap();
        let p = (m.tp + m.fn_) as f64;
        let neg = (m.tn + m.fp) as f64;
        let rhs = (m.sensitivity.unwrap_or(0.0) * p + m.specificity.unwrap_or(0.0) * neg) / (p + neg);
        assert!((m.accuracy - rhs).abs() < 1e-12);
    }
}

fn arb_set() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>, bool)>> {
    prop::collection::vec(
        (
            prop::collection::vec(0u8..4, 1..6),
            prop::collection::vec(0u8..4, 0..6),
            any::<bool>(),
        ),
        2..12,
    )
}

fn to_set(rows: &[(Vec<u8>, Vec<u8>, bool)], order: &[usize]) -> ScoredTranscriptSet {
    let w = |s: &[u8]| s.iter().map(|x| format!("w{x}")).collect::<Vec<_>>();
    ScoredTranscriptSet::new(
        order
            .iter()
            .map(|&i| {
                let (r, h, g) = &rows[i];
                let (r, h) = (w(r), w(h));
                let rr: Vec<&str> = r.iter().map(String::as_str).collect();
                let hh: Vec<&str> = h.iter().map(String::as_str).collect();
                rec(format!("u{i:03}"), &rr, &hh, if *g { "seen" } else { "unseen" })
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn wer_ignores_order_and_pools_groups(rows in arb_set(), seed in any::<u64>()) {
        let fwd: Vec<usize> = (0..rows.len()).collect();
        let mut shuffled = fwd.clone();
        SeededRng::new(seed).shuffle(&mut shuffled);
        let a = wer(&to_set(&rows, &fwd), Some("group")).unwrap();
        let b = wer(&to_set(&rows, &shuffled), Some("group")).unwrap();
        prop_assert_eq!(&a, &b);
        let total: usize = a.groups.values().map(|g| g.counts.ref_len).sum();
        let pooled: f64 = a.groups.values().map(|g| g.rate * g.counts.ref_len as f64).sum::<f64>() / total as f64;
        prop_assert!((pooled - a.overall).abs() < 1e-9);
    }

    #[test]
    fn mapsswe_is_antisymmetric(rows in arb_set(), alt in prop::collection::vec(prop::collection::vec(0u8..4, 0..6), 12)) {
        let order: Vec<usize> = (0..rows.len()).collect();
        let a = to_set(&rows, &order);
        let other: Vec<_> = rows.iter().zip(&alt).map(|((r, _, g), h)| (r.clone(), h.clone(), *g)).collect();
        let b = to_set(&other, &order);
        let ab = mapsswe(&a, &b, DEFAULT_ALPHA).unwrap();
        let ba = mapsswe(&b, &a, DEFAULT_ALPHA).unwrap();
        prop_assert_eq!(ab.z.map(|z| -z), ba.z);
        prop_assert_eq!(ab.p_value, ba.p_value);
        if let Some(p) = ab.p_value {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
