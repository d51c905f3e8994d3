//! Evaluation metrics: next-event error measures and an optimal-transport
//! style distance between event sequences.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {expected} predictions vs {got} targets")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("sequence of length {len} exceeds brute-force limit {max}")]
    TooLarge { len: usize, max: usize },
    #[error("deletion cost must be positive and finite, got {0}")]
    BadCost(f64),
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { expected: pred.len(), got: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mse: f64 =
        pred.iter().zip(truth).map(|(&p, &t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn error_rate(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { expected: pred.len(), got: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Distance between two event sequences, each given as `(time, type)` pairs.
///
/// Events may be matched only within the same type, paying the absolute time
/// difference; every unmatched event on either side pays `del_cost`. The
/// minimum over all partial matchings decomposes per type, and within a type
/// the optimal matching of sorted time lists never crosses, so a quadratic
/// alignment per type is exact.
pub fn otd(a: &[(f64, usize)], b: &[(f64, usize)], del_cost: f64) -> Result<f64, MetricsError> {
    if !(del_cost > 0.0 && del_cost.is_finite()) {
        return Err(MetricsError::BadCost(del_cost));
    }
    let mut by_type: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for &(t, k) in a {
        by_type.entry(k).or_default().0.push(t);
    }
    for &(t, k) in b {
        by_type.entry(k).or_default().1.push(t);
    }
    let mut total = 0.0;
    for (ta, tb) in by_type.values_mut() {
        ta.sort_by(f64::total_cmp);
        tb.sort_by(f64::total_cmp);
        total += align_sorted(ta, tb, del_cost);
    }
    Ok(total)
}

/// Needleman-Wunsch style alignment of two sorted time lists. Two rolling
/// rows keep it O(n*m) time, O(m) space.
fn align_sorted(ta: &[f64], tb: &[f64], del_cost: f64) -> f64 {
    let m = tb.len();
    let mut prev: Vec<f64> = (0..=m).map(|j| j as f64 * del_cost).collect();
    let mut cur = vec![0.0; m + 1];
    for (i, &t1) in ta.iter().enumerate() {
        cur[0] = (i + 1) as f64 * del_cost;
        for (j, &t2) in tb.iter().enumerate() {
            let matched = prev[j] + (t1 - t2).abs();
            let drop_a = prev[j + 1] + del_cost;
            let drop_b = cur[j] + del_cost;
            cur[j + 1] = matched.min(drop_a).min(drop_b);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

const BRUTE_FORCE_MAX: usize = 6;

/// Exhaustive reference for [`otd`], capped at six events per side.
///
/// Enumerates every partial matching directly from the definition, so it
/// makes no non-crossing assumption.
pub fn otd_bruteforce(
    a: &[(f64, usize)],
    b: &[(f64, usize)],
    del_cost: f64,
) -> Result<f64, MetricsError> {
    if !(del_cost > 0.0 && del_cost.is_finite()) {
        return Err(MetricsError::BadCost(del_cost));
    }
    let len = a.len().max(b.len());
    if len > BRUTE_FORCE_MAX {
        return Err(MetricsError::TooLarge { len, max: BRUTE_FORCE_MAX });
    }
    let mut used = vec![false; b.len()];
    Ok(brute(a, b, del_cost, 0, &mut used))
}

fn brute(a: &[(f64, usize)], b: &[(f64, usize)], del_cost: f64, i: usize, used: &mut [bool]) -> f64 {
    if i == a.len() {
        let leftovers = used.iter().filter(|&&u| !u).count();
        return leftovers as f64 * del_cost;
    }
    let (t1, k1) = a[i];
    let mut best = del_cost + brute(a, b, del_cost, i + 1, used);
    for j in 0..b.len() {
        if used[j] || b[j].1 != k1 {
            continue;
        }
        used[j] = true;
        let cost = (t1 - b[j].0).abs() + brute(a, b, del_cost, i + 1, used);
        used[j] = false;
        best = best.min(cost);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rmse_known_value() {
        let r = rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_relative_eq!(r, (2.5_f64).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn error_rate_counts_mismatches() {
        let e = error_rate(&[0, 1, 1, 2], &[0, 1, 0, 0]).unwrap();
        assert_relative_eq!(e, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(error_rate(&[0], &[]).is_err());
    }

    #[test]
    fn otd_single_pair_prefers_cheap_match() {
        let d = otd(&[(1.0, 0)], &[(1.4, 0)], 1.0).unwrap();
        assert_relative_eq!(d, 0.4, max_relative = 1e-15);
    }

    #[test]
    fn otd_never_matches_across_types() {
        let d = otd(&[(1.0, 0)], &[(1.0, 1)], 0.5).unwrap();
        assert_relative_eq!(d, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn otd_against_empty_is_pure_deletion() {
        let b = [(0.5, 0), (1.0, 1), (2.0, 0)];
        let d = otd(&[], &b, 0.7).unwrap();
        assert_relative_eq!(d, 2.1, max_relative = 1e-12);
    }

    #[test]
    fn otd_mixed_types_hand_worked() {
        // type 0: [1, 3] vs [1.2, 2.9] matches for 0.3; type 1: one deletion.
        let a = [(1.0, 0), (2.0, 1), (3.0, 0)];
        let b = [(1.2, 0), (2.9, 0)];
        let d = otd(&a, &b, 1.0).unwrap();
        assert_relative_eq!(d, 1.3, max_relative = 1e-12);
    }

    #[test]
    fn otd_matches_brute_force_on_crossing_layout() {
        // Same-type pairs interleave across types; the per-type split must
        // still find both matches.
        let a = [(1.0, 0), (2.0, 1)];
        let b = [(2.1, 1), (3.0, 0)];
        let dp = otd(&a, &b, 10.0).unwrap();
        let bf = otd_bruteforce(&a, &b, 10.0).unwrap();
        assert_relative_eq!(dp, bf, max_relative = 1e-12);
        assert_relative_eq!(dp, 2.0 + 0.1, max_relative = 1e-12);
    }

    #[test]
    fn brute_force_refuses_long_sequences() {
        let a: Vec<(f64, usize)> = (0..7).map(|i| (i as f64, 0)).collect();
        assert!(matches!(otd_bruteforce(&a, &[], 1.0), Err(MetricsError::TooLarge { .. })));
    }

    #[test]
    fn bad_cost_is_rejected() {
        assert!(otd(&[], &[], 0.0).is_err());
        assert!(otd(&[], &[], f64::NAN).is_err());
        assert!(otd(&[], &[], -1.0).is_err());
    }

    fn arb_seq(max_len: usize) -> impl Strategy<Value = Vec<(f64, usize)>> {
        prop::collection::vec((0.0..10.0f64, 0..3usize), 0..=max_len)
    }

    proptest! {
        #[test]
        fn otd_agrees_with_brute_force(a in arb_seq(5), b in arb_seq(5), c in 0.1..5.0f64) {
            let dp = otd(&a, &b, c).unwrap();
            let bf = otd_bruteforce(&a, &b, c).unwrap();
            prop_assert!((dp - bf).abs() <= 1e-9 * (1.0 + bf.abs()));
        }

        #[test]
        fn otd_is_symmetric(a in arb_seq(6), b in arb_seq(6), c in 0.1..5.0f64) {
            let ab = otd(&a, &b, c).unwrap();
            let ba = otd(&b, &a, c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
        }

        #[test]
        fn otd_self_distance_is_zero(a in arb_seq(6), c in 0.1..5.0f64) {
            let d = otd(&a, &a, c).unwrap();
            prop_assert!(d.abs() <= 1e-12);
        }

        #[test]
        fn otd_triangle_inequality(
            a in arb_seq(4),
            b in arb_seq(4),
            m in arb_seq(4),
            c in 0.1..5.0f64,
        ) {
            let ab = otd(&a, &b, c).unwrap();
            let am = otd(&a, &m, c).unwrap();
            let mb = otd(&m, &b, c).unwrap();
            prop_assert!(ab <= am + mb + 1e-9);
        }
    }
}
