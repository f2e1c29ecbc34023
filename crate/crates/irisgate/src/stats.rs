//! Small order-statistics helpers shared by the gate sweep and reports.

use serde::{Deserialize, Serialize};

/// Percentile with inclusive linear interpolation over a sorted slice:
/// rank position `q * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Five-number boxplot summary with 1.5x IQR whiskers (whiskers sit on the
/// most extreme data points inside the fences).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub n: usize,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = percentile_sorted(&sorted, 0.25);
    let median = percentile_sorted(&sorted, 0.5);
    let q3 = percentile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_lo = sorted
        .iter()
        .copied()
        .find(|&v| v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_hi = sorted
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    Some(BoxStats {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        n: sorted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use rand::Rng;

    #[test]
    fn quartiles_of_one_to_five() {
        let stats = box_stats(&[5.0, 3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(stats.median, 3.0);
        assert_eq!(stats.q1, 2.0);
        assert_eq!(stats.q3, 4.0);
        assert_eq!(stats.whisker_lo, 1.0);
        assert_eq!(stats.whisker_hi, 5.0);
    }

    #[test]
    fn whiskers_match_brute_force_rule() {
        let mut rng = rng_from_seed(20);
        for _ in 0..100 {
            let n = rng.gen_range(4..200);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let stats = box_stats(&values).unwrap();
            let iqr = stats.q3 - stats.q1;
            // Oracle: scan every value against the fences.
            let lo = values
                .iter()
                .copied()
                .filter(|&v| v >= stats.q1 - 1.5 * iqr)
                .fold(f64::INFINITY, f64::min);
            let hi = values
                .iter()
                .copied()
                .filter(|&v| v <= stats.q3 + 1.5 * iqr)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(stats.whisker_lo, lo);
            assert_eq!(stats.whisker_hi, hi);
        }
    }

    #[test]
    fn percentile_endpoints() {
        let xs = [1.0, 2.0, 10.0];
        assert_eq!(percentile_sorted(&xs, 0.0), 1.0);
        assert_eq!(percentile_sorted(&xs, 1.0), 10.0);
        assert_eq!(percentile_sorted(&xs, 0.5), 2.0);
    }
}
