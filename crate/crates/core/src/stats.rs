//! Shared summary statistics.

use serde::{Deserialize, Serialize};

use crate::measures::MeasureError;

/// Pairwise (cascade) summation; error grows with `log n` instead of `n`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Box-plot summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Linear interpolation between order statistics (Hyndman–Fan type 7).
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles, 1.5×IQR whiskers clipped to the observed range, mean and
/// sample standard deviation (0 for a single value).
pub fn summarize(values: &[f64]) -> Result<FiveNumber, MeasureError> {
    if values.is_empty() {
        return Err(MeasureError::Empty("summary input"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MeasureError::NonFinite("summary input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let m = mean(values);
    let std = if values.len() > 1 {
        let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
        (pairwise_sum(&dev) / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(FiveNumber {
        min,
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max,
        whisker_lo: (q1 - 1.5 * iqr).max(min),
        whisker_hi: (q3 + 1.5 * iqr).min(max),
        mean: m,
        std,
        n: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn type7_quartiles_by_hand() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(s.whisker_lo, 1.0);
        assert_eq!(s.whisker_hi, 4.0);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_and_single() {
        let s = summarize(&[0.7; 5]).unwrap();
        assert_eq!([s.min, s.q1, s.median, s.q3, s.max], [0.7; 5]);
        assert_eq!(s.q3 - s.q1, 0.0);
        let s = summarize(&[3.0]).unwrap();
        assert_eq!([s.min, s.q1, s.median, s.q3, s.max], [3.0; 5]);
        assert_eq!(s.std, 0.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn whiskers_clip_outliers() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        // q1 = 2, q3 = 4, iqr = 2
        assert_eq!(s.whisker_hi, 7.0);
        assert_eq!(s.whisker_lo, 1.0);
    }

    proptest! {
        #[test]
        fn ordering_invariant(v in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let s = summarize(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert!(s.min <= s.whisker_lo && s.whisker_hi <= s.max);
            let naive: f64 = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((s.mean - naive).abs() < 1e-9);
        }
    }
}
