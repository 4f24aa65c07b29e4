use super::MeasureError;
use crate::stats::mean;

/// 1-based ranks; tied values share the average of the ranks they span.
/// The flag reports whether any tie occurred.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, bool) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = false;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold equal values: ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        ties |= j - i > 1;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    pub ties: bool,
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(pairs: &[(f64, f64)]) -> Result<f64, MeasureError> {
    spearman_with_ties(pairs).map(|r| r.rho)
}

pub fn spearman_with_ties(pairs: &[(f64, f64)]) -> Result<SpearmanResult, MeasureError> {
    if pairs.len() < 2 {
        return Err(MeasureError::TooFew {
            need: 2,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(MeasureError::NonFinite("rank correlation input"));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (rx, tx) = average_ranks(&xs);
    let (ry, ty) = average_ranks(&ys);
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MeasureError::Constant("first variable"));
    }
    if syy == 0.0 {
        return Err(MeasureError::Constant("second variable"));
    }
    Ok(SpearmanResult {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        ties: tx || ty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n²) rank: 1 + #smaller + (#equal - 1) / 2.
    fn rank_oracle(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let less = v.iter().filter(|&&y| y < x).count() as f64;
                let eq = v.iter().filter(|&&y| y == x).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    }

    fn spearman_oracle(pairs: &[(f64, f64)]) -> f64 {
        let rx = rank_oracle(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let ry = rank_oracle(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let n = rx.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let sx = (rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (ry.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sx * sy)
    }

    #[test]
    fn monotone_cases() {
        let up: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i as f64).exp())).collect();
        assert_eq!(spearman(&up).unwrap(), 1.0);
        let down: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, -(i as f64).powi(3))).collect();
        assert_eq!(spearman(&down).unwrap(), -1.0);
    }

    #[test]
    fn ties_by_hand() {
        let pairs = [(1.0, 2.0), (2.0, 2.0), (3.0, 1.0)];
        let r = spearman_with_ties(&pairs).unwrap();
        assert!((r.rho - -0.866).abs() < 1e-3);
        assert!((r.rho - spearman_oracle(&pairs)).abs() < 1e-12);
        assert!(r.ties);
        assert_eq!(average_ranks(&[2.0, 2.0, 1.0]).0, vec![2.5, 2.5, 1.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(spearman(&[(1.0, 1.0)]), Err(MeasureError::TooFew { .. })));
        assert!(matches!(
            spearman(&[(1.0, 1.0), (1.0, 2.0)]),
            Err(MeasureError::Constant(_))
        ));
        assert!(spearman(&[(f64::NAN, 1.0), (1.0, 2.0)]).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_transform(
            v in proptest::collection::vec((0i32..6, 0i32..6), 3..15)
        ) {
            let pairs: Vec<(f64, f64)> = v.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
            let Ok(base) = spearman(&pairs) else { return Ok(()); };
            let moved: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (a.exp() - 3.0, 2.0 * b.powi(3) + 1.0)).collect();
            prop_assert!((spearman(&moved).unwrap() - base).abs() < 1e-12);
            prop_assert!((base - spearman_oracle(&pairs)).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
