use serde::{Deserialize, Serialize};

use super::{check_finite, MeasureError};
use crate::stats::mean;

/// Norm used for the translation distance `‖E(v_X) − E(v_Y)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            Norm::L1 => diffs.map(f64::abs).sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdVarianceResult {
    pub sbar2: f64,
    pub groups_used: usize,
    pub groups_skipped: usize,
}

/// Average within-group variance of translation distances.
///
/// Each group holds the `(E(v_X), E(v_Y))` embedding pairs of the tuples
/// sharing one determinant value. Groups with fewer than two tuples have no
/// sample variance and are skipped (and counted).
pub fn fd_group_variance<V: AsRef<[f64]>>(
    groups: &[Vec<(V, V)>],
    norm: Norm,
) -> Result<FdVarianceResult, MeasureError> {
    let mut variances = Vec::new();
    let mut skipped = 0;
    for group in groups {
        if group.len() < 2 {
            skipped += 1;
            continue;
        }
        let mut d = Vec::with_capacity(group.len());
        for (x, y) in group {
            let (x, y) = (x.as_ref(), y.as_ref());
            if x.len() != y.len() {
                return Err(MeasureError::DimMismatch(x.len(), y.len()));
            }
            check_finite(x, "FD embedding")?;
            check_finite(y, "FD embedding")?;
            d.push(norm.distance(x, y));
        }
        let m = mean(&d);
        let ss: Vec<f64> = d.iter().map(|v| (v - m) * (v - m)).collect();
        variances.push(crate::stats::pairwise_sum(&ss) / (d.len() - 1) as f64);
    }
    if variances.is_empty() {
        return Err(MeasureError::NoUsableGroup);
    }
    Ok(FdVarianceResult {
        sbar2: mean(&variances),
        groups_used: variances.len(),
        groups_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_translation_is_zero() {
        let g = vec![
            vec![(vec![1.0, 0.0], vec![0.0, 1.0]), (vec![2.0, 0.0], vec![1.0, 1.0])],
            vec![(vec![0.0, 0.0], vec![3.0, 4.0]), (vec![0.0, 0.0], vec![3.0, 4.0])],
        ];
        let r = fd_group_variance(&g, Norm::L2).unwrap();
        assert_eq!(r.sbar2, 0.0);
        assert_eq!((r.groups_used, r.groups_skipped), (2, 0));
    }

    #[test]
    fn one_group_by_hand() {
        // distances 1 and 3: mean 2, variance (1 + 1) / 1 = 2
        let g = vec![vec![(vec![0.0], vec![1.0]), (vec![0.0], vec![3.0])]];
        assert_eq!(fd_group_variance(&g, Norm::L2).unwrap().sbar2, 2.0);
        assert_eq!(fd_group_variance(&g, Norm::L1).unwrap().sbar2, 2.0);
    }

    #[test]
    fn singletons_skipped() {
        let g = vec![
            vec![(vec![0.0, 0.0], vec![1.0, 1.0])],
            vec![(vec![0.0, 0.0], vec![1.0, 1.0]), (vec![0.0, 0.0], vec![2.0, 2.0])],
        ];
        let r = fd_group_variance(&g, Norm::L1).unwrap();
        // L1 distances 2 and 4 -> variance 2
        assert_eq!(r.sbar2, 2.0);
        assert_eq!((r.groups_used, r.groups_skipped), (1, 1));
        let only_singletons = vec![vec![(vec![0.0], vec![1.0])]];
        assert_eq!(
            fd_group_variance(&only_singletons, Norm::L2),
            Err(MeasureError::NoUsableGroup)
        );
    }
}
