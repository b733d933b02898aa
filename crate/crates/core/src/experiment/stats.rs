//! Box-plot statistics and per-group means.
//!
//! Quartiles use linear interpolation between closest ranks: for sorted
//! `x[0..n]` and probability `p`, `h = (n - 1) p` and
//! `Q(p) = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
//! Whiskers reach the most extreme samples inside the Tukey fences
//! `[q1 - 1.5 iqr, q3 + 1.5 iqr]`; everything strictly outside is an outlier.

use serde::{Deserialize, Serialize};

use super::ExperimentError;

pub const QUARTILE_METHOD: &str = "linear-interpolation-closest-ranks;tukey-1.5iqr";
pub const FENCE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub iqr: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    /// Ascending.
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn lower_fence(&self) -> f64 {
        self.q1 - FENCE_FACTOR * self.iqr
    }

    pub fn upper_fence(&self) -> f64 {
        self.q3 + FENCE_FACTOR * self.iqr
    }
}

/// Quantile of an ascending, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn box_stats(samples: &[f64]) -> Result<BoxStats, ExperimentError> {
    if samples.is_empty() {
        return Err(ExperimentError::Domain("box statistics of an empty sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(ExperimentError::Domain("sample contains a non-finite value".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - FENCE_FACTOR * iqr, q3 + FENCE_FACTOR * iqr);
    // The quartiles lie inside the fences, so both searches succeed.
    let lower_whisker = sorted.iter().copied().find(|v| *v >= lo_fence).unwrap_or(sorted[0]);
    let upper_whisker = sorted.iter().rev().copied().find(|v| *v <= hi_fence).unwrap_or(sorted[n - 1]);
    let outliers = sorted.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Ok(BoxStats {
        n,
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[n - 1],
        mean,
        iqr,
        lower_whisker,
        upper_whisker,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_small_sample() {
        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.mean), (2.0, 3.0, 4.0, 3.0));
        assert!(s.outliers.is_empty());
        assert_eq!((s.lower_whisker, s.upper_whisker), (1.0, 5.0));
    }

    #[test]
    fn single_high_outlier() {
        let s = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.q3, s.iqr, s.upper_fence()), (4.0, 2.0, 7.0));
        assert_eq!(s.outliers, [100.0]);
        assert_eq!(s.upper_whisker, 4.0);
    }

    #[test]
    fn constant_sample() {
        let s = box_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!([s.min, s.q1, s.median, s.q3, s.max, s.iqr], [5.0, 5.0, 5.0, 5.0, 5.0, 0.0]);
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn interpolates_between_ranks() {
        let s = box_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(box_stats(&[]).is_err());
        assert!(box_stats(&[1.0, f64::NAN]).is_err());
    }
}
