//! Error suite, calibration diagnostics, uncertainty-distribution summary,
//! and geometric extrapolation checks.

pub mod hull;
pub mod pca;

pub use hull::{hull_membership, HullMembership};
pub use pca::{pca_2d, Pca2d};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::bayes::PredictiveSummary;
use crate::error::{Error, Result};

/// Relative-error suite over one prediction vector, all in percent except R².
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub mu_error_pct: f64,
    pub max_error_pct: f64,
    pub std_error_pct: f64,
    pub rrmse_pct: f64,
    pub p_over_10_pct: f64,
    pub r2: f64,
}

impl MetricsReport {
    pub fn as_pairs(&self) -> [(&'static str, f64); 6] {
        [
            ("mu_error_pct", self.mu_error_pct),
            ("max_error_pct", self.max_error_pct),
            ("std_error_pct", self.std_error_pct),
            ("rrmse_pct", self.rrmse_pct),
            ("p_over_10_pct", self.p_over_10_pct),
            ("r2", self.r2),
        ]
    }
}

/// Six-metric suite on relative errors ε_i = |y_i − ŷ_i| / |y_i| · 100:
/// mean, max, population std, rRMSE = sqrt(mean ε²), the percentage of rows
/// with ε strictly above 10, and standard R².
pub fn error_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::Degenerate("metrics over an empty vector".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true vs {} predicted values",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = y_true.len() as f64;
    let mut eps = Vec::with_capacity(y_true.len());
    for (i, (&y, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if y == 0.0 {
            return Err(Error::Degenerate(format!(
                "true value of row {i} is zero; relative error undefined"
            )));
        }
        if !y.is_finite() || !p.is_finite() {
            return Err(Error::NonFinite(format!("row {i}")));
        }
        eps.push((y - p).abs() / y.abs() * 100.0);
    }
    let mu = eps.iter().sum::<f64>() / n;
    let max = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let var = eps.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n;
    let rrmse = (eps.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let over = eps.iter().filter(|&&e| e > 10.0).count() as f64 / n * 100.0;
    let y_mean = y_true.iter().sum::<f64>() / n;
    let ss_tot = y_true.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>();
    let ss_res = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(MetricsReport {
        mu_error_pct: mu,
        max_error_pct: max,
        std_error_pct: var.sqrt(),
        rrmse_pct: rrmse,
        p_over_10_pct: over,
        r2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UncertaintySource {
    Epistemic,
    Aleatoric,
    Total,
}

impl std::fmt::Display for UncertaintySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UncertaintySource::Epistemic => write!(f, "epistemic"),
            UncertaintySource::Aleatoric => write!(f, "aleatoric"),
            UncertaintySource::Total => write!(f, "total"),
        }
    }
}

/// Reliability curve against the standard normal, plus its deviation area.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationResult {
    /// (expected cumulative probability, observed fraction) pairs.
    pub curve: Vec<(f64, f64)>,
    pub miscalibration_area: f64,
    pub source: UncertaintySource,
    /// Rows dropped because the chosen uncertainty was zero.
    pub excluded_rows: usize,
}

/// Number of quantile levels on the calibration grid.
const CAL_GRID: usize = 101;
const CAL_P_LO: f64 = 0.005;
const CAL_P_HI: f64 = 0.995;

/// Compares normalized residuals (y − mean) / std against the standard
/// normal: for each grid level p, the observed fraction of residuals below
/// the normal quantile z_p. The miscalibration area is the trapezoid
/// integral of |observed − expected| over the grid.
pub fn calibration(
    y_true: &[f64],
    summaries: &[PredictiveSummary],
    source: UncertaintySource,
) -> Result<CalibrationResult> {
    if y_true.len() != summaries.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} summaries",
            y_true.len(),
            summaries.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Degenerate("calibration over an empty set".into()));
    }
    let mut residuals = Vec::with_capacity(y_true.len());
    let mut excluded = 0usize;
    for (&y, s) in y_true.iter().zip(summaries) {
        let std = match source {
            UncertaintySource::Epistemic => s.epistemic_std,
            UncertaintySource::Aleatoric => s.aleatoric_std,
            UncertaintySource::Total => s.total_std,
        };
        if std == 0.0 {
            excluded += 1;
            continue;
        }
        if std < 0.0 || !std.is_finite() {
            return Err(Error::NonFinite("uncertainty std".into()));
        }
        residuals.push((y - s.mean) / std);
    }
    if residuals.is_empty() {
        return Err(Error::Degenerate(
            "all rows had zero uncertainty; calibration undefined".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal is well formed");
    let n = residuals.len() as f64;
    let mut curve = Vec::with_capacity(CAL_GRID);
    for k in 0..CAL_GRID {
        let p = CAL_P_LO + (CAL_P_HI - CAL_P_LO) * k as f64 / (CAL_GRID - 1) as f64;
        let z = normal.inverse_cdf(p);
        let frac = residuals.iter().filter(|&&r| r <= z).count() as f64 / n;
        curve.push((p, frac));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let d0 = (w[0].1 - w[0].0).abs();
        let d1 = (w[1].1 - w[1].0).abs();
        area += (w[1].0 - w[0].0) * 0.5 * (d0 + d1);
    }
    Ok(CalibrationResult {
        curve,
        miscalibration_area: area,
        source,
        excluded_rows: excluded,
    })
}

/// Histogram and moments of the relative predictive spread
/// rStd_i = total_std_i / |mean_i| · 100.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RstdDistribution {
    /// (bin lower edge, bin upper edge, count).
    pub bins: Vec<(f64, f64, usize)>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population skewness; zero for a zero-width distribution.
    pub skewness: f64,
    /// Rows dropped because the predictive mean was zero.
    pub excluded_rows: usize,
}

pub fn rstd_distribution(
    summaries: &[PredictiveSummary],
    n_bins: usize,
) -> Result<RstdDistribution> {
    if summaries.is_empty() {
        return Err(Error::Degenerate("rStd over an empty set".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let mut vals = Vec::with_capacity(summaries.len());
    let mut excluded = 0usize;
    for s in summaries {
        if s.mean == 0.0 {
            excluded += 1;
            continue;
        }
        vals.push(s.total_std / s.mean.abs() * 100.0);
    }
    if vals.is_empty() {
        return Err(Error::Degenerate("all predictive means were zero".into()));
    }
    let n = vals.len() as f64;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = vals.iter().sum::<f64>() / n;
    let m2 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let skewness = if m2 > 1e-24 { m3 / m2.powf(1.5) } else { 0.0 };
    let mut bins = Vec::with_capacity(n_bins);
    if max == min {
        bins.push((min, max, vals.len()));
    } else {
        let width = (max - min) / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &v in &vals {
            let mut b = ((v - min) / width) as usize;
            if b >= n_bins {
                b = n_bins - 1; // max lands in the last bin
            }
            counts[b] += 1;
        }
        for (b, &c) in counts.iter().enumerate() {
            bins.push((min + b as f64 * width, min + (b + 1) as f64 * width, c));
        }
    }
    Ok(RstdDistribution {
        bins,
        min,
        max,
        mean,
        skewness,
        excluded_rows: excluded,
    })
}

/// Writes a calibration curve as CSV: expected_p, observed_fraction.
pub fn write_calibration_csv(path: &std::path::Path, result: &CalibrationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["expected_p", "observed_fraction"])?;
    for (p, f) in &result.curve {
        w.write_record(&[format!("{p}"), format!("{f}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an rStd histogram as CSV: bin_lo, bin_hi, count.
pub fn write_rstd_csv(path: &std::path::Path, dist: &RstdDistribution) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (lo, hi, c) in &dist.bins {
        w.write_record(&[format!("{lo}"), format!("{hi}"), format!("{c}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn summary(mean: f64, epi: f64, ale: f64) -> PredictiveSummary {
        PredictiveSummary {
            mean,
            epistemic_std: epi,
            aleatoric_std: ale,
            total_std: (epi * epi + ale * ale).sqrt(),
            n_samples: 2,
        }
    }

    #[test]
    fn perfect_predictions_zero_all_errors() {
        let y = [1.5, 2.5, 4.0];
        let m = error_metrics(&y, &y).unwrap();
        assert_eq!(m.mu_error_pct, 0.0);
        assert_eq!(m.max_error_pct, 0.0);
        assert_eq!(m.std_error_pct, 0.0);
        assert_eq!(m.rrmse_pct, 0.0);
        assert_eq!(m.p_over_10_pct, 0.0);
        assert_relative_eq!(m.r2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn boundary_errors_are_not_counted_as_exceedances() {
        // Both rows sit at the 10% boundary (the float representations land
        // a hair below); the strict inequality excludes them.
        let m = error_metrics(&[1.0, 2.0], &[0.9, 1.8]).unwrap();
        assert_relative_eq!(m.mu_error_pct, 10.0, epsilon = 1e-9);
        assert_relative_eq!(m.rrmse_pct, 10.0, epsilon = 1e-9);
        assert_eq!(m.p_over_10_pct, 0.0);
        // Just past the boundary counts.
        let m2 = error_metrics(&[1.0, 2.0], &[0.85, 1.8]).unwrap();
        assert_relative_eq!(m2.p_over_10_pct, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_match_a_brute_force_recomputation() {
        let mut rng = stream(19);
        for _ in 0..50 {
            let n = rng.random_range(5..200);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
            let p: Vec<f64> = y
                .iter()
                .map(|v| v + rng.random_range(-0.5..0.5))
                .collect();
            let m = error_metrics(&y, &p).unwrap();
            // Direct recomputation with independent arithmetic order.
            let eps: Vec<f64> = y
                .iter()
                .zip(&p)
                .map(|(a, b)| 100.0 * (a - b).abs() / a.abs())
                .collect();
            let nf = n as f64;
            let mu = eps.iter().sum::<f64>() / nf;
            assert_relative_eq!(m.mu_error_pct, mu, epsilon = 1e-10);
            assert_relative_eq!(
                m.rrmse_pct * m.rrmse_pct,
                eps.iter().map(|e| e * e).sum::<f64>() / nf,
                max_relative = 1e-10
            );
            assert!(m.mu_error_pct <= m.max_error_pct + 1e-15);
            assert!((0.0..=100.0).contains(&m.p_over_10_pct));
            assert!(m.r2 <= 1.0);
        }
    }

    #[test]
    fn zero_true_value_is_rejected_with_row_number() {
        let err = error_metrics(&[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn calibrated_residuals_give_near_zero_area() {
        // Residuals drawn exactly from N(0, std^2): the curve hugs the
        // diagonal and the area shrinks with N.
        let mut rng = stream(23);
        let n = 10_000;
        let mut y = Vec::with_capacity(n);
        let mut sums = Vec::with_capacity(n);
        for _ in 0..n {
            let std = rng.random_range(0.5..2.0);
            let mean = rng.random_range(1.0..5.0);
            let eps: f64 = StandardNormal.sample(&mut rng);
            y.push(mean + std * eps);
            sums.push(summary(mean, std, 0.0));
        }
        let cal = calibration(&y, &sums, UncertaintySource::Epistemic).unwrap();
        assert!(
            cal.miscalibration_area < 0.03,
            "area {}",
            cal.miscalibration_area
        );
        assert_eq!(cal.excluded_rows, 0);
        // Curve is monotone in both coordinates.
        for w in cal.curve.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn overconfident_stds_push_the_curve_off_the_diagonal() {
        // True residual std is 1 but the model claims 0.5: too many
        // residuals fall outside each claimed quantile, so the observed
        // fraction sits above the diagonal on the left half (and the area is
        // clearly positive).
        let mut rng = stream(29);
        let n = 5000;
        let mut y = Vec::with_capacity(n);
        let mut sums = Vec::with_capacity(n);
        for _ in 0..n {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y.push(3.0 + eps);
            sums.push(summary(3.0, 0.5, 0.0));
        }
        let cal = calibration(&y, &sums, UncertaintySource::Epistemic).unwrap();
        assert!(cal.miscalibration_area > 0.1);
        let left: Vec<&(f64, f64)> = cal.curve.iter().filter(|(p, _)| *p < 0.4).collect();
        let above = left.iter().filter(|(p, f)| f > p).count();
        assert!(above * 2 > left.len(), "left half should sit above ideal");
    }

    #[test]
    fn zero_std_rows_are_excluded_and_counted() {
        let y = [1.0, 2.0, 3.0];
        let sums = [
            summary(1.0, 0.0, 0.0),
            summary(2.0, 1.0, 0.0),
            summary(3.0, 1.0, 0.0),
        ];
        let cal = calibration(&y, &sums, UncertaintySource::Total).unwrap();
        assert_eq!(cal.excluded_rows, 1);
        // All-zero stds: undefined.
        let all_zero = [summary(1.0, 0.0, 0.0)];
        assert!(calibration(&y[..1], &all_zero, UncertaintySource::Total).is_err());
    }

    #[test]
    fn area_is_bounded_by_half() {
        // Degenerate residuals far below every quantile: observed fraction
        // is 1 everywhere, the worst possible curve.
        let y = [100.0, 100.0];
        let sums = [summary(0.0, 1e-9, 0.0), summary(0.0, 1e-9, 0.0)];
        let cal = calibration(&y, &sums, UncertaintySource::Epistemic).unwrap();
        assert!(cal.miscalibration_area <= 0.5);
        assert!(cal.miscalibration_area > 0.4);
    }

    #[test]
    fn rstd_zero_width_and_skewness() {
        let sums = vec![summary(2.0, 0.3, 0.4); 10];
        let d = rstd_distribution(&sums, 5).unwrap();
        assert_eq!(d.min, d.max);
        assert_eq!(d.skewness, 0.0);
        assert_eq!(d.bins.len(), 1);
        assert_eq!(d.bins[0].2, 10);
        // Right-skewed construction: a long upper tail.
        let mut sums = vec![summary(1.0, 0.1, 0.0); 90];
        sums.extend(vec![summary(1.0, 2.0, 0.0); 10]);
        let d = rstd_distribution(&sums, 8).unwrap();
        assert!(d.skewness > 1.0, "skewness {}", d.skewness);
        assert_eq!(d.bins.iter().map(|b| b.2).sum::<usize>(), 100);
        // Zero-mean rows are excluded and counted.
        let mut sums2 = vec![summary(0.0, 1.0, 0.0)];
        sums2.push(summary(1.0, 1.0, 0.0));
        sums2.push(summary(2.0, 1.0, 0.0));
        let d2 = rstd_distribution(&sums2, 4).unwrap();
        assert_eq!(d2.excluded_rows, 1);
    }
}
