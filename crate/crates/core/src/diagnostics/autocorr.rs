//! Empirical lagged autocovariance / autocorrelation of scalar time series,
//! with the biased 1/N normalization, plus whiteness tests built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Empirical,
    Theoretical,
    Oracle,
}

/// Covariance or correlation as a function of lag `k = 0..=kmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCovarianceSeries {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub kind: SeriesKind,
}

fn lagged_sums(series: &[f64], kmax: usize) -> Result<(f64, f64, Vec<f64>)> {
    let n = series.len();
    if n == 0 || kmax >= n {
        return Err(Error::InsufficientSamples(format!(
            "series of length {n} cannot support lag {kmax}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
    let covs: Vec<f64> = (0..=kmax)
        .map(|k| {
            (0..n - k)
                .map(|i| (series[i] - mean) * (series[i + k] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok((mean, var, covs))
}

/// Normalized estimator: `R_k = (1/N) sum_{i=1}^{N-k} (y_i - mu)(y_{i+k} - mu) / sigma^2`
/// with the overall mean and the biased overall variance. `R_0` is exactly 1
/// and `|R_k| <= 1` for every lag.
pub fn lagged_autocorrelation(series: &[f64], kmax: usize) -> Result<LagCovarianceSeries> {
    let (_, var, covs) = lagged_sums(series, kmax)?;
    if var <= 0.0 {
        return Err(Error::DegenerateSeries(
            "zero sample variance; autocorrelation undefined".into(),
        ));
    }
    Ok(LagCovarianceSeries {
        lags: (0..=kmax).collect(),
        values: covs.iter().map(|c| c / var).collect(),
        kind: SeriesKind::Empirical,
    })
}

/// Same estimator without the variance normalization.
pub fn lagged_autocovariance(series: &[f64], kmax: usize) -> Result<LagCovarianceSeries> {
    let (_, _, covs) = lagged_sums(series, kmax)?;
    Ok(LagCovarianceSeries {
        lags: (0..=kmax).collect(),
        values: covs,
        kind: SeriesKind::Empirical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    /// Lags 1..=kmax whose |R_k| exceeds `z / sqrt(N)`.
    pub flagged_lags: Vec<usize>,
    pub autocorrelation: LagCovarianceSeries,
    /// Ljung-Box Q statistic over lags 1..=kmax. Thresholding against a
    /// chi-square quantile is left to the caller.
    pub ljung_box_q: f64,
    pub n: usize,
}

pub fn whiteness_test(series: &[f64], kmax: usize, z: f64) -> Result<WhitenessReport> {
    let n = series.len();
    if n < 30 {
        return Err(Error::InsufficientSamples(format!(
            "whiteness test needs at least 30 samples, got {n}"
        )));
    }
    let acf = lagged_autocorrelation(series, kmax)?;
    let band = z / (n as f64).sqrt();
    let flagged_lags = acf
        .lags
        .iter()
        .zip(&acf.values)
        .skip(1)
        .filter(|(_, r)| r.abs() > band)
        .map(|(&k, _)| k)
        .collect();
    let nf = n as f64;
    let ljung_box_q = nf
        * (nf + 2.0)
        * acf
            .values
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, r)| r * r / (nf - k as f64))
            .sum::<f64>();
    Ok(WhitenessReport {
        flagged_lags,
        autocorrelation: acf,
        ljung_box_q,
        n,
    })
}
