//! Lagged analysis increment covariance (LAIC) matrices: empirical
//! estimators over replicates or over time, and the leading-order
//! theoretical truncations for a linear system with a known gain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assimilation::AssimilationCycleRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaicEstimator {
    /// Ensemble mean across independent replicates at a fixed cycle pair.
    EnsembleMean,
    /// Time mean over a single realization, under weak stationarity.
    TimeMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncrementVariable {
    Increment,
    EtaAnalysis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaicMatrix {
    pub lag: usize,
    pub matrix: DMatrix<f64>,
    pub estimator: LaicEstimator,
    /// Per-element standard error of the mean (outer-product spread), for
    /// Monte Carlo banding.
    pub standard_error: DMatrix<f64>,
    pub n_samples: usize,
}

fn select<'r>(record: &'r AssimilationCycleRecord, var: IncrementVariable) -> &'r DVector<f64> {
    match var {
        IncrementVariable::Increment => &record.increment,
        IncrementVariable::EtaAnalysis => &record.eta_analysis,
    }
}

/// Sample covariance of mean-removed vector pairs at separation `lag`.
fn covariance_of_pairs(
    pairs: &[(DVector<f64>, DVector<f64>)],
    lag: usize,
    estimator: LaicEstimator,
) -> Result<LaicMatrix> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "LAIC needs at least 2 samples, got {n}"
        )));
    }
    let d = pairs[0].0.len();
    let mut mean_a = DVector::zeros(d);
    let mut mean_b = DVector::zeros(d);
    for (a, b) in pairs {
        mean_a += a;
        mean_b += b;
    }
    mean_a /= n as f64;
    mean_b /= n as f64;

    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    for (a, b) in pairs {
        let outer = (a - &mean_a) * (b - &mean_b).transpose();
        sum += &outer;
        sum_sq += outer.component_mul(&outer);
    }
    let mean = &sum / n as f64;
    let nf = n as f64;
    let standard_error = DMatrix::from_fn(d, d, |i, j| {
        let var = (sum_sq[(i, j)] / nf - mean[(i, j)] * mean[(i, j)]).max(0.0);
        (var / nf).sqrt()
    });
    Ok(LaicMatrix {
        lag,
        matrix: mean,
        estimator,
        standard_error,
        n_samples: n,
    })
}

/// Ensemble estimator: expectation over replicates of
/// `(v_{n0+lag} - mean)(v_{n0} - mean)ᵀ`, where `n0` is the first recorded
/// cycle of each replicate's record slice.
pub fn laic_matrix_ensemble(
    replicates: &[Vec<AssimilationCycleRecord>],
    lag: usize,
    variable: IncrementVariable,
) -> Result<LaicMatrix> {
    let pairs: Vec<_> = replicates
        .iter()
        .filter(|r| r.len() > lag)
        .map(|r| (select(&r[lag], variable).clone(), select(&r[0], variable).clone()))
        .collect();
    covariance_of_pairs(&pairs, lag, LaicEstimator::EnsembleMean)
}

/// Time estimator over one realization, assuming weak stationarity.
pub fn laic_matrix_time(
    records: &[AssimilationCycleRecord],
    lag: usize,
    variable: IncrementVariable,
) -> Result<LaicMatrix> {
    if records.len() <= lag + 1 {
        return Err(Error::InsufficientSamples(format!(
            "{} records cannot support lag {lag}",
            records.len()
        )));
    }
    let pairs: Vec<_> = (0..records.len() - lag)
        .map(|i| {
            (
                select(&records[i + lag], variable).clone(),
                select(&records[i], variable).clone(),
            )
        })
        .collect();
    covariance_of_pairs(&pairs, lag, LaicEstimator::TimeMean)
}

/// Leading-order lag-1 prediction: `K_{n+1} H C_eta_lag1 Hᵀ K_nᵀ`, the first
/// term of the lag-1 expansion in terms of the model-error covariance seen
/// through the observing system.
pub fn theoretical_lag1_laic(
    gain_next: &DMatrix<f64>,
    h: &DMatrix<f64>,
    c_eta_lag1: &DMatrix<f64>,
    gain_curr: &DMatrix<f64>,
) -> DMatrix<f64> {
    gain_next * h * c_eta_lag1 * h.transpose() * gain_curr.transpose()
}

/// Truncated lag-k prediction with one or two terms:
/// term 1: `K H <eta_{n+k-1} eta_{n-1}ᵀ> Hᵀ Kᵀ`
/// term 2: `K H M (I - K H) <eta_{n+k-2} eta_{n-1}ᵀ> Hᵀ Kᵀ`
/// `eta_lag_covariances[j]` must hold the lag-j model-error covariance.
pub fn theoretical_lagk_laic(
    gain: &DMatrix<f64>,
    h: &DMatrix<f64>,
    m_eff: &DMatrix<f64>,
    eta_lag_covariances: &[DMatrix<f64>],
    k: usize,
    n_terms: usize,
) -> Result<DMatrix<f64>> {
    if k < 1 {
        return Err(Error::Config("lag must be >= 1".into()));
    }
    if !(1..=2).contains(&n_terms) {
        return Err(Error::Config("truncation supports 1 or 2 terms".into()));
    }
    if eta_lag_covariances.len() < k + 1 {
        return Err(Error::Dimension(format!(
            "need model-error covariances up to lag {k}, got {}",
            eta_lag_covariances.len()
        )));
    }
    let mut total = theoretical_lag1_laic(gain, h, &eta_lag_covariances[k], gain);
    if n_terms == 2 {
        let d = gain.nrows();
        let contraction = m_eff * (DMatrix::identity(d, d) - gain * h);
        total += gain * h * &contraction * &eta_lag_covariances[k - 1] * h.transpose()
            * gain.transpose();
    }
    Ok(total)
}
