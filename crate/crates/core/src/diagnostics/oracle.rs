//! Exact first/second-moment oracle for the linear-Gaussian twin system.
//!
//! For linear dynamics, a linear observation operator and a fixed (or
//! steady optimal) gain, the joint moments of the forecast error and the
//! model-error tendency obey closed recursions. Iterating them to a fixed
//! point (or periodic orbit for a diurnal tendency) yields the exact lagged
//! increment covariances and per-phase mean increments that the Monte Carlo
//! estimators converge to, including the vanishing of every lagged
//! covariance under an optimal gain and a white model error.
//!
//! Window-level bookkeeping: with s model steps per window and per-step
//! tendency eta, the window effect is `G eta` with `G = sum_{j<s} M_step^j`,
//! and the window propagator is `M = M_step^s`. The stochastic noise
//! covariance `Qs` is specified at window level.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model_error::ModelErrorProcess;

#[derive(Debug, Clone)]
pub enum GainSpec {
    Given(DMatrix<f64>),
    /// Steady-state Kalman gain of the eta-blind filter (Riccati fixed point).
    OptimalSteady,
}

/// Linear system at step granularity; the oracle folds the window in.
#[derive(Debug, Clone)]
pub struct LinearSystemSpec {
    pub m_step: DMatrix<f64>,
    pub steps_per_window: usize,
    pub h: DMatrix<f64>,
    /// Window-level stochastic model noise covariance.
    pub qs: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gain: GainSpec,
}

/// First/second moments of the per-step tendency process: a periodic mean
/// sequence plus independent stationary AR(1) fluctuation components.
#[derive(Debug, Clone)]
pub struct EtaMoments {
    /// Mean tendency by phase; length is the process period (1 if constant).
    pub mean_by_phase: Vec<DVector<f64>>,
    /// `(rho, stationary covariance)` per AR(1) component.
    pub ar1_components: Vec<(f64, DMatrix<f64>)>,
}

impl EtaMoments {
    pub fn from_process(
        process: &ModelErrorProcess,
        dim: usize,
        spacing: f64,
    ) -> Result<EtaMoments> {
        process.validate(dim)?;
        match process {
            ModelErrorProcess::Zero => Ok(EtaMoments {
                mean_by_phase: vec![DVector::zeros(dim)],
                ar1_components: vec![],
            }),
            ModelErrorProcess::ConstantBias { bias } => Ok(EtaMoments {
                mean_by_phase: vec![DVector::from_vec(bias.clone())],
                ar1_components: vec![],
            }),
            ModelErrorProcess::Ar1 { rho, noise } => {
                let sigma = noise.matrix(dim, spacing)? / (1.0 - rho * rho);
                Ok(EtaMoments {
                    mean_by_phase: vec![DVector::zeros(dim)],
                    ar1_components: vec![(*rho, sigma)],
                })
            }
            ModelErrorProcess::Diurnal {
                amplitude,
                period_windows,
                phase,
            } => {
                let a = DVector::from_vec(amplitude.clone());
                let mean_by_phase = (0..*period_windows)
                    .map(|n| {
                        let angle = std::f64::consts::TAU * (n as i64 - phase) as f64
                            / *period_windows as f64;
                        &a * angle.cos()
                    })
                    .collect();
                Ok(EtaMoments {
                    mean_by_phase,
                    ar1_components: vec![],
                })
            }
            ModelErrorProcess::Composite { parts } => {
                let mut moments: Vec<EtaMoments> = parts
                    .iter()
                    .map(|p| EtaMoments::from_process(p, dim, spacing))
                    .collect::<Result<_>>()?;
                let period = moments
                    .iter()
                    .map(|m| m.mean_by_phase.len())
                    .fold(1, lcm);
                let mut mean_by_phase = vec![DVector::zeros(dim); period];
                let mut ar1_components = vec![];
                for m in moments.drain(..) {
                    let p = m.mean_by_phase.len();
                    for (n, out) in mean_by_phase.iter_mut().enumerate() {
                        *out += &m.mean_by_phase[n % p];
                    }
                    ar1_components.extend(m.ar1_components);
                }
                Ok(EtaMoments {
                    mean_by_phase,
                    ar1_components,
                })
            }
        }
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Everything the oracle knows at convergence.
#[derive(Debug, Clone)]
pub struct OracleMoments {
    pub gain: DMatrix<f64>,
    /// Window propagator M = M_step^s.
    pub m_window: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Period of the mean cycle (1 when stationary).
    pub period: usize,
    /// Exact mean analysis increment per window phase.
    pub mean_increment_by_phase: Vec<DVector<f64>>,
    /// Central (ensemble-sense) lagged increment covariances C_k, k=0..=kmax.
    pub central_covariances: Vec<DMatrix<f64>>,
    /// What the single-realization time estimator converges to: C_k plus the
    /// phase-mean outer-product contribution.
    pub timeseries_covariances: Vec<DMatrix<f64>>,
    /// Window-level model-error lag covariances `<eta~_{n+k} eta~_n^T>`.
    pub eta_window_lag_covariances: Vec<DMatrix<f64>>,
    /// Leading term of the lag-1 expansion, `K H <eta_n eta_{n-1}^T> H^T K^T`.
    pub lag1_leading_term: DMatrix<f64>,
    /// Analytic Frobenius bound on `C_1 - lag1_leading_term` from the
    /// contraction structure of the higher-order terms.
    pub lag1_higher_order_bound: f64,
    /// Stationary centered forecast-error covariance of the full system.
    pub p_true: DMatrix<f64>,
    /// Stationary forecast-error covariance of the eta-free system (what an
    /// optimal-gain filter believes).
    pub p_filter: DMatrix<f64>,
}

const MAX_ITERATIONS: usize = 100_000;
const REL_TOL: f64 = 1e-12;

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Iterate `P <- f(P)` to a fixed point.
fn fixed_point<F>(init: DMatrix<f64>, mut f: F, what: &str, a: &DMatrix<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
{
    let mut p = init;
    for _ in 0..MAX_ITERATIONS {
        let next = f(&p);
        if rel_diff(&next, &p) < REL_TOL {
            return Ok(next);
        }
        p = next;
    }
    Err(Error::NoConvergence(format!(
        "{what} recursion not converged within {MAX_ITERATIONS} iterations \
         (spectral radius of the cycle map: {:.4})",
        spectral_radius(a)
    )))
}

/// Steady-state Riccati gain for the eta-blind filter.
fn optimal_steady_gain(
    m: &DMatrix<f64>,
    h: &DMatrix<f64>,
    qs: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = m.nrows();
    let identity = DMatrix::identity(d, d);
    let mut pf = qs + &identity;
    for _ in 0..MAX_ITERATIONS {
        let s = h * &pf * h.transpose() + r;
        let s_inv = s
            .cholesky()
            .ok_or_else(|| Error::Singular("innovation covariance is not SPD".into()))?;
        let k = s_inv.solve(&(h * &pf)).transpose();
        let i_kh = &identity - &k * h;
        let pa = &i_kh * &pf * i_kh.transpose() + &k * r * k.transpose();
        let pf_next = m * pa * m.transpose() + qs;
        let done = rel_diff(&pf_next, &pf) < REL_TOL;
        pf = pf_next;
        if done {
            return Ok((k, pf));
        }
    }
    Err(Error::NoConvergence(format!(
        "Riccati recursion not converged within {MAX_ITERATIONS} iterations \
         (spectral radius of M: {:.4})",
        spectral_radius(m)
    )))
}

pub fn moment_oracle(
    system: &LinearSystemSpec,
    eta: &EtaMoments,
    kmax: usize,
) -> Result<OracleMoments> {
    let d = system.m_step.nrows();
    if system.m_step.ncols() != d || system.h.ncols() != d {
        return Err(Error::Dimension("oracle system shapes disagree".into()));
    }
    let identity = DMatrix::identity(d, d);

    // fold the window: M = M_step^s, G = sum_{j<s} M_step^j
    let s = system.steps_per_window.max(1);
    let mut m = identity.clone();
    let mut g = DMatrix::zeros(d, d);
    for _ in 0..s {
        g += &m;
        m = &system.m_step * m;
    }

    let (gain, pf_riccati) = match &system.gain {
        GainSpec::Given(k) => (k.clone(), DMatrix::zeros(d, d)),
        GainSpec::OptimalSteady => optimal_steady_gain(&m, &system.h, &system.qs, &system.r)?,
    };
    let h = &system.h;
    let kh = &gain * h;
    let a = &m * (&identity - &kh);

    // window-level eta moments
    let sigma_h0: Vec<DMatrix<f64>> = eta
        .ar1_components
        .iter()
        .map(|(_, c)| &g * c * g.transpose())
        .collect();
    let rhos: Vec<f64> = eta.ar1_components.iter().map(|(r, _)| *r).collect();
    let sigma_h_total = sigma_h0
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, c| acc + c);

    // cross moments X_i = <e_n h_{i,n}^T>, fixed point of X <- rho (A X + Sigma)
    let xs: Vec<DMatrix<f64>> = rhos
        .iter()
        .zip(&sigma_h0)
        .map(|(&rho, sig)| {
            fixed_point(
                DMatrix::zeros(d, d),
                |x| (&a * x + sig) * rho,
                "eta cross-moment",
                &a,
            )
        })
        .collect::<Result<_>>()?;
    let x_total = xs.iter().fold(DMatrix::zeros(d, d), |acc, x| acc + x);

    // stationary centered forecast-error covariance of the full system
    let mkr = &m * &gain * &system.r;
    let noise_forcing = &mkr * gain.transpose() * m.transpose() + &system.qs;
    let p_true = fixed_point(
        noise_forcing.clone(),
        |p| {
            &a * p * a.transpose()
                + &a * &x_total
                + x_total.transpose() * a.transpose()
                + &noise_forcing
                + &sigma_h_total
        },
        "error covariance",
        &a,
    )?;
    // eta-free part (what the Riccati filter believes under an optimal gain)
    let p_filter = match &system.gain {
        GainSpec::OptimalSteady => pf_riccati,
        GainSpec::Given(_) => fixed_point(
            noise_forcing.clone(),
            |p| &a * p * a.transpose() + &noise_forcing,
            "eta-free covariance",
            &a,
        )?,
    };
    let p_eta = &p_true - &p_filter;

    // periodic orbit of the mean forecast error
    let period = eta.mean_by_phase.len();
    let mu_win: Vec<DVector<f64>> = eta.mean_by_phase.iter().map(|mu| &g * mu).collect();
    let mut mean = DVector::zeros(d);
    let mut orbit = vec![DVector::zeros(d); period];
    let mut converged = false;
    for sweep in 0..MAX_ITERATIONS / period.max(1) {
        let mut max_change = 0.0_f64;
        for phase in 0..period {
            // mean[] currently holds m^f at this phase; advance one window
            let next = &a * &mean + &mu_win[phase];
            let prev = orbit[(phase + 1) % period].clone();
            max_change = max_change.max((&next - &prev).norm() / (1.0 + prev.norm()));
            orbit[(phase + 1) % period] = next.clone();
            mean = next;
        }
        if sweep > 0 && max_change < REL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "mean orbit not converged (spectral radius of the cycle map: {:.4})",
            spectral_radius(&a)
        )));
    }
    let mean_increment_by_phase: Vec<DVector<f64>> =
        orbit.iter().map(|mf| -(&kh * mf)).collect();

    // lagged centered covariances
    let mut central = Vec::with_capacity(kmax + 1);
    central.push(&gain * (h * &p_true * h.transpose() + &system.r) * gain.transpose());
    let mut p_k = p_true.clone();
    let mut v_k = mkr.clone(); // V_1 = M K R
    for k in 1..=kmax {
        let w: DMatrix<f64> = rhos
            .iter()
            .zip(&xs)
            .map(|(&rho, x)| x.transpose() * rho.powi(k as i32 - 1))
            .fold(DMatrix::zeros(d, d), |acc, t| acc + t);
        p_k = &a * &p_k + w;
        if k > 1 {
            v_k = &a * &v_k;
        }
        let c_k = &kh * &p_k * h.transpose() * gain.transpose()
            - &kh * &v_k * gain.transpose();
        central.push(c_k);
    }

    // phase-mean contribution seen by the single-realization time estimator
    let inc_mean_avg = mean_increment_by_phase
        .iter()
        .fold(DVector::zeros(d), |acc, v| acc + v)
        / period as f64;
    let deltas: Vec<DVector<f64>> = mean_increment_by_phase
        .iter()
        .map(|v| v - &inc_mean_avg)
        .collect();
    let timeseries = central
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let phase_term = (0..period)
                .map(|phi| &deltas[(phi + k) % period] * deltas[phi].transpose())
                .fold(DMatrix::zeros(d, d), |acc, t| acc + t)
                / period as f64;
            c + phase_term
        })
        .collect();

    // window-level eta lag covariances and the lag-1 decomposition
    let eta_window_lag_covariances: Vec<DMatrix<f64>> = (0..=kmax)
        .map(|k| {
            rhos.iter()
                .zip(&sigma_h0)
                .map(|(&rho, sig)| sig * rho.powi(k as i32))
                .fold(DMatrix::zeros(d, d), |acc, t| acc + t)
        })
        .collect();
    let lag1_leading_term = if kmax >= 1 {
        &kh * &eta_window_lag_covariances[1] * kh.transpose()
    } else {
        DMatrix::zeros(d, d)
    };

    // Frobenius bound on the higher-order remainder of the lag-1 expansion:
    //   C_1 - T_1 = [noise part] + K H (A P_eta + sum_{j>=1} rho^{j+1} Sigma A^T^j) H^T K^T
    let a_norm = spectral_norm(&a);
    let kh_norm = spectral_norm(&kh);
    let noise_part = &kh * (&a * &p_filter) * h.transpose() * gain.transpose()
        - &kh * &mkr * gain.transpose();
    let mut bound = noise_part.norm();
    bound += kh_norm * kh_norm * a_norm * p_eta.norm();
    for (&rho, sig) in rhos.iter().zip(&sigma_h0) {
        if rho * a_norm >= 1.0 {
            bound = f64::INFINITY;
            break;
        }
        bound += kh_norm * kh_norm * (rho * rho * a_norm / (1.0 - rho * a_norm)) * sig.norm();
    }

    Ok(OracleMoments {
        gain,
        m_window: m,
        h: system.h.clone(),
        period,
        mean_increment_by_phase,
        central_covariances: central,
        timeseries_covariances: timeseries,
        eta_window_lag_covariances,
        lag1_leading_term,
        lag1_higher_order_bound: bound,
        p_true,
        p_filter,
    })
}

impl OracleMoments {
    /// Component-averaged correlation at lag `k` of the time estimator:
    /// mean over components of `R~_k[i,i] / R~_0[i,i]`.
    pub fn component_mean_correlation(&self, k: usize) -> f64 {
        let d = self.h.ncols();
        let c0 = &self.timeseries_covariances[0];
        let ck = &self.timeseries_covariances[k];
        (0..d).map(|i| ck[(i, i)] / c0[(i, i)]).sum::<f64>() / d as f64
    }
}
