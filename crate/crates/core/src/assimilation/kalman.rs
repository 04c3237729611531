//! Kalman filter pieces: gain computation, the Joseph-form analysis update,
//! and the window-level covariance forecast. The filter is deliberately
//! blind to the systematic model-error tendency, so with a nonzero truth
//! error process it is the suboptimal reference system.

use nalgebra::{Cholesky, DMatrix};

use crate::covariance::RealizedCovariance;
use crate::dynamics::{Dynamics, State};
use crate::error::{Error, Result};
use crate::observing::{ObservationBatch, ObservationOperator};

/// Forecast / analysis error covariances carried between cycles.
#[derive(Debug, Clone)]
pub struct KfState {
    pub pf: DMatrix<f64>,
    pub pa: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `K = Pf Hᵀ (H Pf Hᵀ + R)⁻¹` via a symmetric solve on the innovation
/// covariance.
pub fn kalman_gain(
    pf: &DMatrix<f64>,
    h: &ObservationOperator,
    r: &RealizedCovariance,
) -> Result<DMatrix<f64>> {
    let hm = h.matrix();
    let pf_ht = pf * hm.transpose();
    let s = symmetrize(&(&hm * &pf_ht + r.matrix()));
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::Singular("innovation covariance is not SPD".into()))?;
    // K S = Pf Hᵀ  =>  Kᵀ = S⁻¹ (Pf Hᵀ)ᵀ
    let kt = chol.solve(&pf_ht.transpose());
    Ok(kt.transpose())
}

/// Analysis update with the Joseph-form covariance recursion:
/// `Pa = (I-KH) Pf (I-KH)ᵀ + K R Kᵀ`.
pub fn kf_analysis_update(
    xf: &State,
    pf: &DMatrix<f64>,
    batch: &ObservationBatch,
    h: &ObservationOperator,
    r: &RealizedCovariance,
) -> Result<(State, DMatrix<f64>, DMatrix<f64>)> {
    let k = kalman_gain(pf, h, r)?;
    let innovation = &batch.values - h.apply(xf);
    let xa = xf + &k * &innovation;
    let d = xf.len();
    let i_kh = DMatrix::identity(d, d) - &k * h.matrix();
    let pa = symmetrize(&(&i_kh * pf * i_kh.transpose() + &k * r.matrix() * k.transpose()));
    Ok((xa, pa, k))
}

/// Forecast step: propagate the analysis (with the tendency the scheme has
/// decided to apply) and evolve the covariance with the window-integrated
/// tangent linear, `Pf' = M Pa Mᵀ + Qs`.
pub fn kf_forecast_update(
    xa: &State,
    pa: &DMatrix<f64>,
    dynamics: &Dynamics,
    steps: usize,
    qs: &DMatrix<f64>,
    eta_applied: &State,
) -> Result<(State, DMatrix<f64>)> {
    let traj = dynamics.step(xa, eta_applied, steps)?;
    let m = dynamics.window_tlm_matrix(&traj)?;
    let pf = symmetrize(&(&m * pa * m.transpose() + qs));
    Ok((traj.final_state().clone(), pf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceSpec;
    use crate::observing::ObservationOperatorSpec;
    use crate::rng::{stream, StreamDomain};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_setup() -> (ObservationOperator, RealizedCovariance) {
        let h = ObservationOperatorSpec::Full.realize(1).unwrap();
        let r = CovarianceSpec::diagonal(1.0).realize(1, 1.0).unwrap();
        (h, r)
    }

    #[test]
    fn scalar_gain_is_half() {
        let (h, r) = scalar_setup();
        let pf = DMatrix::from_element(1, 1, 1.0);
        let k = kalman_gain(&pf, &h, &r).unwrap();
        assert_relative_eq!(k[(0, 0)], 0.5);
    }

    #[test]
    fn huge_r_drives_gain_to_zero() {
        let h = ObservationOperatorSpec::Full.realize(2).unwrap();
        let r = CovarianceSpec::diagonal(1e12).realize(2, 1.0).unwrap();
        let pf = DMatrix::identity(2, 2);
        let k = kalman_gain(&pf, &h, &r).unwrap();
        assert!(k.norm() <= 1e-11);
    }

    #[test]
    fn gain_satisfies_normal_equations() {
        let mut rng = stream(3, StreamDomain::Diagnostics, 0);
        let a = DMatrix::from_fn(4, 4, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let pf = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let h = ObservationOperatorSpec::EveryKth { stride: 2, offset: 0 }
            .realize(4)
            .unwrap();
        let r = CovarianceSpec::diagonal(0.4).realize(2, 1.0).unwrap();
        let k = kalman_gain(&pf, &h, &r).unwrap();
        let hm = h.matrix();
        let s = &hm * &pf * hm.transpose() + r.matrix();
        let resid = (&k * s - &pf * hm.transpose()).amax();
        assert!(resid < 1e-10, "residual {resid}");
    }

    #[test]
    fn zero_innovation_leaves_state_unchanged() {
        let (h, r) = scalar_setup();
        let pf = DMatrix::from_element(1, 1, 1.0);
        let xf = State::from_vec(vec![2.5]);
        let batch = ObservationBatch {
            cycle_index: 0,
            time_within_window: 0,
            values: DVector::from_vec(vec![2.5]),
        };
        let (xa, _, _) = kf_analysis_update(&xf, &pf, &batch, &h, &r).unwrap();
        assert_eq!(xa, xf);
    }

    #[test]
    fn scalar_update_arithmetic() {
        let (h, r) = scalar_setup();
        let pf = DMatrix::from_element(1, 1, 1.0);
        let xf = State::from_vec(vec![0.0]);
        let batch = ObservationBatch {
            cycle_index: 0,
            time_within_window: 0,
            values: DVector::from_vec(vec![2.0]),
        };
        let (xa, pa, _) = kf_analysis_update(&xf, &pf, &batch, &h, &r).unwrap();
        assert_relative_eq!(xa[0], 1.0);
        assert_relative_eq!(pa[(0, 0)], 0.5);
    }

    #[test]
    fn joseph_form_equals_short_form_for_optimal_gain() {
        let mut rng = stream(4, StreamDomain::Diagnostics, 0);
        let a = DMatrix::from_fn(3, 3, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let pf = &a * a.transpose() + DMatrix::identity(3, 3) * 0.2;
        let h = ObservationOperatorSpec::Full.realize(3).unwrap();
        let r = CovarianceSpec::diagonal(0.7).realize(3, 1.0).unwrap();
        let xf = State::zeros(3);
        let batch = ObservationBatch {
            cycle_index: 0,
            time_within_window: 0,
            values: DVector::zeros(3),
        };
        let (_, pa, k) = kf_analysis_update(&xf, &pf, &batch, &h, &r).unwrap();
        let short = (DMatrix::identity(3, 3) - &k * h.matrix()) * &pf;
        assert!((pa - short).amax() < 1e-10);
    }

    #[test]
    fn scalar_steady_state_forecast() {
        // M=1, Pa=0.5, Qs=0.5 -> Pf'=1, closing the loop with the gain test.
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(1, 1),
        };
        let pa = DMatrix::from_element(1, 1, 0.5);
        let qs = DMatrix::from_element(1, 1, 0.5);
        let (_, pf) = kf_forecast_update(
            &State::from_vec(vec![1.0]),
            &pa,
            &dynamics,
            1,
            &qs,
            &State::zeros(1),
        )
        .unwrap();
        assert_relative_eq!(pf[(0, 0)], 1.0);
    }

    #[test]
    fn identity_dynamics_zero_noise_preserves_covariance() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(2, 2),
        };
        let pa = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let qs = DMatrix::zeros(2, 2);
        let (_, pf) =
            kf_forecast_update(&State::zeros(2), &pa, &dynamics, 3, &qs, &State::zeros(2))
                .unwrap();
        assert!((pf - pa).amax() < 1e-14);
    }

    #[test]
    fn lorenz96_forecast_covariance_stays_symmetric_psd() {
        let dynamics = Dynamics::Lorenz96 { forcing: 8.0, dt: 0.02 };
        let mut rng = stream(6, StreamDomain::Diagnostics, 0);
        let xa = State::from_element(8, 8.0)
            + State::from_fn(8, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let pa = DMatrix::identity(8, 8) * 0.2;
        let qs = DMatrix::identity(8, 8) * 0.05;
        let (_, pf) = kf_forecast_update(&xa, &pa, &dynamics, 4, &qs, &State::zeros(8)).unwrap();
        assert!((&pf - pf.transpose()).amax() <= 1e-12);
        let eig = pf.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-10, "minimum eigenvalue {min}");
    }
}
