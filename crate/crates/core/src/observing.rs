//! Simulated observing system: selection observation operators, observation
//! error sampling, and batch generation from a truth trajectory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::RealizedCovariance;
use crate::dynamics::{State, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObservationOperatorSpec {
    Full,
    EveryKth { stride: usize, offset: usize },
    IndexSet { indices: Vec<usize> },
}

impl ObservationOperatorSpec {
    pub fn realize(&self, dim: usize) -> Result<ObservationOperator> {
        let indices = match self {
            ObservationOperatorSpec::Full => (0..dim).collect::<Vec<_>>(),
            ObservationOperatorSpec::EveryKth { stride, offset } => {
                if *stride == 0 {
                    return Err(Error::Config("observation stride must be >= 1".into()));
                }
                if *offset >= dim {
                    return Err(Error::Config(format!(
                        "observation offset {offset} out of range for dimension {dim}"
                    )));
                }
                (*offset..dim).step_by(*stride).collect()
            }
            ObservationOperatorSpec::IndexSet { indices } => {
                if let Some(bad) = indices.iter().find(|&&i| i >= dim) {
                    return Err(Error::Config(format!(
                        "observation index {bad} out of range for dimension {dim}"
                    )));
                }
                indices.clone()
            }
        };
        if indices.is_empty() {
            return Err(Error::Config("observation operator selects nothing".into()));
        }
        Ok(ObservationOperator { dim, indices })
    }
}

/// Realized selection operator H: p rows, each picking one state component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationOperator {
    dim: usize,
    indices: Vec<usize>,
}

impl ObservationOperator {
    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn obs_dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// H x: selected components in operator order.
    pub fn apply(&self, x: &State) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }

    /// Hᵀ y: scatter back into state space.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> State {
        let mut out = State::zeros(self.dim);
        for (row, &i) in self.indices.iter().enumerate() {
            out[i] += y[row];
        }
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.indices.len(), self.dim);
        for (row, &i) in self.indices.iter().enumerate() {
            h[(row, i)] = 1.0;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBatch {
    pub cycle_index: usize,
    /// Step index within the assimilation window at which the batch is valid.
    pub time_within_window: usize,
    pub values: DVector<f64>,
}

/// Generate observation batches `y = H x^t + eps`, `eps ~ N(0, R)`,
/// independently across batches, from a recorded truth trajectory.
pub fn generate_observations<R: Rng + ?Sized>(
    truth: &Trajectory,
    operator: &ObservationOperator,
    r: &RealizedCovariance,
    obs_times: &[usize],
    cycle_index: usize,
    rng: &mut R,
) -> Result<Vec<ObservationBatch>> {
    if r.dim() != operator.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation covariance dimension {} vs operator dimension {}",
            r.dim(),
            operator.obs_dim()
        )));
    }
    obs_times
        .iter()
        .map(|&t| {
            if t > truth.n_steps() {
                return Err(Error::Config(format!(
                    "observation time {t} outside window of {} steps",
                    truth.n_steps()
                )));
            }
            let clean = operator.apply(&truth.states[t]);
            Ok(ObservationBatch {
                cycle_index,
                time_within_window: t,
                values: clean + r.sample(rng),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceSpec;
    use crate::dynamics::Dynamics;
    use crate::rng::{stream, StreamDomain};
    use nalgebra::DMatrix;

    #[test]
    fn full_operator_is_identity() {
        let h = ObservationOperatorSpec::Full.realize(3).unwrap();
        let x = State::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(h.apply(&x), x);
    }

    #[test]
    fn every_kth_selects_strided_components() {
        let h = ObservationOperatorSpec::EveryKth { stride: 2, offset: 0 }
            .realize(4)
            .unwrap();
        let x = State::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.apply(&x), DVector::from_vec(vec![1.0, 3.0]));
    }

    #[test]
    fn scatter_is_exact_adjoint() {
        let h = ObservationOperatorSpec::IndexSet {
            indices: vec![3, 0, 2],
        }
        .realize(5)
        .unwrap();
        let x = State::from_vec(vec![1.0, -2.0, 0.5, 4.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, -1.0, 0.25]);
        assert_eq!(h.apply(&x).dot(&y), x.dot(&h.apply_transpose(&y)));
    }

    #[test]
    fn selection_is_sup_norm_nonexpansive() {
        let h = ObservationOperatorSpec::EveryKth { stride: 3, offset: 1 }
            .realize(7)
            .unwrap();
        let x = State::from_vec(vec![5.0, -9.0, 2.0, 0.0, 1.0, -3.0, 8.0]);
        assert!(h.apply(&x).amax() <= x.amax());
    }

    #[test]
    fn out_of_range_index_rejected_at_construction() {
        assert!(ObservationOperatorSpec::IndexSet { indices: vec![4] }
            .realize(4)
            .is_err());
    }

    fn unit_window(dim: usize) -> Trajectory {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(dim, dim),
        };
        let x = State::from_fn(dim, |i, _| i as f64);
        dynamics.step(&x, &State::zeros(dim), 2).unwrap()
    }

    #[test]
    fn zero_noise_reproduces_truth_and_seeds_are_deterministic() {
        let traj = unit_window(4);
        let h = ObservationOperatorSpec::Full.realize(4).unwrap();
        let r0 = CovarianceSpec::diagonal(0.0).realize(4, 1.0).unwrap();
        let mut rng = stream(5, StreamDomain::ObsNoise, 0);
        let batches = generate_observations(&traj, &h, &r0, &[2], 0, &mut rng).unwrap();
        assert_eq!(batches[0].values, h.apply(&traj.states[2]));

        let r = CovarianceSpec::diagonal(0.3).realize(4, 1.0).unwrap();
        let mut rng_a = stream(5, StreamDomain::ObsNoise, 1);
        let mut rng_b = stream(5, StreamDomain::ObsNoise, 1);
        let a = generate_observations(&traj, &h, &r, &[0, 2], 0, &mut rng_a).unwrap();
        let b = generate_observations(&traj, &h, &r, &[0, 2], 0, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observation_error_covariance_matches_r() {
        let traj = unit_window(3);
        let h = ObservationOperatorSpec::Full.realize(3).unwrap();
        let spec = CovarianceSpec::Isotropic {
            variance: 0.5,
            correlation_length: 1.0,
            kernel: crate::covariance::Kernel::Gaussian,
        };
        let r = spec.realize(3, 1.0).unwrap();
        let mut rng = stream(11, StreamDomain::ObsNoise, 0);
        let n = 100_000;
        let clean = h.apply(&traj.states[1]);
        let mut acc = DMatrix::zeros(3, 3);
        let mut lag1 = DMatrix::zeros(3, 3);
        let mut prev: Option<DVector<f64>> = None;
        for _ in 0..n {
            let b = generate_observations(&traj, &h, &r, &[1], 0, &mut rng).unwrap();
            let e = &b[0].values - &clean;
            acc += &e * e.transpose();
            if let Some(p) = prev {
                lag1 += &e * p.transpose();
            }
            prev = Some(e);
        }
        acc /= n as f64;
        lag1 /= (n - 1) as f64;
        let err = (&acc - r.matrix()).norm() / r.matrix().norm();
        assert!(err < 0.05, "relative Frobenius error {err}");
        // serial whiteness: lag-1 cross-covariance inside 4/sqrt(N) bands
        let band = 4.0 / (n as f64).sqrt();
        assert!(lag1.amax() < band * r.matrix().amax().max(1.0));
    }

    #[test]
    fn observation_time_outside_window_rejected() {
        let traj = unit_window(3);
        let h = ObservationOperatorSpec::Full.realize(3).unwrap();
        let r = CovarianceSpec::diagonal(0.1).realize(3, 1.0).unwrap();
        let mut rng = stream(5, StreamDomain::ObsNoise, 0);
        assert!(generate_observations(&traj, &h, &r, &[9], 0, &mut rng).is_err());
    }
}
