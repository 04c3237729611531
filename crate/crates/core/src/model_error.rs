//! Generators for the systematic model-error processes injected into the
//! truth run: zero, constant bias, stationary AR(1), diurnal oscillation,
//! and sums of those. The value produced for cycle `n` is the per-step
//! tendency applied throughout window `n`.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, RealizedCovariance};
use crate::dynamics::State;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelErrorProcess {
    Zero,
    ConstantBias {
        bias: Vec<f64>,
    },
    Ar1 {
        rho: f64,
        noise: CovarianceSpec,
    },
    Diurnal {
        amplitude: Vec<f64>,
        period_windows: usize,
        #[serde(default)]
        phase: i64,
    },
    Composite {
        parts: Vec<ModelErrorProcess>,
    },
}

impl ModelErrorProcess {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ModelErrorProcess::Zero => Ok(()),
            ModelErrorProcess::ConstantBias { bias } => {
                if bias.len() != dim {
                    return Err(Error::Dimension(format!(
                        "constant bias has length {}, state dimension is {}",
                        bias.len(),
                        dim
                    )));
                }
                Ok(())
            }
            ModelErrorProcess::Ar1 { rho, .. } => {
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::Config(format!(
                        "AR(1) rho must lie in [0, 1), got {rho}"
                    )));
                }
                Ok(())
            }
            ModelErrorProcess::Diurnal {
                amplitude,
                period_windows,
                ..
            } => {
                if amplitude.len() != dim {
                    return Err(Error::Dimension(format!(
                        "diurnal amplitude has length {}, state dimension is {}",
                        amplitude.len(),
                        dim
                    )));
                }
                if *period_windows < 2 {
                    return Err(Error::Config(
                        "diurnal period must be at least 2 windows".into(),
                    ));
                }
                Ok(())
            }
            ModelErrorProcess::Composite { parts } => {
                parts.iter().try_for_each(|p| p.validate(dim))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ModelErrorProcess::Zero => true,
            ModelErrorProcess::Composite { parts } => parts.iter().all(|p| p.is_zero()),
            _ => false,
        }
    }
}

enum SamplerState {
    Zero,
    ConstantBias(State),
    Ar1 {
        rho: f64,
        noise: RealizedCovariance,
        /// Current eta_n; initialized from the stationary distribution at n=0.
        current: Option<State>,
    },
    Diurnal {
        amplitude: State,
        period: usize,
        phase: i64,
    },
    Composite(Vec<ModelErrorSampler>),
}

/// Stateful sampler for one [`ModelErrorProcess`]. Cycles must be drawn in
/// order n = 0, 1, 2, ... so the AR(1) recursion is well defined.
pub struct ModelErrorSampler {
    dim: usize,
    next_cycle: usize,
    state: SamplerState,
}

impl ModelErrorSampler {
    pub fn new(process: &ModelErrorProcess, dim: usize, spacing: f64) -> Result<Self> {
        process.validate(dim)?;
        let state = match process {
            ModelErrorProcess::Zero => SamplerState::Zero,
            ModelErrorProcess::ConstantBias { bias } => {
                SamplerState::ConstantBias(State::from_vec(bias.clone()))
            }
            ModelErrorProcess::Ar1 { rho, noise } => SamplerState::Ar1 {
                rho: *rho,
                noise: noise.realize(dim, spacing)?,
                current: None,
            },
            ModelErrorProcess::Diurnal {
                amplitude,
                period_windows,
                phase,
            } => SamplerState::Diurnal {
                amplitude: State::from_vec(amplitude.clone()),
                period: *period_windows,
                phase: *phase,
            },
            ModelErrorProcess::Composite { parts } => SamplerState::Composite(
                parts
                    .iter()
                    .map(|p| ModelErrorSampler::new(p, dim, spacing))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(ModelErrorSampler {
            dim,
            next_cycle: 0,
            state,
        })
    }

    /// Emit eta_n for cycle `n`; `n` must equal the number of previous draws.
    pub fn sample<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<State> {
        if n != self.next_cycle {
            return Err(Error::Config(format!(
                "model error sampler expects cycle {}, got {}",
                self.next_cycle, n
            )));
        }
        self.next_cycle += 1;
        Ok(match &mut self.state {
            SamplerState::Zero => State::zeros(self.dim),
            SamplerState::ConstantBias(b) => b.clone(),
            SamplerState::Ar1 {
                rho,
                noise,
                current,
            } => {
                let next = match current.take() {
                    // stationary initialization: variance noise/(1 - rho^2)
                    None => noise.sample(rng) / (1.0 - *rho * *rho).sqrt(),
                    Some(prev) => prev * *rho + noise.sample(rng),
                };
                *current = Some(next.clone());
                next
            }
            SamplerState::Diurnal {
                amplitude,
                period,
                phase,
            } => {
                let angle = TAU * (n as i64 - *phase) as f64 / *period as f64;
                amplitude.clone() * angle.cos()
            }
            SamplerState::Composite(parts) => {
                let mut total = State::zeros(self.dim);
                for part in parts {
                    total += part.sample(n, rng)?;
                }
                total
            }
        })
    }
}
