//! Experiment configuration: a TOML schema with strict field checking,
//! aggregated semantic validation, and realization into runnable engine
//! configurations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assimilation::{CyclingStrategy, EngineConfig, Scheme, WeakConstraint};
use crate::assimilation::var4d::SolveOptions;
use crate::covariance::CovarianceSpec;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::model_error::ModelErrorProcess;
use crate::observing::ObservationOperatorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dynamics: DynamicsSpec,
    #[serde(default = "default_truth_error")]
    pub truth_error: ModelErrorProcess,
    /// White model noise added to the truth once per window; also the Q_s
    /// the filter uses in its covariance forecast. Omitted means none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic_noise: Option<CovarianceSpec>,
    pub observations: ObservationsSection,
    pub background: BackgroundSection,
    pub scheme: SchemeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSection>,
}

fn default_truth_error() -> ModelErrorProcess {
    ModelErrorProcess::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub dim: usize,
    #[serde(default = "one_f64")]
    pub grid_spacing: f64,
    #[serde(default = "one_usize")]
    pub steps_per_window: usize,
    pub cycles: usize,
    #[serde(default)]
    pub spinup_cycles: usize,
    #[serde(default = "one_usize")]
    pub replicates: usize,
    pub seed: u64,
    /// Largest lag used by the lagged diagnostics.
    #[serde(default = "default_lags")]
    pub lags: usize,
    /// Spread of the random initial truth perturbation.
    #[serde(default = "one_f64")]
    pub truth_init_spread: f64,
}

fn one_f64() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_lags() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    /// `scale * I + shift * S` with `S` the one-point circular shift.
    ScaledIdentity {
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Explicit row-major matrix.
    Rows { rows: Vec<Vec<f64>> },
    Lorenz96 { forcing: f64, dt: f64 },
}

impl DynamicsSpec {
    pub fn realize(&self, dim: usize) -> Result<Dynamics> {
        let dynamics = match self {
            DynamicsSpec::ScaledIdentity { scale, shift } => {
                let mut m = DMatrix::identity(dim, dim) * *scale;
                for i in 0..dim {
                    m[(i, (i + 1) % dim)] += shift;
                }
                Dynamics::Linear { matrix: m }
            }
            DynamicsSpec::Rows { rows } => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Dimension(format!(
                        "dynamics rows must form a {dim}x{dim} matrix"
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Dynamics::Linear {
                    matrix: DMatrix::from_row_slice(dim, dim, &flat),
                }
            }
            DynamicsSpec::Lorenz96 { forcing, dt } => Dynamics::Lorenz96 {
                forcing: *forcing,
                dt: *dt,
            },
        };
        dynamics.validate(dim)?;
        Ok(dynamics)
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, DynamicsSpec::Lorenz96 { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationsSection {
    pub operator: ObservationOperatorSpec,
    pub error: CovarianceSpec,
    /// Step indices within the window observed by variational schemes.
    #[serde(default = "default_obs_times")]
    pub times: Vec<usize>,
}

fn default_obs_times() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSection {
    pub covariance: CovarianceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    KalmanFilter,
    #[serde(rename = "strong_4dvar")]
    Strong4dvar,
    #[serde(rename = "weak_4dvar")]
    Weak4dvar {
        strategy: CyclingStrategy,
        q: CovarianceSpec,
        /// Components carrying a tendency control; omitted means all.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        active: Option<Vec<usize>>,
    },
}

impl SchemeSpec {
    pub fn label(&self) -> String {
        match self {
            SchemeSpec::KalmanFilter => "kalman_filter".into(),
            SchemeSpec::Strong4dvar => "strong_4dvar".into(),
            SchemeSpec::Weak4dvar { strategy, .. } => match strategy {
                CyclingStrategy::Restarted => "weak_restarted".into(),
                CyclingStrategy::Cycled => "weak_cycled".into(),
                CyclingStrategy::DiurnallyCycled { lag } => format!("weak_diurnal_lag{lag}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_outer")]
    pub outer_loops: usize,
    #[serde(default = "default_grad_reduction")]
    pub grad_reduction: f64,
    #[serde(default = "default_max_cg")]
    pub max_cg_iterations: usize,
}

fn default_outer() -> usize {
    SolveOptions::default().outer_loops
}
fn default_grad_reduction() -> f64 {
    SolveOptions::default().grad_reduction
}
fn default_max_cg() -> usize {
    SolveOptions::default().max_cg_iterations
}

impl SolverSection {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            outer_loops: self.outer_loops,
            grad_reduction: self.grad_reduction,
            max_cg_iterations: self.max_cg_iterations,
        }
    }
}

/// Scheme variants to compare side by side over one shared simulated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    #[serde(default = "default_true")]
    pub include_strong: bool,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<CyclingStrategy>,
}

fn default_true() -> bool {
    true
}
fn default_strategies() -> Vec<CyclingStrategy> {
    vec![
        CyclingStrategy::Restarted,
        CyclingStrategy::Cycled,
        CyclingStrategy::DiurnallyCycled { lag: 2 },
    ]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        ExperimentConfig::from_toml_str(&text)
    }

    /// Digest of the canonical serialized form, recorded in run manifests.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let hash = Sha256::new_with_prefix(b"laiclab-config-v1")
            .chain_update(canonical.as_bytes())
            .finalize();
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// All semantic problems at once, joined into one configuration error.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = vec![];
        let e = &self.experiment;
        let dim = e.dim;
        if dim == 0 {
            problems.push("experiment.dim must be >= 1".into());
        }
        if e.cycles == 0 {
            problems.push("experiment.cycles must be >= 1".into());
        }
        if e.spinup_cycles >= e.cycles {
            problems.push(format!(
                "experiment.spinup_cycles ({}) must be below experiment.cycles ({})",
                e.spinup_cycles, e.cycles
            ));
        }
        if e.replicates == 0 {
            problems.push("experiment.replicates must be >= 1".into());
        }
        if e.steps_per_window == 0 {
            problems.push("experiment.steps_per_window must be >= 1".into());
        }
        if !(e.grid_spacing > 0.0) {
            problems.push("experiment.grid_spacing must be positive".into());
        }
        if e.cycles > e.spinup_cycles && e.lags >= e.cycles - e.spinup_cycles {
            problems.push(format!(
                "experiment.lags ({}) needs more retained cycles than {}",
                e.lags,
                e.cycles - e.spinup_cycles
            ));
        }
        if dim > 0 {
            if let Err(err) = self.dynamics.realize(dim) {
                problems.push(err.to_string());
            }
            if let Err(err) = self.truth_error.validate(dim) {
                problems.push(err.to_string());
            }
            if let Some(spec) = &self.stochastic_noise {
                if let Err(err) = spec.matrix(dim, e.grid_spacing) {
                    problems.push(format!("stochastic_noise: {err}"));
                }
            }
            if let Err(err) = self.observations.operator.realize(dim) {
                problems.push(err.to_string());
            } else {
                let obs_dim = self.observations.operator.realize(dim).unwrap().obs_dim();
                if let Err(err) = self.observations.error.matrix(obs_dim, e.grid_spacing) {
                    problems.push(format!("observations.error: {err}"));
                }
            }
            if let Err(err) = self.background.covariance.matrix(dim, e.grid_spacing) {
                problems.push(format!("background.covariance: {err}"));
            }
        }
        if self.observations.times.is_empty() {
            problems.push("observations.times must not be empty".into());
        }
        if self
            .observations
            .times
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            problems.push("observations.times must be strictly increasing".into());
        }
        if let Some(&last) = self.observations.times.last() {
            if last > e.steps_per_window {
                problems.push(format!(
                    "observation time {last} beyond the {}-step window",
                    e.steps_per_window
                ));
            }
        }
        if let SchemeSpec::Weak4dvar { strategy, q, active } = &self.scheme {
            if let CyclingStrategy::DiurnallyCycled { lag } = strategy {
                if *lag == 0 {
                    problems.push("diurnally cycled strategy needs lag >= 1".into());
                }
            }
            let n_active = active.as_ref().map_or(dim, |a| a.len());
            if let Some(a) = active {
                if a.is_empty() {
                    problems.push("scheme.active must not be empty".into());
                }
                if a.windows(2).any(|w| w[0] >= w[1]) {
                    problems.push("scheme.active must be strictly increasing".into());
                }
                if a.iter().any(|&i| i >= dim) {
                    problems.push("scheme.active has out-of-range components".into());
                }
            }
            if n_active > 0 {
                if let Err(err) = q.matrix(n_active, e.grid_spacing) {
                    problems.push(format!("scheme.q: {err}"));
                }
            }
        }
        if matches!(self.scheme, SchemeSpec::KalmanFilter) && !self.dynamics.is_linear() {
            // the covariance recursion uses the tangent linear model around
            // the analysis, which is supported; nothing to flag
        }
        if let Some(suite) = &self.suite {
            if !suite.include_strong && suite.strategies.is_empty() {
                problems.push("suite compares no schemes".into());
            }
            if !matches!(self.scheme, SchemeSpec::Weak4dvar { .. }) {
                problems.push(
                    "suite mode needs scheme.type = \"weak_4dvar\" to supply the tendency term"
                        .into(),
                );
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        self.solver
            .as_ref()
            .map_or_else(SolveOptions::default, SolverSection::options)
    }

    fn realize_scheme(&self, spec: &SchemeSpec) -> Result<Scheme> {
        let e = &self.experiment;
        Ok(match spec {
            SchemeSpec::KalmanFilter => Scheme::KalmanFilter,
            SchemeSpec::Strong4dvar => Scheme::Var4d { weak: None },
            SchemeSpec::Weak4dvar { strategy, q, active } => {
                let active = active
                    .clone()
                    .unwrap_or_else(|| (0..e.dim).collect());
                let q = q.realize(active.len(), e.grid_spacing)?;
                Scheme::Var4d {
                    weak: Some(WeakConstraint {
                        strategy: *strategy,
                        active,
                        q,
                    }),
                }
            }
        })
    }

    /// Realize everything into an engine configuration for the given scheme
    /// variant (`None` uses the configured scheme).
    pub fn engine_config(&self, scheme: Option<&SchemeSpec>) -> Result<EngineConfig> {
        let e = &self.experiment;
        let scheme_spec = scheme.unwrap_or(&self.scheme);
        let operator = self.observations.operator.realize(e.dim)?;
        let obs_dim = operator.obs_dim();
        let stochastic = self
            .stochastic_noise
            .clone()
            .unwrap_or_else(|| CovarianceSpec::diagonal(0.0))
            .realize(e.dim, e.grid_spacing)?;
        Ok(EngineConfig {
            dynamics: self.dynamics.realize(e.dim)?,
            steps_per_window: e.steps_per_window,
            truth_error: self.truth_error.clone(),
            stochastic,
            operator,
            r: self.observations.error.realize(obs_dim, e.grid_spacing)?,
            obs_times: self.observations.times.clone(),
            b: self.background.covariance.realize(e.dim, e.grid_spacing)?,
            scheme: self.realize_scheme(scheme_spec)?,
            solve_options: self.solve_options(),
            grid_spacing: e.grid_spacing,
        })
    }

    /// Scheme variants a suite run compares; the configured scheme supplies
    /// the tendency covariance and active set.
    pub fn suite_schemes(&self) -> Result<Vec<SchemeSpec>> {
        let suite = self
            .suite
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [suite] section".into()))?;
        let (q, active) = match &self.scheme {
            SchemeSpec::Weak4dvar { q, active, .. } => (q.clone(), active.clone()),
            _ => {
                return Err(Error::Config(
                    "suite mode needs scheme.type = \"weak_4dvar\"".into(),
                ))
            }
        };
        let mut out = vec![];
        if suite.include_strong {
            out.push(SchemeSpec::Strong4dvar);
        }
        for strategy in &suite.strategies {
            out.push(SchemeSpec::Weak4dvar {
                strategy: *strategy,
                q: q.clone(),
                active: active.clone(),
            });
        }
        Ok(out)
    }
}
