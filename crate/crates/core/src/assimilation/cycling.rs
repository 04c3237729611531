//! Forecast-analysis cycling of a twin experiment: the truth run with its
//! injected error processes, the assimilation scheme's own forecast, and the
//! per-cycle records consumed by the diagnostics.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assimilation::kalman::{kf_analysis_update, kf_forecast_update};
use crate::assimilation::var4d::{
    ModelErrorTerm, SolveOptions, SolverStats, WindowProblem,
};
use crate::covariance::RealizedCovariance;
use crate::dynamics::{Dynamics, State};
use crate::error::{Error, Result};
use crate::model_error::{ModelErrorProcess, ModelErrorSampler};
use crate::observing::{generate_observations, ObservationBatch, ObservationOperator};

/// How the weak-constraint tendency background is produced from the
/// history of analysed tendencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CyclingStrategy {
    /// eta_b = 0 every cycle.
    Restarted,
    /// eta_b = eta_a(n-1), persistence.
    Cycled,
    /// eta_b = eta_a(n-lag); lag 2 skips one window so a period-2 error mode
    /// is seen in phase.
    DiurnallyCycled {
        #[serde(default = "default_lag")]
        lag: usize,
    },
}

fn default_lag() -> usize {
    2
}

/// Tendency background for cycle `n` given the analysed tendencies of
/// cycles `0..n`. Cold starts (missing history) return zero.
pub fn model_error_background(
    strategy: CyclingStrategy,
    history: &[State],
    n: usize,
    dim: usize,
) -> State {
    let lag = match strategy {
        CyclingStrategy::Restarted => return State::zeros(dim),
        CyclingStrategy::Cycled => 1,
        CyclingStrategy::DiurnallyCycled { lag } => lag,
    };
    if n >= lag && history.len() + lag > n {
        history[n - lag].clone()
    } else {
        State::zeros(dim)
    }
}

pub struct WeakConstraint {
    pub strategy: CyclingStrategy,
    /// Active component indices, strictly increasing.
    pub active: Vec<usize>,
    pub q: RealizedCovariance,
}

pub enum Scheme {
    KalmanFilter,
    /// Strong constraint when `weak` is `None`.
    Var4d { weak: Option<WeakConstraint> },
}

impl Scheme {
    fn applies_correction(&self) -> bool {
        matches!(self, Scheme::Var4d { weak: Some(_) })
    }
}

/// One batch's background and analysis departures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeparturePair {
    pub time_within_window: usize,
    pub background: DVector<f64>,
    pub analysis: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationCycleRecord {
    pub cycle_index: usize,
    pub background: State,
    pub analysis: State,
    /// Stored redundantly with `analysis - background`; checked on creation.
    pub increment: State,
    pub eta_analysis: State,
    pub eta_background: State,
    pub departures: Vec<DeparturePair>,
    pub solver_stats: Option<SolverStats>,
}

impl AssimilationCycleRecord {
    pub fn check_consistency(&self) -> Result<()> {
        let drift = (&self.analysis - &self.background - &self.increment).amax();
        if drift > 0.0 {
            return Err(Error::Dimension(format!(
                "increment inconsistent with analysis - background by {drift:.3e}"
            )));
        }
        Ok(())
    }
}

/// Everything a cycling engine needs, realized and dimension-checked.
pub struct EngineConfig {
    pub dynamics: Dynamics,
    pub steps_per_window: usize,
    pub truth_error: ModelErrorProcess,
    /// Stochastic model noise, applied to the truth once per window and used
    /// as the Q_s term of the filter covariance forecast.
    pub stochastic: RealizedCovariance,
    pub operator: ObservationOperator,
    pub r: RealizedCovariance,
    /// Step indices within the window at which observation batches are taken
    /// (variational schemes). The Kalman filter assimilates a single batch at
    /// the analysis time.
    pub obs_times: Vec<usize>,
    pub b: RealizedCovariance,
    pub scheme: Scheme,
    pub solve_options: SolveOptions,
    pub grid_spacing: f64,
}

pub struct CycleEngine {
    cfg: EngineConfig,
    cycle: usize,
    truth: State,
    background: State,
    kf_forecast_cov: Option<DMatrix<f64>>,
    eta_history: Vec<State>,
    truth_sampler: ModelErrorSampler,
    rng_truth_error: ChaCha12Rng,
    rng_truth_noise: ChaCha12Rng,
    rng_obs: ChaCha12Rng,
    truth_hasher: Sha256,
    obs_hasher: Sha256,
}

pub struct EngineRngs {
    pub truth_error: ChaCha12Rng,
    pub truth_noise: ChaCha12Rng,
    pub obs: ChaCha12Rng,
}

impl CycleEngine {
    pub fn new(
        cfg: EngineConfig,
        initial_truth: State,
        initial_background: State,
        rngs: EngineRngs,
    ) -> Result<Self> {
        let dim = initial_truth.len();
        cfg.dynamics.validate(dim)?;
        if let Scheme::Var4d { weak: Some(w) } = &cfg.scheme {
            if w.active.is_empty() {
                return Err(Error::Config(
                    "weak-constraint mode needs at least one active component".into(),
                ));
            }
            if w.q.dim() != w.active.len() {
                return Err(Error::Dimension(format!(
                    "model-error covariance dimension {} vs {} active components",
                    w.q.dim(),
                    w.active.len()
                )));
            }
        }
        let kf_forecast_cov = match cfg.scheme {
            Scheme::KalmanFilter => Some(cfg.b.matrix().clone()),
            _ => None,
        };
        let truth_sampler = ModelErrorSampler::new(&cfg.truth_error, dim, cfg.grid_spacing)?;
        Ok(CycleEngine {
            cfg,
            cycle: 0,
            truth: initial_truth,
            background: initial_background,
            kf_forecast_cov,
            eta_history: Vec::new(),
            truth_sampler,
            rng_truth_error: rngs.truth_error,
            rng_truth_noise: rngs.truth_noise,
            rng_obs: rngs.obs,
            truth_hasher: Sha256::new_with_prefix(b"laiclab-truth-v1"),
            obs_hasher: Sha256::new_with_prefix(b"laiclab-obs-v1"),
        })
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle
    }

    /// Hex digests of the truth and observation realizations so far; used to
    /// assert that paired experiments saw the same simulated world.
    pub fn world_hashes(&self) -> (String, String) {
        let t = self.truth_hasher.clone().finalize();
        let o = self.obs_hasher.clone().finalize();
        (hex_string(&t), hex_string(&o))
    }

    fn hash_state(hasher: &mut Sha256, v: &DVector<f64>) {
        for x in v.iter() {
            hasher.update(x.to_le_bytes());
        }
    }

    /// Run one full forecast-analysis cycle and return its record.
    pub fn run_cycle(&mut self) -> Result<AssimilationCycleRecord> {
        let record = match &self.cfg.scheme {
            Scheme::KalmanFilter => self.run_kf_cycle()?,
            Scheme::Var4d { .. } => self.run_var_cycle()?,
        };
        record.check_consistency()?;
        self.cycle += 1;
        Ok(record)
    }

    fn run_kf_cycle(&mut self) -> Result<AssimilationCycleRecord> {
        let n = self.cycle;
        let cfg = &self.cfg;
        // observe the truth at the analysis time
        let y = cfg.operator.apply(&self.truth) + cfg.r.sample(&mut self.rng_obs);
        Self::hash_state(&mut self.obs_hasher, &y);
        let batch = ObservationBatch {
            cycle_index: n,
            time_within_window: 0,
            values: y,
        };

        let pf = self
            .kf_forecast_cov
            .as_ref()
            .expect("KF scheme carries a forecast covariance")
            .clone();
        let (xa, pa, _gain) =
            kf_analysis_update(&self.background, &pf, &batch, &cfg.operator, &cfg.r)?;

        let departures = vec![DeparturePair {
            time_within_window: 0,
            background: &batch.values - cfg.operator.apply(&self.background),
            analysis: &batch.values - cfg.operator.apply(&xa),
        }];
        let record = AssimilationCycleRecord {
            cycle_index: n,
            background: self.background.clone(),
            analysis: xa.clone(),
            increment: &xa - &self.background,
            eta_analysis: State::zeros(xa.len()),
            eta_background: State::zeros(xa.len()),
            departures,
            solver_stats: None,
        };

        // advance the world, then the (eta-blind) filter forecast
        let eta_true = self.truth_sampler.sample(n, &mut self.rng_truth_error)?;
        let truth_traj = cfg
            .dynamics
            .step(&self.truth, &eta_true, cfg.steps_per_window)?;
        self.truth = truth_traj.final_state() + cfg.stochastic.sample(&mut self.rng_truth_noise);
        Self::hash_state(&mut self.truth_hasher, &self.truth);

        let (xf, pf_next) = kf_forecast_update(
            &xa,
            &pa,
            &cfg.dynamics,
            cfg.steps_per_window,
            cfg.stochastic.matrix(),
            &State::zeros(xa.len()),
        )?;
        self.background = xf;
        self.kf_forecast_cov = Some(pf_next);
        Ok(record)
    }

    fn run_var_cycle(&mut self) -> Result<AssimilationCycleRecord> {
        let n = self.cycle;
        let dim = self.truth.len();

        // world: systematic tendency for this window, then the truth run
        let eta_true = self.truth_sampler.sample(n, &mut self.rng_truth_error)?;
        let truth_traj = self
            .cfg
            .dynamics
            .step(&self.truth, &eta_true, self.cfg.steps_per_window)?;
        let batches = generate_observations(
            &truth_traj,
            &self.cfg.operator,
            &self.cfg.r,
            &self.cfg.obs_times,
            n,
            &mut self.rng_obs,
        )?;
        for b in &batches {
            Self::hash_state(&mut self.obs_hasher, &b.values);
        }

        let weak = match &self.cfg.scheme {
            Scheme::Var4d { weak } => weak.as_ref(),
            Scheme::KalmanFilter => unreachable!(),
        };
        let eta_b = match weak {
            Some(w) => model_error_background(w.strategy, &self.eta_history, n, dim),
            None => State::zeros(dim),
        };

        let problem = WindowProblem {
            dynamics: &self.cfg.dynamics,
            steps: self.cfg.steps_per_window,
            x0_background: &self.background,
            b: &self.cfg.b,
            batches: &batches,
            h: &self.cfg.operator,
            r: &self.cfg.r,
            model_error: weak.map(|w| ModelErrorTerm {
                eta_background: eta_b.clone(),
                q: &w.q,
                active: &w.active,
            }),
        };
        let solution = problem.solve(self.cfg.solve_options)?;

        let departures = self.departures(&batches, &eta_b, &solution.eta_analysis, &solution)?;
        let record = AssimilationCycleRecord {
            cycle_index: n,
            background: self.background.clone(),
            analysis: solution.x0_analysis.clone(),
            increment: &solution.x0_analysis - &self.background,
            eta_analysis: solution.eta_analysis.clone(),
            eta_background: eta_b,
            departures,
            solver_stats: Some(solution.stats.clone()),
        };

        if weak.is_some() {
            self.eta_history.push(solution.eta_analysis.clone());
        }

        // next background: propagate the analysis, applying the scheme's own
        // tendency estimate (weak constraint) or nothing (strong constraint)
        let applied = if self.cfg.scheme.applies_correction() {
            solution.eta_analysis.clone()
        } else {
            State::zeros(dim)
        };
        let forecast = self
            .cfg
            .dynamics
            .step(&solution.x0_analysis, &applied, self.cfg.steps_per_window)?;
        self.background = forecast.final_state().clone();

        self.truth = truth_traj.final_state()
            + self.cfg.stochastic.sample(&mut self.rng_truth_noise);
        Self::hash_state(&mut self.truth_hasher, &self.truth);
        Ok(record)
    }

    fn departures(
        &self,
        batches: &[ObservationBatch],
        eta_b: &State,
        eta_a: &State,
        solution: &crate::assimilation::var4d::WindowSolution,
    ) -> Result<Vec<DeparturePair>> {
        let bg_traj =
            self.cfg
                .dynamics
                .step(&self.background, eta_b, self.cfg.steps_per_window)?;
        let an_traj =
            self.cfg
                .dynamics
                .step(&solution.x0_analysis, eta_a, self.cfg.steps_per_window)?;
        Ok(batches
            .iter()
            .map(|b| DeparturePair {
                time_within_window: b.time_within_window,
                background: &b.values
                    - self.cfg.operator.apply(&bg_traj.states[b.time_within_window]),
                analysis: &b.values
                    - self.cfg.operator.apply(&an_traj.states[b.time_within_window]),
            })
            .collect())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
