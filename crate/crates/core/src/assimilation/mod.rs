//! Analysis updates: Kalman filter with covariance recursion, strong- and
//! weak-constraint 4DVar, and the model-error cycling strategies.

pub mod cycling;
pub mod kalman;
pub mod var4d;

pub use cycling::{
    model_error_background, AssimilationCycleRecord, CycleEngine, CyclingStrategy, DeparturePair,
    EngineConfig, EngineRngs, Scheme, WeakConstraint,
};
pub use kalman::{kalman_gain, kf_analysis_update, kf_forecast_update, KfState};
pub use var4d::{ModelErrorTerm, SolveOptions, SolverStats, WindowProblem, WindowSolution};
