//! Diagnostics: lagged autocorrelation and whiteness tests, lagged analysis
//! increment covariances (empirical and theoretical), the exact moment
//! oracle for linear systems, spatial length scales, and departure summaries.

pub mod autocorr;
pub mod departures;
pub mod laic;
pub mod oracle;
pub mod spatial;

pub use autocorr::{
    lagged_autocorrelation, lagged_autocovariance, whiteness_test, LagCovarianceSeries,
    SeriesKind, WhitenessReport,
};
pub use departures::{
    departure_statistics, increment_stddev_profile, mean_increment_by_phase, percent_change,
    DepartureStatistics,
};
pub use laic::{
    laic_matrix_ensemble, laic_matrix_time, theoretical_lag1_laic, theoretical_lagk_laic,
    IncrementVariable, LaicEstimator, LaicMatrix,
};
pub use oracle::{moment_oracle, EtaMoments, GainSpec, LinearSystemSpec, OracleMoments};
pub use spatial::{e_folding_length, spatial_autocorrelation};
