//! Residual batch statistics, one-sided EWMA charts and limit calibration.

pub mod calibrate;
pub mod ewma;
pub mod special;
pub mod stats;

pub use calibrate::{
    bootstrap_limits, calibrate, calibrate_pair, calibrate_ucl_bootstrap, calibrate_ucl_mc, quantile, ArlEstimate,
    CalibrationOptions, CalibrationOutcome, GeneratorSource, JointCalibration, ScoredBank,
    TrajectoryBank, TrajectorySource,
};
pub use ewma::{
    analytic_ucl, ewma_update, steady_state_ucl, two_chart_step, ChartId, ChartPair, ChartReading,
    EwmaChart, StatisticKind,
};
pub use special::{digamma, trigamma};
pub use stats::{log_s2_moments, log_variance, sample_variance, top_r_mean};
