//! Ensemble model predictive control for a quadrotor.
//!
//! The controller propagates an ensemble of candidate rotor inputs through
//! the full nonlinear vehicle model, regresses the input-to-outcome response
//! from ensemble statistics, and nudges the whole ensemble toward a target
//! with a regularized Kalman-style update. No linearization or adjoint of the
//! dynamics is used anywhere; the plant enters only through simulation.
//!
//! Modules:
//! - [`ensemble`]: sample containers, Gaussian draws, covariance estimates
//! - [`dynamics`]: the Euler-angle quadrotor model
//! - [`integrate`]: fixed-step RK4 with zero-order-hold inputs
//! - [`controller`]: forecast, ensemble update, selection, resampling
//! - [`harness`]: identical-twin experiments, CSV/plot output, self checks

pub mod controller;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod integrate;

pub use controller::{
    control_cycle, forecast, gain_matrix, resample, response_matrix, select_control,
    trajectory_transform, update_direct, update_sqrt, ControllerConfig, CycleDiagnostics,
    CycleOutcome, GpEstimate, PerformanceSpec, Projection, SelectionRule, UpdateForm,
    UpdateOutcome,
};
pub use dynamics::{ControlInput, QuadParams, QuadState};
pub use ensemble::{Ensemble, GaussianSpec};
pub use error::{Error, Result};
pub use harness::{
    apply_config, cross_track_deviation, csv_string, emit_plots, parse_csv, run_terminal,
    run_validation, run_waypoints, write_csv, CheckReport, ExperimentConfig, RunRecord, RunRow,
};
pub use integrate::{rk4_step, rk4_step_with, simulate_zoh, IntegratorConfig};
