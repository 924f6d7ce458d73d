//! Filtering, retrofiltering and smoothing of a squeezed cavity mode
//! monitored by two homodyne detectors.
//!
//! [`system_model`] builds the linear model, [`trajectory`] simulates
//! records, [`estimation`] solves the covariance equations and tracks the
//! means, [`metrics`] scores the estimates and [`sweep`] runs parameter
//! scans. File formats live in [`io`].

pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod sweep;
pub mod system_model;
pub mod trajectory;

pub use error::{Error, Result};
pub use estimation::{
    estimate, run_filter, run_retrofilter, run_true_filter, smooth, solve_riccati, Channels,
    RetroTrajectory, RiccatiSolution, SmootherOutput,
};
pub use linalg::{Mat2, Vec2};
pub use metrics::{
    EmpiricalMetrics, Estimate, MetricsReport, Recoveries, RecoveryKind, StateMetrics,
};
pub use sweep::{AngleGrid, Mode, MonteCarloSettings, SweepConfig, SweepResult};
pub use system_model::{build_model, efficiencies, EffectiveParams, ModelMatrices, SystemParams};
pub use trajectory::{
    simulate_true, unconditional_cov, Conditioning, MeasurementRecord, SimSettings, StateTrajectory,
};
