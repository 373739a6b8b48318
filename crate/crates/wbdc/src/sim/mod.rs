//! Closed-loop validation: a rigid-contact simulator, scenario
//! definitions, and trace recording.
//!
//! Contacts are enforced as acceleration-level constraints (a constraint
//! solve, not penalty springs) so the simulator's contact semantics match
//! the controller's zero-contact-acceleration assumption. Engagement
//! follows the scenario script; there is no collision detection.

mod integrate;
mod run;
mod scenario;

pub use integrate::{constrained_accel, integrate_step, ActiveContact, StepResult};
pub use run::{controller_config, run_scenario, RunOutcome};
pub use scenario::{
    load_scenario, parse_scenario, ContactPhase, Scenario, ScenarioContact, ScenarioTask,
    Trajectory,
};

use nalgebra::DVector;
use thiserror::Error;

use crate::controller::ControlError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario error in `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("scenario I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("controller failed at t = {t:.4} s: {source}")]
    Control { t: f64, source: ControlError },
}

/// A contact released by the unilateral check during one step.
#[derive(Clone, Debug)]
pub struct ContactEvent {
    pub t: f64,
    pub frame: String,
}

/// One recorded control cycle.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub tau: DVector<f64>,
    /// Reaction forces in the full scenario contact layout (zeros for
    /// contacts inactive at this cycle).
    pub forces: DVector<f64>,
    pub delta: DVector<f64>,
    /// Per-priority task residuals in scenario task order (zero when the
    /// task is outside its activity window).
    pub residuals: Vec<f64>,
    pub solve_ms: f64,
}

/// A full scenario run: per-cycle records plus contact bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub release_events: Vec<ContactEvent>,
    /// `(frame, wrench dimension)` for each scenario contact, defining the
    /// layout of [`TraceRecord::forces`].
    pub force_layout: Vec<(String, usize)>,
    /// Scenario task names, defining the layout of residual columns.
    pub task_names: Vec<String>,
}
