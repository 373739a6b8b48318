//! The whole-body control cycle: internal-constraint projection,
//! contact-consistent acceleration, first-task injection, floating-base
//! span check, reaction-force distribution, prioritized hierarchy
//! recursion, and torque extraction.

mod tasks;

pub use tasks::{synthesize_task, TaskData, TaskObjectiveKind, TaskRef, TaskSpec};

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::constraints::{
    augment_cones, internal_projection, ConeMatrix, ConstraintError, ContactSpec,
    InternalConstraintSpec, InternalProjection,
};
use crate::linalg::{self, LinalgError, PinvConfig};
use crate::model::{DynamicsTerms, ModelError, RobotModel, RobotState};
use crate::qp::{
    build_force_only_qp, build_wbdc_qp, qp_solve, AssemblyError, FirstTaskQp, QpError,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("model stage: {0}")]
    Model(#[from] ModelError),
    #[error("constraint stage: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("linear algebra: {0}")]
    Linalg(#[from] LinalgError),
    #[error("QP assembly stage: {0}")]
    Assembly(#[from] AssemblyError),
    #[error("reaction-force QP stage: {0}")]
    Qp(#[from] QpError),
    #[error(
        "first task does not span the floating base: rank(S_f A N) = {residual_rank}, \
         the floating-base span condition (first task must control all six base directions) failed"
    )]
    FirstTaskDoesNotSpanBase { residual_rank: usize },
    #[error("torque extraction residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    TorqueInconsistency { residual: f64, tolerance: f64 },
    #[error("task `{task}`: {msg}")]
    BadTask { task: String, msg: String },
}

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub pinv: PinvConfig,
    /// Reaction-force weight (Q1 block).
    pub q1: f64,
    /// Relaxation weight (Q2 block); keep `q2 >> q1`.
    pub q2: f64,
    /// Relative tolerance for the floating-base span rank check.
    pub span_tolerance: f64,
    /// Infinity-norm bound on the torque-extraction residual.
    pub torque_tolerance: f64,
    pub max_qp_iterations: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            pinv: PinvConfig::default(),
            q1: 1.0,
            q2: 100.0,
            span_tolerance: 1e-6,
            torque_tolerance: 1e-6,
            max_qp_iterations: 500,
        }
    }
}

/// Everything derived from the constraint set at one state, before any
/// task enters: dynamics, internal projection, contact Jacobians, the
/// contact+internal null-space projector, and the contact-consistent
/// acceleration.
#[derive(Clone, Debug)]
pub struct ConstraintContext {
    pub terms: DynamicsTerms,
    pub internal: InternalProjection,
    /// Stacked contact Jacobian (zero rows when no contacts).
    pub j_contact: DMatrix<f64>,
    pub jdot_qdot_contact: DVector<f64>,
    /// Null projector of internal constraints and contacts combined.
    pub n_ci: DMatrix<f64>,
    /// Acceleration satisfying both constraint sets with no task input.
    pub qddot_ci: DVector<f64>,
    pub cones: ConeMatrix,
}

pub fn build_context(
    model: &RobotModel,
    state: &RobotState,
    internals: &[InternalConstraintSpec],
    contacts: &[ContactSpec],
    cfg: &ControllerConfig,
) -> Result<ConstraintContext, ControlError> {
    model.validate_state(state)?;
    let terms = model.dynamics_terms(state)?;
    let internal = internal_projection(model, state, &terms, internals, &cfg.pinv)?;

    let m = model.dof();
    let n_rows: usize = contacts.iter().map(|c| c.jacobian_kind().rows()).sum();
    let mut j_contact = DMatrix::zeros(n_rows, m);
    let mut jdot_qdot_contact = DVector::zeros(n_rows);
    let mut r0 = 0;
    for c in contacts {
        let kind = c.jacobian_kind();
        let j = model.frame_jacobian(state, &c.frame, kind)?;
        let jd = model.jdot_qdot(state, &c.frame, kind)?;
        j_contact.view_mut((r0, 0), (kind.rows(), m)).copy_from(&j);
        jdot_qdot_contact.rows_mut(r0, kind.rows()).copy_from(&jd);
        r0 += kind.rows();
    }

    // Acceleration consistent with the internal constraints alone.
    let qddot0 = if internal.j_int.nrows() > 0 {
        let jbar_int = linalg::dyn_consistent_inv(&internal.j_int, &internal.a_inv, &cfg.pinv)?;
        jbar_int * -&internal.jdot_qdot
    } else {
        DVector::zeros(m)
    };

    let (n_ci, qddot_ci) = if n_rows > 0 {
        let j_cp = &j_contact * &internal.n_int;
        if linalg::numerical_rank(&j_cp, cfg.pinv.singular_value_tolerance)? < n_rows {
            log::warn!(
                "contact jacobian rank collapsed below {n_rows} rows; continuing with pseudoinverse"
            );
        }
        let floor = linalg::projected_task_floor(&j_contact, &internal.a_inv, &cfg.pinv)?;
        let jbar_cp = &internal.n_int
            * linalg::dyn_consistent_inv_floored(&j_cp, &internal.a_inv, &cfg.pinv, floor)?;
        // Dynamically consistent projectors for the same mass matrix
        // compose by subtraction when the later Jacobian is pre-projected.
        let n_ci = &internal.n_int - &jbar_cp * &j_cp;
        let qddot_ci =
            &qddot0 + jbar_cp * (-&jdot_qdot_contact - &j_contact * &qddot0);
        (n_ci, qddot_ci)
    } else {
        (internal.n_int.clone(), qddot0)
    };

    let cones = augment_cones(contacts)?;

    Ok(ConstraintContext {
        terms,
        internal,
        j_contact,
        jdot_qdot_contact,
        n_ci,
        qddot_ci,
        cones,
    })
}

/// First-task quantities needed by the span check and the QP.
#[derive(Clone, Debug)]
struct FirstLevel {
    data: TaskData,
    jbar1p: DMatrix<f64>,
    /// Acceleration after first-task injection, zero relaxation.
    qddot1: DVector<f64>,
    /// `N_prec(2)`: null projector of internals, contacts, and task 1.
    n_prec: DMatrix<f64>,
}

fn first_level(
    ctx: &ConstraintContext,
    data: TaskData,
    cfg: &ControllerConfig,
) -> Result<FirstLevel, ControlError> {
    let j1p = &data.j * &ctx.n_ci;
    let floor = linalg::projected_task_floor(&data.j, &ctx.internal.a_inv, &cfg.pinv)?;
    // Sandwiching with the preceding projector is the identity in exact
    // arithmetic (N A^-1 N^T = A^-1 N^T) but pins the injection numerically
    // inside the constraint null space, preserving the floating-base and
    // contact balance against round-off amplification.
    let jbar1p = &ctx.n_ci
        * linalg::dyn_consistent_inv_floored(&j1p, &ctx.internal.a_inv, &cfg.pinv, floor)?;
    let task_err = &data.command - &data.jdot_qdot - &data.j * &ctx.qddot_ci;
    let qddot1 = &ctx.qddot_ci + &jbar1p * task_err;
    let n_prec = &ctx.n_ci - &jbar1p * &j1p;
    Ok(FirstLevel {
        data,
        jbar1p,
        qddot1,
        n_prec,
    })
}

/// Rank of the floating-base rows of `A N_prec(2)`: zero means the
/// constraint set plus the first task control every base direction.
pub fn check_floating_base_span(
    model: &RobotModel,
    terms: &DynamicsTerms,
    n_prec: &DMatrix<f64>,
    tolerance: f64,
) -> Result<usize, ControlError> {
    let nf = model.floating_dim();
    if nf == 0 {
        return Ok(0);
    }
    let s_f_a = terms.a.rows(0, nf).into_owned();
    let sfan = &s_f_a * n_prec;
    // Measure rank against the scale of the unprojected floating rows, so a
    // numerically-zero product counts as rank zero.
    let scale = s_f_a.norm();
    let sv = sfan.singular_values();
    Ok(sv.iter().filter(|s| **s > tolerance * scale).count())
}

/// Reaction forces and first-task relaxation.
///
/// Solves the unrelaxed force problem first; only if the cones make it
/// infeasible is the relaxed problem solved, so `delta` is exactly zero
/// whenever zero relaxation is admissible.
fn solve_reaction_forces(
    input: &FirstTaskQp,
    max_iterations: usize,
) -> Result<(DVector<f64>, DVector<f64>, usize, bool), ControlError> {
    let n_delta = input.jbar1p.ncols();
    let force_only = build_force_only_qp(input)?;
    match qp_solve(&force_only, max_iterations) {
        Ok(sol) => Ok((sol.x, DVector::zeros(n_delta), sol.iterations, true)),
        Err(QpError::Infeasible { .. } | QpError::InconsistentEqualities { .. }) => {
            let (relaxed, layout) = build_wbdc_qp(input)?;
            let sol = qp_solve(&relaxed, max_iterations)?;
            let (f, delta) = layout.split(&sol.x);
            Ok((f, delta, sol.iterations, false))
        }
        Err(e) => Err(ControlError::Qp(e)),
    }
}

/// Recursion over priorities 2..k: each task is resolved in the null
/// space of everything above it. The velocity product uses the raw task
/// Jacobian rate, never the derivative of the projected Jacobian.
fn lower_levels(
    ctx: &ConstraintContext,
    mut qddot: DVector<f64>,
    mut n_prec: DMatrix<f64>,
    tasks: &[TaskData],
    cfg: &ControllerConfig,
) -> Result<DVector<f64>, ControlError> {
    for data in tasks {
        let jkp = &data.j * &n_prec;
        let floor = linalg::projected_task_floor(&data.j, &ctx.internal.a_inv, &cfg.pinv)?;
        // Same numerical sandwich as the first level: keep the correction
        // inside the null space of everything above this task.
        let jbar_kp = &n_prec
            * linalg::dyn_consistent_inv_floored(&jkp, &ctx.internal.a_inv, &cfg.pinv, floor)?;
        let err = &data.command - &data.jdot_qdot - &data.j * &qddot;
        qddot += &jbar_kp * err;
        n_prec -= jbar_kp * jkp;
    }
    Ok(qddot)
}

/// Torques realizing `qddot` and `reaction_forces` through the actuated
/// joints, least squares over the internal-constraint-projected dynamics.
pub fn compute_torque(
    model: &RobotModel,
    ctx: &ConstraintContext,
    qddot: &DVector<f64>,
    reaction_forces: &DVector<f64>,
    cfg: &ControllerConfig,
) -> Result<DVector<f64>, ControlError> {
    let m = model.dof();
    let nf = model.floating_dim();
    let rhs_full = &ctx.terms.a * qddot + &ctx.terms.b + &ctx.terms.g
        - ctx.j_contact.transpose() * reaction_forces;
    let projected = ctx.internal.n_int.transpose() * rhs_full;
    let reduced = projected.rows(nf, m - nf).into_owned();
    let pinv_map = linalg::svd_pinv(&ctx.internal.actuation_map, &cfg.pinv)?;
    let tau = pinv_map * &reduced;
    let mut residual = (&ctx.internal.actuation_map * &tau - reduced).amax();
    if nf > 0 {
        // Unactuated rows must already balance (reaction forces close them).
        residual = residual.max(projected.rows(0, nf).amax());
    }
    if residual > cfg.torque_tolerance {
        return Err(ControlError::TorqueInconsistency {
            residual,
            tolerance: cfg.torque_tolerance,
        });
    }
    Ok(tau)
}

#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub qp_iterations: usize,
    pub solve_time: Duration,
    /// `|J qddot + jdot_qdot - command|_2` per priority level.
    pub task_residuals: Vec<f64>,
    /// Whether the unrelaxed force problem was feasible (`delta = 0`).
    pub unrelaxed_feasible: bool,
}

#[derive(Clone, Debug)]
pub struct ControlOutput {
    pub tau: DVector<f64>,
    /// Stacked per-contact wrenches, contact order.
    pub reaction_forces: DVector<f64>,
    /// First-task relaxation.
    pub delta: DVector<f64>,
    pub qddot: DVector<f64>,
    pub diagnostics: Diagnostics,
}

fn checked_tasks<'a>(
    model: &RobotModel,
    state: &RobotState,
    tasks: &'a [(TaskSpec, TaskRef)],
) -> Result<Vec<TaskData>, ControlError> {
    if tasks.is_empty() {
        return Err(ControlError::BadTask {
            task: "<none>".into(),
            msg: "at least one task is required".into(),
        });
    }
    for (i, (spec, _)) in tasks.iter().enumerate() {
        if spec.priority != i + 1 {
            return Err(ControlError::BadTask {
                task: spec.name.clone(),
                msg: format!(
                    "priorities must be contiguous from 1; position {} has priority {}",
                    i + 1,
                    spec.priority
                ),
            });
        }
    }
    tasks
        .iter()
        .map(|(spec, r)| synthesize_task(model, state, spec, r))
        .collect()
}

/// Resolves the task hierarchy to a generalized acceleration without the
/// reaction-force solve (relaxation fixed at zero). Suitable for
/// fixed-base use and for inspecting the bare hierarchy.
pub fn resolve_accelerations(
    model: &RobotModel,
    state: &RobotState,
    ctx: &ConstraintContext,
    tasks: &[(TaskSpec, TaskRef)],
    cfg: &ControllerConfig,
) -> Result<(DVector<f64>, Vec<f64>), ControlError> {
    let data = checked_tasks(model, state, tasks)?;
    let first = first_level(ctx, data[0].clone(), cfg)?;
    let qddot = lower_levels(ctx, first.qddot1.clone(), first.n_prec.clone(), &data[1..], cfg)?;
    let residuals = data
        .iter()
        .map(|d| (&d.j * &qddot + &d.jdot_qdot - &d.command).norm())
        .collect();
    Ok((qddot, residuals))
}

/// One full control cycle.
pub fn wbdc_step(
    model: &RobotModel,
    state: &RobotState,
    tasks: &[(TaskSpec, TaskRef)],
    contacts: &[ContactSpec],
    internals: &[InternalConstraintSpec],
    cfg: &ControllerConfig,
) -> Result<ControlOutput, ControlError> {
    let t0 = Instant::now();
    let ctx = build_context(model, state, internals, contacts, cfg)?;
    let data = checked_tasks(model, state, tasks)?;
    let first = first_level(&ctx, data[0].clone(), cfg)?;

    let nf = model.floating_dim();
    if nf > 0 {
        let rank = check_floating_base_span(model, &ctx.terms, &first.n_prec, cfg.span_tolerance)?;
        if rank > 0 {
            return Err(ControlError::FirstTaskDoesNotSpanBase {
                residual_rank: rank,
            });
        }
    }

    let n_forces = ctx.j_contact.nrows();
    let n_delta = first.data.j.nrows();
    let (reaction_forces, delta, qp_iterations, unrelaxed_feasible) =
        if nf > 0 && n_forces > 0 {
            let input = FirstTaskQp {
                s_f_a: ctx.terms.a.rows(0, nf).into_owned(),
                s_f_bias: (&ctx.terms.b + &ctx.terms.g).rows(0, nf).into_owned(),
                j_contact: ctx.j_contact.clone(),
                qddot1: first.qddot1.clone(),
                jbar1p: first.jbar1p.clone(),
                cones: ctx.cones.clone(),
                q1: cfg.q1,
                q2: cfg.q2,
            };
            solve_reaction_forces(&input, cfg.max_qp_iterations)?
        } else {
            (DVector::zeros(n_forces), DVector::zeros(n_delta), 0, true)
        };

    // Substitute the relaxation back into the first-task injection.
    let qddot1 = &first.qddot1 + &first.jbar1p * &delta;
    let qddot = lower_levels(&ctx, qddot1, first.n_prec.clone(), &data[1..], cfg)?;

    let tau = compute_torque(model, &ctx, &qddot, &reaction_forces, cfg)?;

    let task_residuals = data
        .iter()
        .map(|d| (&d.j * &qddot + &d.jdot_qdot - &d.command).norm())
        .collect();

    Ok(ControlOutput {
        tau,
        reaction_forces,
        delta,
        qddot,
        diagnostics: Diagnostics {
            qp_iterations,
            solve_time: t0.elapsed(),
            task_residuals,
            unrelaxed_feasible,
        },
    })
}
