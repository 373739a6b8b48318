//! Constrained forward dynamics and the semi-implicit integrator.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{internal_projection, InternalConstraintSpec};
use crate::linalg::{self, PinvConfig};
use crate::model::{JacobianKind, ModelError, RobotModel, RobotState};

use super::SimError;

/// A contact the simulator currently holds rigid.
#[derive(Clone, Debug)]
pub struct ActiveContact {
    pub frame: String,
    /// `Point3` for point contacts, `Full6` for surface patches.
    pub kind: JacobianKind,
}

/// Result of one constrained-dynamics evaluation.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub state: RobotState,
    /// Constraint forces for the contacts that remained engaged, stacked
    /// in the order of `contacts` minus released ones.
    pub contact_forces: DVector<f64>,
    /// Frames released by the unilateral check this step.
    pub released: Vec<String>,
}

struct ConstrainedSystem {
    qddot: DVector<f64>,
    /// Multipliers for [contact rows..., internal rows...].
    lambda: DVector<f64>,
    contact_rows: usize,
}

fn solve_constrained(
    model: &RobotModel,
    state: &RobotState,
    tau: &DVector<f64>,
    contacts: &[ActiveContact],
    internals: &[InternalConstraintSpec],
    pinv: &PinvConfig,
) -> Result<ConstrainedSystem, SimError> {
    let m = model.dof();
    let terms = model.dynamics_terms(state)?;
    let proj = internal_projection(model, state, &terms, internals, pinv)
        .map_err(|e| SimError::Invalid {
            field: "internal_constraints".into(),
            msg: e.to_string(),
        })?;
    let a_inv = proj.a_inv;

    let contact_rows: usize = contacts.iter().map(|c| c.kind.rows()).sum();
    let total_rows = contact_rows + proj.j_int.nrows();
    let mut j = DMatrix::zeros(total_rows, m);
    let mut jdqd = DVector::zeros(total_rows);
    let mut r0 = 0;
    for c in contacts {
        let rows = c.kind.rows();
        j.view_mut((r0, 0), (rows, m))
            .copy_from(&model.frame_jacobian(state, &c.frame, c.kind)?);
        jdqd
            .rows_mut(r0, rows)
            .copy_from(&model.jdot_qdot(state, &c.frame, c.kind)?);
        r0 += rows;
    }
    if proj.j_int.nrows() > 0 {
        j.view_mut((r0, 0), (proj.j_int.nrows(), m))
            .copy_from(&proj.j_int);
        jdqd
            .rows_mut(r0, proj.j_int.nrows())
            .copy_from(&proj.jdot_qdot);
    }

    let mut rhs_free = -&terms.b - &terms.g;
    for (i, &d) in model.actuated_dof_indices().iter().enumerate() {
        rhs_free[d] += tau[i];
    }
    let qddot_free = &a_inv * &rhs_free;

    let lambda = if total_rows > 0 {
        let jajt = &j * &a_inv * j.transpose();
        let rhs = -(&jdqd + &j * &qddot_free);
        linalg::svd_pinv(&jajt, pinv).map_err(|e| SimError::Invalid {
            field: "contact solve".into(),
            msg: e.to_string(),
        })? * rhs
    } else {
        DVector::zeros(0)
    };
    let qddot = qddot_free + &a_inv * j.transpose() * &lambda;
    Ok(ConstrainedSystem {
        qddot,
        lambda,
        contact_rows,
    })
}

/// Generalized acceleration under actuation, rigid contacts, and internal
/// constraints, with the resulting contact forces.
///
/// This is the physics oracle for round-trip checks: it inverts nothing
/// the controller computed, only the model and the active constraint set.
pub fn constrained_accel(
    model: &RobotModel,
    state: &RobotState,
    tau: &DVector<f64>,
    contacts: &[ActiveContact],
    internals: &[InternalConstraintSpec],
    pinv: &PinvConfig,
) -> Result<(DVector<f64>, DVector<f64>), SimError> {
    let sys = solve_constrained(model, state, tau, contacts, internals, pinv)?;
    Ok((sys.qddot, sys.lambda.rows(0, sys.contact_rows).into_owned()))
}

/// Index of the vertical-force entry within one contact's multiplier block.
fn fz_index(kind: JacobianKind) -> usize {
    match kind {
        JacobianKind::Point3 => 2,
        JacobianKind::Full6 => 5,
    }
}

/// One semi-implicit Euler step of the constrained dynamics.
///
/// Contacts demanding a pulling vertical force (`f_z < 0`) are released
/// for this step (and reported, so the caller can log the event). After
/// the velocity update, the velocity is projected back onto the
/// constraint manifold to prevent drift of contact-point velocities.
pub fn integrate_step(
    model: &RobotModel,
    state: &RobotState,
    tau: &DVector<f64>,
    contacts: &[ActiveContact],
    internals: &[InternalConstraintSpec],
    dt: f64,
    pinv: &PinvConfig,
) -> Result<StepResult, SimError> {
    if !(dt > 0.0 && dt <= 5e-3) {
        return Err(SimError::Invalid {
            field: "dt".into(),
            msg: format!("dt must be in (0, 0.005], got {dt}"),
        });
    }
    if tau.len() != model.num_actuated() {
        return Err(SimError::Invalid {
            field: "tau".into(),
            msg: format!(
                "expected {} torques, got {}",
                model.num_actuated(),
                tau.len()
            ),
        });
    }

    let mut engaged: Vec<ActiveContact> = contacts.to_vec();
    let mut released: Vec<String> = Vec::new();
    let sys = loop {
        let sys = solve_constrained(model, state, tau, &engaged, internals, pinv)?;
        // Unilateral check on the vertical force of each engaged contact.
        let mut drop_idx = None;
        let mut r0 = 0;
        for (i, c) in engaged.iter().enumerate() {
            let fz = sys.lambda[r0 + fz_index(c.kind)];
            if fz < -1e-9 {
                drop_idx = Some(i);
                break;
            }
            r0 += c.kind.rows();
        }
        match drop_idx {
            Some(i) => released.push(engaged.remove(i).frame),
            None => break sys,
        }
    };

    let qdot = &state.qdot + &sys.qddot * dt;
    let mut q = model.advance_position(&state.q, &qdot, dt);
    if model.floating_dim() == 6 {
        // Guard the unit-quaternion invariant against accumulation.
        let norm = (q[3] * q[3] + q[4] * q[4] + q[5] * q[5] + q[6] * q[6]).sqrt();
        if norm <= 0.0 {
            return Err(SimError::Model(ModelError::InvalidState(
                "base quaternion collapsed to zero".into(),
            )));
        }
        for i in 3..7 {
            q[i] /= norm;
        }
    }

    // Project the velocity onto the constraint manifold evaluated at the
    // new configuration, so constraint-point velocities stay exactly zero
    // step to step instead of drifting with the Jacobian.
    let mut next = RobotState { q, qdot };
    if !engaged.is_empty() || !internals.is_empty() {
        let terms = model.dynamics_terms(&next)?;
        let proj = internal_projection(model, &next, &terms, internals, pinv).map_err(|e| {
            SimError::Invalid {
                field: "internal_constraints".into(),
                msg: e.to_string(),
            }
        })?;
        let contact_rows: usize = engaged.iter().map(|c| c.kind.rows()).sum();
        let total_rows = contact_rows + proj.j_int.nrows();
        let mut j = DMatrix::zeros(total_rows, model.dof());
        let mut r0 = 0;
        for c in &engaged {
            let rows = c.kind.rows();
            j.view_mut((r0, 0), (rows, model.dof()))
                .copy_from(&model.frame_jacobian(&next, &c.frame, c.kind)?);
            r0 += rows;
        }
        if proj.j_int.nrows() > 0 {
            j.view_mut((r0, 0), (proj.j_int.nrows(), model.dof()))
                .copy_from(&proj.j_int);
        }
        let jajt = &j * &proj.a_inv * j.transpose();
        let pinv_jajt = linalg::svd_pinv(&jajt, pinv).map_err(|e| SimError::Invalid {
            field: "velocity projection".into(),
            msg: e.to_string(),
        })?;
        let correction = &proj.a_inv * j.transpose() * (pinv_jajt * (&j * &next.qdot));
        next.qdot -= correction;
    }

    Ok(StepResult {
        state: next,
        contact_forces: sys.lambda.rows(0, sys.contact_rows).into_owned(),
        released,
    })
}
