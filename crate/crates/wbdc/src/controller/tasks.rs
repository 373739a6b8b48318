//! Task synthesis: each task yields a Jacobian, its velocity product, and
//! a desired task-space acceleration from a PD servo law
//! `xdd_cmd = xdd_ref + kd (xd_ref - xd) + kp (x_ref - x)`.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};

use crate::model::{JacobianKind, RobotModel, RobotState};

use super::ControlError;

#[derive(Clone, Debug)]
pub enum TaskObjectiveKind {
    /// 6-D centroidal momentum rate: angular rows damp angular momentum,
    /// linear rows servo the CoM (scaled by total mass).
    CentroidalMomentum,
    /// 3-D CoM acceleration.
    Com,
    /// 3-D world position of a frame.
    FramePosition { frame: String },
    /// 3-D world orientation of a frame (reference is a unit quaternion).
    FrameOrientation { frame: String },
    /// Accelerations of all actuated joints.
    JointPosture,
}

impl TaskObjectiveKind {
    pub fn dim(&self, model: &RobotModel) -> usize {
        match self {
            TaskObjectiveKind::CentroidalMomentum => 6,
            TaskObjectiveKind::Com
            | TaskObjectiveKind::FramePosition { .. }
            | TaskObjectiveKind::FrameOrientation { .. } => 3,
            TaskObjectiveKind::JointPosture => model.num_actuated(),
        }
    }

    /// Length of the reference position vector (quaternion for orientation).
    pub fn ref_pos_dim(&self, model: &RobotModel) -> usize {
        match self {
            TaskObjectiveKind::FrameOrientation { .. } => 4,
            TaskObjectiveKind::CentroidalMomentum | TaskObjectiveKind::Com => 3,
            TaskObjectiveKind::FramePosition { .. } => 3,
            TaskObjectiveKind::JointPosture => model.num_actuated(),
        }
    }

    /// Length of the reference velocity/acceleration vectors.
    pub fn ref_vel_dim(&self, model: &RobotModel) -> usize {
        match self {
            TaskObjectiveKind::CentroidalMomentum | TaskObjectiveKind::Com => 3,
            TaskObjectiveKind::FramePosition { .. }
            | TaskObjectiveKind::FrameOrientation { .. } => 3,
            TaskObjectiveKind::JointPosture => model.num_actuated(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    /// 1 = first (highest-priority) task.
    pub priority: usize,
    pub kind: TaskObjectiveKind,
    pub kp: f64,
    pub kd: f64,
}

/// Reference trajectory sample for one task at one cycle.
#[derive(Clone, Debug)]
pub struct TaskRef {
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub acc: DVector<f64>,
}

impl TaskRef {
    /// Hold a position with zero reference velocity and acceleration.
    pub fn hold(pos: DVector<f64>, vel_dim: usize) -> Self {
        TaskRef {
            pos,
            vel: DVector::zeros(vel_dim),
            acc: DVector::zeros(vel_dim),
        }
    }
}

/// Task quantities resolved at one state: `J qddot + jdot_qdot = command`.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub name: String,
    pub j: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
    pub command: DVector<f64>,
}

/// Rotation error as a 3-vector: twice the vector part of the error
/// quaternion, sign-corrected to take the short way around.
fn orientation_error(target: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vector3<f64> {
    let err = target * current.inverse();
    let sign = if err.w >= 0.0 { 1.0 } else { -1.0 };
    2.0 * sign * err.imag()
}

pub fn synthesize_task(
    model: &RobotModel,
    state: &RobotState,
    spec: &TaskSpec,
    reference: &TaskRef,
) -> Result<TaskData, ControlError> {
    let bad = |msg: String| ControlError::BadTask {
        task: spec.name.clone(),
        msg,
    };
    if reference.pos.len() != spec.kind.ref_pos_dim(model)
        || reference.vel.len() != spec.kind.ref_vel_dim(model)
        || reference.acc.len() != spec.kind.ref_vel_dim(model)
    {
        return Err(bad(format!(
            "reference dims ({}, {}, {}) do not match the task kind",
            reference.pos.len(),
            reference.vel.len(),
            reference.acc.len()
        )));
    }
    let (kp, kd) = (spec.kp, spec.kd);
    match &spec.kind {
        TaskObjectiveKind::CentroidalMomentum => {
            let cm = model.centroidal_momentum(state)?;
            let mut command = DVector::zeros(6);
            // Damp angular momentum toward zero.
            for i in 0..3 {
                command[i] = -kd * cm.momentum[i];
            }
            let lin = cm.total_mass
                * (Vector3::new(reference.acc[0], reference.acc[1], reference.acc[2])
                    + kd * (Vector3::new(reference.vel[0], reference.vel[1], reference.vel[2])
                        - cm.com_velocity)
                    + kp * (Vector3::new(reference.pos[0], reference.pos[1], reference.pos[2])
                        - cm.com));
            for i in 0..3 {
                command[3 + i] = lin[i];
            }
            Ok(TaskData {
                name: spec.name.clone(),
                j: cm.matrix,
                jdot_qdot: cm.bias,
                command,
            })
        }
        TaskObjectiveKind::Com => {
            let cm = model.centroidal_momentum(state)?;
            let inv_m = 1.0 / cm.total_mass;
            let j = cm.matrix.rows(3, 3) * inv_m;
            let jdot_qdot = cm.bias.rows(3, 3) * inv_m;
            let mut command = DVector::zeros(3);
            for i in 0..3 {
                command[i] = reference.acc[i]
                    + kd * (reference.vel[i] - cm.com_velocity[i])
                    + kp * (reference.pos[i] - cm.com[i]);
            }
            Ok(TaskData {
                name: spec.name.clone(),
                j: j.into_owned(),
                jdot_qdot: jdot_qdot.into_owned(),
                command,
            })
        }
        TaskObjectiveKind::FramePosition { frame } => {
            let terms = model.frame_task_terms(state, frame, JacobianKind::Point3)?;
            let (j, jdot_qdot, p) = (terms.j, terms.jdot_qdot, terms.position);
            let v = &j * &state.qdot;
            let mut command = DVector::zeros(3);
            for i in 0..3 {
                command[i] = reference.acc[i]
                    + kd * (reference.vel[i] - v[i])
                    + kp * (reference.pos[i] - p[i]);
            }
            Ok(TaskData {
                name: spec.name.clone(),
                j,
                jdot_qdot,
                command,
            })
        }
        TaskObjectiveKind::FrameOrientation { frame } => {
            let terms = model.frame_task_terms(state, frame, JacobianKind::Full6)?;
            let j = terms.j.rows(0, 3).into_owned();
            let jdot_qdot = terms.jdot_qdot.rows(0, 3).into_owned();
            let current = terms.orientation;
            let target = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                reference.pos[0],
                reference.pos[1],
                reference.pos[2],
                reference.pos[3],
            ));
            let e = orientation_error(&target, &current);
            let omega = &j * &state.qdot;
            let mut command = DVector::zeros(3);
            for i in 0..3 {
                command[i] = reference.acc[i] + kd * (reference.vel[i] - omega[i]) + kp * e[i];
            }
            Ok(TaskData {
                name: spec.name.clone(),
                j,
                jdot_qdot,
                command,
            })
        }
        TaskObjectiveKind::JointPosture => {
            let n_act = model.num_actuated();
            let mut j = DMatrix::zeros(n_act, model.dof());
            for (row, &d) in model.actuated_dof_indices().iter().enumerate() {
                j[(row, d)] = 1.0;
            }
            let q_idx = model.actuated_q_indices();
            let mut command = DVector::zeros(n_act);
            for (row, (&d, &qi)) in model
                .actuated_dof_indices()
                .iter()
                .zip(q_idx.iter())
                .enumerate()
            {
                command[row] = reference.acc[row]
                    + kd * (reference.vel[row] - state.qdot[d])
                    + kp * (reference.pos[row] - state.q[qi]);
            }
            Ok(TaskData {
                name: spec.name.clone(),
                j,
                jdot_qdot: DVector::zeros(n_act),
                command,
            })
        }
    }
}
