//! Floating-base rigid-body dynamics for kinematic trees.
//!
//! A [`RobotModel`] is loaded from a JSON description (see [`load_model`])
//! and evaluated at a [`RobotState`] to produce the mass matrix,
//! Coriolis/centrifugal and gravity forces, frame Jacobians, Jacobian
//! velocity products, the centroidal momentum matrix, and a forward
//! dynamics oracle.
//!
//! Conventions:
//! - Generalized position `q`: floating-base position (3), unit quaternion
//!   `(w, x, y, z)`, then joint values. Fixed-base models have joints only.
//! - Generalized velocity `qdot`: world-frame angular velocity (3), world
//!   velocity of the base-frame origin (3), then joint rates. The floating
//!   block comes first, so the floating-base selection takes the first six
//!   rows of the mass matrix.

mod algo;
mod parse;

pub use parse::load_model;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("model parse error in `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("model topology error: {0}")]
    Topology(String),
    #[error("frame not found: {0}")]
    FrameNotFound(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Floating,
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug)]
pub struct Body {
    pub name: String,
    pub mass: f64,
    /// Center of mass offset in the body frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, body frame.
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Parent body index, `None` for the world.
    pub parent: Option<usize>,
    pub child: usize,
    /// Fixed transform from the parent body frame to the joint frame.
    pub origin: Isometry3<f64>,
    /// Motion axis in the joint frame (ignored for floating joints).
    pub axis: Unit<Vector3<f64>>,
    /// First velocity index of this joint.
    pub dof_start: usize,
    /// First position index of this joint.
    pub q_start: usize,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
}

/// Immutable robot description; shareable across threads after load.
#[derive(Clone, Debug)]
pub struct RobotModel {
    pub bodies: Vec<Body>,
    /// Tree order: a joint's parent body is produced by an earlier joint.
    pub joints: Vec<Joint>,
    pub frames: Vec<Frame>,
    pub gravity: Vector3<f64>,
    /// Velocity indices of actuated joints, in actuation order.
    pub(crate) actuated_dofs: Vec<usize>,
    pub(crate) dof: usize,
    pub(crate) nq: usize,
    pub(crate) floating: bool,
    /// Joint index that produces each body.
    pub(crate) body_joint: Vec<usize>,
    /// Ancestor dof indices (root to leaf) per body.
    pub(crate) body_path: Vec<Vec<usize>>,
}

impl RobotModel {
    /// Velocity-space dimension `m`.
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Position-vector length (`m + 1` for floating models).
    pub fn nq(&self) -> usize {
        self.nq
    }

    /// 6 for floating-base models, 0 for fixed-base ones.
    pub fn floating_dim(&self) -> usize {
        if self.floating {
            6
        } else {
            0
        }
    }

    pub fn num_actuated(&self) -> usize {
        self.actuated_dofs.len()
    }

    /// Velocity indices of the actuated joints, in actuation order.
    pub fn actuated_dof_indices(&self) -> &[usize] {
        &self.actuated_dofs
    }

    /// Position indices of the actuated joints, in actuation order.
    pub fn actuated_q_indices(&self) -> Vec<usize> {
        let shift = self.nq - self.dof;
        self.actuated_dofs.iter().map(|d| d + shift).collect()
    }

    pub fn frame_index(&self, name: &str) -> Result<usize, ModelError> {
        self.frames
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| ModelError::FrameNotFound(name.to_string()))
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Neutral state: identity base pose, zero joints, zero velocity.
    pub fn neutral_state(&self) -> RobotState {
        let mut q = DVector::zeros(self.nq);
        if self.floating {
            q[3] = 1.0; // quaternion w
        }
        RobotState {
            q,
            qdot: DVector::zeros(self.dof),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl RobotState {
    pub fn base_pose(&self) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let p = Vector3::new(self.q[0], self.q[1], self.q[2]);
        let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.q[3], self.q[4], self.q[5], self.q[6],
        ));
        (p, quat)
    }
}

/// Frame quantities needed by a task servo, from one kinematics pass.
#[derive(Clone, Debug)]
pub struct FrameTaskTerms {
    pub j: DMatrix<f64>,
    /// `d/dt(J) qdot`.
    pub jdot_qdot: DVector<f64>,
    /// World position of the frame point.
    pub position: Vector3<f64>,
    /// World orientation of the frame's body.
    pub orientation: UnitQuaternion<f64>,
}

/// Mass matrix and generalized bias forces at one state.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    /// `m x m` mass matrix.
    pub a: DMatrix<f64>,
    /// Coriolis/centrifugal generalized force.
    pub b: DVector<f64>,
    /// Gravity generalized force.
    pub g: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianKind {
    /// 3 rows: world linear velocity of the frame point.
    Point3,
    /// 6 rows: world angular velocity, then linear velocity of the frame point.
    Full6,
}

impl JacobianKind {
    pub fn rows(self) -> usize {
        match self {
            JacobianKind::Point3 => 3,
            JacobianKind::Full6 => 6,
        }
    }
}

/// Centroidal momentum quantities at one state.
#[derive(Clone, Debug)]
pub struct CentroidalMomentum {
    /// 6 x m matrix mapping `qdot` to (angular, linear) momentum at the CoM.
    pub matrix: DMatrix<f64>,
    /// `d/dt(A_G) qdot`: momentum rate at zero generalized acceleration.
    pub bias: DVector<f64>,
    /// Current centroidal momentum `A_G qdot`.
    pub momentum: DVector<f64>,
    pub com: Vector3<f64>,
    pub com_velocity: Vector3<f64>,
    pub total_mass: f64,
}
