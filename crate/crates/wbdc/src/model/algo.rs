//! Kinematics and dynamics evaluation.
//!
//! All spatial quantities live in world coordinates referenced to the
//! world origin: a motion vector is `(angular, linear-at-origin)` and a
//! force vector is `(moment-about-origin, force)`. With that choice the
//! motion subspace of every joint is a plain 6-vector, composite-rigid-body
//! mass-matrix assembly needs no frame transforms, and bias forces come out
//! of a single sweep.

use nalgebra::{
    DMatrix, DVector, Matrix3, Matrix6, Rotation3, UnitQuaternion, Vector3, Vector6,
};

use super::{
    CentroidalMomentum, DynamicsTerms, FrameTaskTerms, JacobianKind, JointKind, ModelError, RobotModel, RobotState,
};

type V6 = Vector6<f64>;

fn ang(v: &V6) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn lin(v: &V6) -> Vector3<f64> {
    Vector3::new(v[3], v[4], v[5])
}

fn v6(a: Vector3<f64>, l: Vector3<f64>) -> V6 {
    Vector6::new(a[0], a[1], a[2], l[0], l[1], l[2])
}

/// Motion cross product `v x m`.
fn cross_motion(v: &V6, m: &V6) -> V6 {
    let (va, vl) = (ang(v), lin(v));
    let (ma, ml) = (ang(m), lin(m));
    v6(va.cross(&ma), va.cross(&ml) + vl.cross(&ma))
}

/// Force cross product `v x* f`.
fn cross_force(v: &V6, f: &V6) -> V6 {
    let (va, vl) = (ang(v), lin(v));
    let (fa, fl) = (ang(f), lin(f));
    v6(va.cross(&fa) + vl.cross(&fl), va.cross(&fl))
}

/// Spatial inertia of a body at the world origin.
fn spatial_inertia(mass: f64, com_world: &Vector3<f64>, inertia_world: &Matrix3<f64>) -> Matrix6<f64> {
    let cx = com_world.cross_matrix();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(inertia_world - cx * cx * mass));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * mass));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-cx * mass));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    out
}

/// Per-body world kinematics.
pub(crate) struct BodyKin {
    pub rot: Rotation3<f64>,
    pub pos: Vector3<f64>,
    /// Spatial velocity at the world origin.
    pub vel: V6,
    /// Spatial acceleration at zero generalized acceleration.
    pub bias_acc: V6,
}

pub(crate) struct Kinematics {
    pub bodies: Vec<BodyKin>,
    /// Motion subspace column per velocity index.
    pub cols: Vec<V6>,
}

impl RobotModel {
    pub fn validate_state(&self, state: &RobotState) -> Result<(), ModelError> {
        if state.q.len() != self.nq || state.qdot.len() != self.dof {
            return Err(ModelError::InvalidState(format!(
                "expected q of length {} and qdot of length {}, got {} and {}",
                self.nq,
                self.dof,
                state.q.len(),
                state.qdot.len()
            )));
        }
        if !state.q.iter().chain(state.qdot.iter()).all(|v| v.is_finite()) {
            return Err(ModelError::InvalidState("non-finite state entry".into()));
        }
        if self.floating {
            let norm = (state.q[3] * state.q[3]
                + state.q[4] * state.q[4]
                + state.q[5] * state.q[5]
                + state.q[6] * state.q[6])
                .sqrt();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(ModelError::InvalidState(format!(
                    "base quaternion norm {norm} is not 1"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn kinematics(&self, state: &RobotState) -> Result<Kinematics, ModelError> {
        self.validate_state(state)?;
        let mut bodies: Vec<BodyKin> = Vec::with_capacity(self.bodies.len());
        // Fill placeholder entries so children can index parents.
        for _ in 0..self.bodies.len() {
            bodies.push(BodyKin {
                rot: Rotation3::identity(),
                pos: Vector3::zeros(),
                vel: V6::zeros(),
                bias_acc: V6::zeros(),
            });
        }
        let mut cols = vec![V6::zeros(); self.dof];
        for joint in &self.joints {
            let (parent_rot, parent_pos, parent_vel, parent_bias) = match joint.parent {
                Some(p) => {
                    let pk = &bodies[p];
                    (pk.rot, pk.pos, pk.vel, pk.bias_acc)
                }
                None => (
                    Rotation3::identity(),
                    Vector3::zeros(),
                    V6::zeros(),
                    V6::zeros(),
                ),
            };
            let jk = &mut bodies[joint.child];
            match joint.kind {
                JointKind::Floating => {
                    let pos = Vector3::new(state.q[0], state.q[1], state.q[2]);
                    let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        state.q[3], state.q[4], state.q[5], state.q[6],
                    ));
                    let omega = Vector3::new(state.qdot[0], state.qdot[1], state.qdot[2]);
                    let vbase = Vector3::new(state.qdot[3], state.qdot[4], state.qdot[5]);
                    jk.rot = quat.to_rotation_matrix();
                    jk.pos = pos;
                    for k in 0..3 {
                        let e = Vector3::ith(k, 1.0);
                        cols[joint.dof_start + k] = v6(e, pos.cross(&e));
                        cols[joint.dof_start + 3 + k] = v6(Vector3::zeros(), e);
                    }
                    jk.vel = v6(omega, vbase - omega.cross(&pos));
                    // d/dt of the angular columns contributes (0, pdot x w).
                    jk.bias_acc = v6(Vector3::zeros(), vbase.cross(&omega));
                }
                JointKind::Revolute | JointKind::Prismatic => {
                    let joint_rot = parent_rot * joint.origin.rotation.to_rotation_matrix();
                    let joint_pos = parent_pos + parent_rot * joint.origin.translation.vector;
                    let axis_world = joint_rot * joint.axis.into_inner();
                    let qj = state.q[joint.q_start];
                    let qdj = state.qdot[joint.dof_start];
                    let s = match joint.kind {
                        JointKind::Revolute => {
                            jk.rot = joint_rot
                                * Rotation3::from_axis_angle(
                                    &nalgebra::Unit::new_unchecked(joint.axis.into_inner()),
                                    qj,
                                );
                            jk.pos = joint_pos;
                            v6(axis_world, joint_pos.cross(&axis_world))
                        }
                        JointKind::Prismatic => {
                            jk.rot = joint_rot;
                            jk.pos = joint_pos + axis_world * qj;
                            v6(Vector3::zeros(), axis_world)
                        }
                        JointKind::Floating => unreachable!(),
                    };
                    cols[joint.dof_start] = s;
                    let sdot = cross_motion(&parent_vel, &s);
                    jk.vel = parent_vel + s * qdj;
                    jk.bias_acc = parent_bias + sdot * qdj;
                }
            }
        }
        Ok(Kinematics { bodies, cols })
    }

    fn body_spatial_inertia(&self, kin: &Kinematics, body: usize) -> Matrix6<f64> {
        let b = &self.bodies[body];
        let k = &kin.bodies[body];
        let com_world = k.pos + k.rot * b.com;
        let inertia_world = k.rot * b.inertia * k.rot.transpose();
        spatial_inertia(b.mass, &com_world, &inertia_world)
    }

    /// Mass matrix, Coriolis/centrifugal, and gravity generalized forces.
    pub fn dynamics_terms(&self, state: &RobotState) -> Result<DynamicsTerms, ModelError> {
        let kin = self.kinematics(state)?;
        let nb = self.bodies.len();
        let m = self.dof;

        // Composite-rigid-body sweep (leaves to root). Joints are in tree
        // order, so iterating them in reverse visits children first.
        let mut composite: Vec<Matrix6<f64>> = (0..nb)
            .map(|i| self.body_spatial_inertia(&kin, i))
            .collect();
        // Per-body bias force (Coriolis) and gravity force, accumulated up.
        let mut f_bias: Vec<V6> = Vec::with_capacity(nb);
        let mut f_grav: Vec<V6> = Vec::with_capacity(nb);
        for i in 0..nb {
            let inertia = self.body_spatial_inertia(&kin, i);
            let k = &kin.bodies[i];
            let momentum = inertia * k.vel;
            f_bias.push(inertia * k.bias_acc + cross_force(&k.vel, &momentum));
            let b = &self.bodies[i];
            let com_world = k.pos + k.rot * b.com;
            let fg = b.mass * self.gravity;
            f_grav.push(v6(com_world.cross(&fg), fg));
        }
        for joint in self.joints.iter().rev() {
            if let Some(p) = joint.parent {
                let child_comp = composite[joint.child];
                composite[p] += child_comp;
                let fb = f_bias[joint.child];
                f_bias[p] += fb;
                let fg = f_grav[joint.child];
                f_grav[p] += fg;
            }
        }

        let mut a = DMatrix::zeros(m, m);
        let mut bvec = DVector::zeros(m);
        let mut gvec = DVector::zeros(m);
        for joint in &self.joints {
            let dsz = if joint.kind == JointKind::Floating { 6 } else { 1 };
            let body = joint.child;
            for d in 0..dsz {
                let j = joint.dof_start + d;
                let s_j = kin.cols[j];
                let f = composite[body] * s_j;
                // Couple with every dof on the path to this body (including
                // this joint's own block).
                for &k in &self.body_path[body] {
                    let val = kin.cols[k].dot(&f);
                    a[(k, j)] = val;
                    a[(j, k)] = val;
                }
                bvec[j] = s_j.dot(&f_bias[body]);
                gvec[j] = -s_j.dot(&f_grav[body]);
            }
        }
        Ok(DynamicsTerms { a, b: bvec, g: gvec })
    }

    pub fn frame_position(&self, state: &RobotState, frame: &str) -> Result<Vector3<f64>, ModelError> {
        let kin = self.kinematics(state)?;
        let f = &self.frames[self.frame_index(frame)?];
        let k = &kin.bodies[f.body];
        Ok(k.pos + k.rot * f.offset)
    }

    pub fn frame_orientation(
        &self,
        state: &RobotState,
        frame: &str,
    ) -> Result<UnitQuaternion<f64>, ModelError> {
        let kin = self.kinematics(state)?;
        let f = &self.frames[self.frame_index(frame)?];
        Ok(UnitQuaternion::from_rotation_matrix(&kin.bodies[f.body].rot))
    }

    /// Jacobian, velocity-product acceleration, and pose of a frame from a
    /// single kinematics pass (the per-call cost is dominated by that
    /// pass, so servo loops should prefer this over the individual
    /// accessors).
    pub fn frame_task_terms(
        &self,
        state: &RobotState,
        frame: &str,
        kind: JacobianKind,
    ) -> Result<FrameTaskTerms, ModelError> {
        let fi = self.frame_index(frame)?;
        let kin = self.kinematics(state)?;
        let f = &self.frames[fi];
        let k = &kin.bodies[f.body];
        Ok(FrameTaskTerms {
            j: self.frame_jacobian_kin(&kin, fi, kind),
            jdot_qdot: self.jdot_qdot_kin(&kin, fi, kind),
            position: k.pos + k.rot * f.offset,
            orientation: UnitQuaternion::from_rotation_matrix(&k.rot),
        })
    }

    /// World Jacobian of a frame. `Point3` maps `qdot` to the linear
    /// velocity of the frame point, `Full6` to (angular, linear).
    pub fn frame_jacobian(
        &self,
        state: &RobotState,
        frame: &str,
        kind: JacobianKind,
    ) -> Result<DMatrix<f64>, ModelError> {
        let fi = self.frame_index(frame)?;
        let kin = self.kinematics(state)?;
        Ok(self.frame_jacobian_kin(&kin, fi, kind))
    }

    pub(crate) fn frame_jacobian_kin(
        &self,
        kin: &Kinematics,
        frame: usize,
        kind: JacobianKind,
    ) -> DMatrix<f64> {
        let f = &self.frames[frame];
        let k = &kin.bodies[f.body];
        let p = k.pos + k.rot * f.offset;
        let mut j = DMatrix::zeros(kind.rows(), self.dof);
        for &d in &self.body_path[f.body] {
            let s = kin.cols[d];
            let sa = ang(&s);
            let point_vel = lin(&s) + sa.cross(&p);
            match kind {
                JacobianKind::Point3 => {
                    j.fixed_view_mut::<3, 1>(0, d).copy_from(&point_vel);
                }
                JacobianKind::Full6 => {
                    j.fixed_view_mut::<3, 1>(0, d).copy_from(&sa);
                    j.fixed_view_mut::<3, 1>(3, d).copy_from(&point_vel);
                }
            }
        }
        j
    }

    /// `d/dt(J) qdot`: frame acceleration at zero generalized acceleration.
    pub fn jdot_qdot(
        &self,
        state: &RobotState,
        frame: &str,
        kind: JacobianKind,
    ) -> Result<DVector<f64>, ModelError> {
        let fi = self.frame_index(frame)?;
        let kin = self.kinematics(state)?;
        Ok(self.jdot_qdot_kin(&kin, fi, kind))
    }

    pub(crate) fn jdot_qdot_kin(
        &self,
        kin: &Kinematics,
        frame: usize,
        kind: JacobianKind,
    ) -> DVector<f64> {
        let f = &self.frames[frame];
        let k = &kin.bodies[f.body];
        let p = k.pos + k.rot * f.offset;
        let omega = ang(&k.vel);
        let point_vel = lin(&k.vel) + omega.cross(&p);
        let alpha = ang(&k.bias_acc);
        let accel = lin(&k.bias_acc) + alpha.cross(&p) + omega.cross(&point_vel);
        match kind {
            JacobianKind::Point3 => DVector::from_column_slice(accel.as_slice()),
            JacobianKind::Full6 => {
                let mut out = DVector::zeros(6);
                out.fixed_rows_mut::<3>(0).copy_from(&alpha);
                out.fixed_rows_mut::<3>(3).copy_from(&accel);
                out
            }
        }
    }

    /// Forward dynamics oracle: `qddot = A^-1 (U' tau + sum J' F - b - g)`.
    ///
    /// External wrenches are world-frame, applied at the named frame's
    /// origin: 6 entries `(torque, force)` or 3 entries (pure force).
    pub fn forward_dynamics(
        &self,
        state: &RobotState,
        tau: &DVector<f64>,
        external: &[(String, DVector<f64>)],
    ) -> Result<DVector<f64>, ModelError> {
        if tau.len() != self.actuated_dofs.len() {
            return Err(ModelError::InvalidState(format!(
                "expected {} torques, got {}",
                self.actuated_dofs.len(),
                tau.len()
            )));
        }
        let terms = self.dynamics_terms(state)?;
        let kin = self.kinematics(state)?;
        let mut rhs = -&terms.b - &terms.g;
        for (i, &d) in self.actuated_dofs.iter().enumerate() {
            rhs[d] += tau[i];
        }
        for (frame, wrench) in external {
            let fi = self.frame_index(frame)?;
            let kind = match wrench.len() {
                3 => JacobianKind::Point3,
                6 => JacobianKind::Full6,
                n => {
                    return Err(ModelError::InvalidState(format!(
                        "wrench on `{frame}` must have 3 or 6 entries, got {n}"
                    )))
                }
            };
            let j = self.frame_jacobian_kin(&kin, fi, kind);
            rhs += j.transpose() * wrench;
        }
        let chol = nalgebra::Cholesky::new(terms.a.clone()).ok_or_else(|| {
            ModelError::InvalidState("mass matrix is not positive definite".into())
        })?;
        Ok(chol.solve(&rhs))
    }

    /// Centroidal momentum matrix, its velocity-product bias, and the
    /// current momentum, all about the instantaneous CoM (angular, linear).
    pub fn centroidal_momentum(&self, state: &RobotState) -> Result<CentroidalMomentum, ModelError> {
        let kin = self.kinematics(state)?;
        let nb = self.bodies.len();
        let m = self.dof;
        let mut composite: Vec<Matrix6<f64>> = (0..nb)
            .map(|i| self.body_spatial_inertia(&kin, i))
            .collect();
        let mut f_bias: Vec<V6> = Vec::with_capacity(nb);
        let mut total_mass = 0.0;
        let mut weighted_com = Vector3::zeros();
        for i in 0..nb {
            let inertia = composite[i];
            let k = &kin.bodies[i];
            let momentum = inertia * k.vel;
            f_bias.push(inertia * k.bias_acc + cross_force(&k.vel, &momentum));
            let b = &self.bodies[i];
            total_mass += b.mass;
            weighted_com += b.mass * (k.pos + k.rot * b.com);
        }
        for joint in self.joints.iter().rev() {
            if let Some(p) = joint.parent {
                let ci = composite[joint.child];
                composite[p] += ci;
                let fb = f_bias[joint.child];
                f_bias[p] += fb;
            }
        }
        let com = weighted_com / total_mass;
        let cx = com.cross_matrix();

        // Momentum matrix about the origin, then shift to the CoM.
        let mut h_o = DMatrix::zeros(6, m);
        for joint in &self.joints {
            let dsz = if joint.kind == JointKind::Floating { 6 } else { 1 };
            for d in 0..dsz {
                let j = joint.dof_start + d;
                let col = composite[joint.child] * kin.cols[j];
                h_o.column_mut(j).copy_from_slice(col.as_slice());
            }
        }
        let mut matrix = h_o.clone();
        for c in 0..m {
            let la = Vector3::new(h_o[(0, c)], h_o[(1, c)], h_o[(2, c)]);
            let ll = Vector3::new(h_o[(3, c)], h_o[(4, c)], h_o[(5, c)]);
            let shifted = la - cx * ll;
            matrix[(0, c)] = shifted[0];
            matrix[(1, c)] = shifted[1];
            matrix[(2, c)] = shifted[2];
        }
        let momentum = &matrix * &state.qdot;
        let com_velocity = Vector3::new(momentum[3], momentum[4], momentum[5]) / total_mass;

        // Bias: rate of h at zero qddot. The CoM-motion correction term
        // cdot x (m cdot) vanishes, so only the shift of the root bias
        // force remains.
        let root_bias = f_bias
            .iter()
            .zip(0..nb)
            .filter(|(_, i)| {
                // Sum only root bodies; children were accumulated already.
                self.joints[self.body_joint[*i]].parent.is_none()
            })
            .fold(V6::zeros(), |acc, (f, _)| acc + f);
        let ba = ang(&root_bias) - cx * lin(&root_bias);
        let bias = DVector::from_column_slice(&[
            ba[0],
            ba[1],
            ba[2],
            root_bias[3],
            root_bias[4],
            root_bias[5],
        ]);
        Ok(CentroidalMomentum {
            matrix,
            bias,
            momentum,
            com,
            com_velocity,
            total_mass,
        })
    }

    /// Advance positions by `h` along `qdot` (tangent-space retraction for
    /// the base orientation). Shared by the integrator and by
    /// finite-difference oracles so both use the same chart.
    pub fn advance_position(&self, q: &DVector<f64>, qdot: &DVector<f64>, h: f64) -> DVector<f64> {
        let mut out = q.clone();
        if self.floating {
            for i in 0..3 {
                out[i] += qdot[3 + i] * h;
            }
            let omega = Vector3::new(qdot[0], qdot[1], qdot[2]);
            let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                q[3], q[4], q[5], q[6],
            ));
            let rotated = UnitQuaternion::from_scaled_axis(omega * h) * quat;
            out[3] = rotated.w;
            out[4] = rotated.i;
            out[5] = rotated.j;
            out[6] = rotated.k;
            for i in 6..self.dof {
                out[i + 1] += qdot[i] * h;
            }
        } else {
            for i in 0..self.dof {
                out[i] += qdot[i] * h;
            }
        }
        out
    }
}
