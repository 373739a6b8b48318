//! Internal-constraint projections, contact wrench cones, multi-contact
//! augmentation, and contact-transition force envelopes.
//!
//! All inequalities use the convention `W * F >= offset`. Cone rows are
//! homogeneous (offset 0); transition rows are affine and carry their
//! bound in the offset.

use nalgebra::{DMatrix, DVector, Rotation3, RowDVector, Vector3};
use thiserror::Error;

use crate::linalg::{self, LinalgError, PinvConfig};
use crate::model::{DynamicsTerms, JacobianKind, ModelError, RobotModel, RobotState};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("invalid cone parameter: {0}")]
    InvalidConeParameter(String),
    #[error("transition phase {0} is outside [0, 1]")]
    InvalidTransitionPhase(f64),
    #[error("invalid internal constraint: {0}")]
    InvalidInternalConstraint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One holonomic constraint internal to the mechanism. Internal constraint
/// forces do no work on the floating base.
#[derive(Clone, Debug)]
pub enum InternalConstraintSpec {
    /// `qdot_a = ratio * qdot_b`.
    CoupledJoints {
        joint_a: String,
        joint_b: String,
        ratio: f64,
    },
    /// Two frames move together (closed chain), position level.
    FrameCoincidence { frame_a: String, frame_b: String },
}

/// Null-space machinery derived from the stacked internal constraints.
#[derive(Clone, Debug)]
pub struct InternalProjection {
    /// Stacked internal-constraint Jacobian (may have zero rows).
    pub j_int: DMatrix<f64>,
    /// `Jdot_int * qdot` for the stacked constraints.
    pub jdot_qdot: DVector<f64>,
    /// `N_int = I - Jbar_int J_int`.
    pub n_int: DMatrix<f64>,
    /// `J_int' (J_int A^-1 J_int')^+ Jdot_int qdot`.
    pub bias_correction: DVector<f64>,
    /// `(U N_int)'` with the floating-base rows removed:
    /// `(m - floating_dim) x n_act`.
    pub actuation_map: DMatrix<f64>,
    /// Inverse mass matrix, kept for downstream projections.
    pub a_inv: DMatrix<f64>,
}

/// Builds the stacked internal-constraint Jacobian, its projector, the
/// bias-correction force, and the reduced actuation map.
pub fn internal_projection(
    model: &RobotModel,
    state: &RobotState,
    dynamics: &DynamicsTerms,
    specs: &[InternalConstraintSpec],
    cfg: &PinvConfig,
) -> Result<InternalProjection, ConstraintError> {
    let m = model.dof();
    let nf = model.floating_dim();
    let mut rows: Vec<RowDVector<f64>> = Vec::new();
    let mut bias: Vec<f64> = Vec::new();
    for spec in specs {
        match spec {
            InternalConstraintSpec::CoupledJoints {
                joint_a,
                joint_b,
                ratio,
            } => {
                let mut row = RowDVector::zeros(m);
                for (name, coeff) in [(joint_a, 1.0), (joint_b, -ratio)] {
                    let ji = model.joint_index(name).ok_or_else(|| {
                        ConstraintError::InvalidInternalConstraint(format!(
                            "unknown joint `{name}`"
                        ))
                    })?;
                    let joint = &model.joints[ji];
                    if joint.kind == crate::model::JointKind::Floating {
                        return Err(ConstraintError::InvalidInternalConstraint(format!(
                            "internal constraint may not touch floating joint `{name}`"
                        )));
                    }
                    row[joint.dof_start] += coeff;
                }
                rows.push(row);
                bias.push(0.0);
            }
            InternalConstraintSpec::FrameCoincidence { frame_a, frame_b } => {
                let ja = model.frame_jacobian(state, frame_a, JacobianKind::Point3)?;
                let jb = model.frame_jacobian(state, frame_b, JacobianKind::Point3)?;
                let j = ja - jb;
                let da = model.jdot_qdot(state, frame_a, JacobianKind::Point3)?;
                let db = model.jdot_qdot(state, frame_b, JacobianKind::Point3)?;
                let d = da - db;
                // The constraint must not couple to the floating base.
                for r in 0..3 {
                    for c in 0..nf {
                        if j[(r, c)].abs() > 1e-10 {
                            return Err(ConstraintError::InvalidInternalConstraint(format!(
                                "frame coincidence `{frame_a}`/`{frame_b}` couples to the floating base (entry {})",
                                j[(r, c)]
                            )));
                        }
                    }
                    rows.push(j.row(r).into_owned());
                    bias.push(d[r]);
                }
            }
        }
    }

    let nrows = rows.len();
    let mut j_int = DMatrix::zeros(nrows, m);
    for (i, r) in rows.iter().enumerate() {
        j_int.row_mut(i).copy_from(r);
    }
    let jdot_qdot = DVector::from_vec(bias);

    let a_inv = nalgebra::Cholesky::new(dynamics.a.clone())
        .ok_or_else(|| {
            ConstraintError::Model(ModelError::InvalidState(
                "mass matrix is not positive definite".into(),
            ))
        })?
        .inverse();

    let (n_int, bias_correction) = if nrows == 0 {
        (DMatrix::identity(m, m), DVector::zeros(m))
    } else {
        let j_bar = linalg::dyn_consistent_inv(&j_int, &a_inv, cfg)?;
        let n_int = linalg::null_projector(&j_int, &j_bar)?;
        let lambda = linalg::svd_pinv(&(&j_int * &a_inv * j_int.transpose()), cfg)?;
        let bias_correction = j_int.transpose() * lambda * &jdot_qdot;
        (n_int, bias_correction)
    };

    // (U N_int)' = N_int' U' : keep actuated columns, drop floating rows.
    let n_act = model.num_actuated();
    let nt = n_int.transpose();
    let mut actuation_map = DMatrix::zeros(m - nf, n_act);
    for (col, &d) in model.actuated_dof_indices().iter().enumerate() {
        actuation_map
            .column_mut(col)
            .copy_from(&nt.column(d).rows(nf, m - nf));
    }

    Ok(InternalProjection {
        j_int,
        jdot_qdot,
        n_int,
        bias_correction,
        actuation_map,
        a_inv,
    })
}

/// Contact patch geometry.
#[derive(Clone, Copy, Debug)]
pub enum ContactGeometry {
    /// Rectangular surface patch; `dx`, `dy` are the half-extents [m].
    Surface { dx: f64, dy: f64 },
    /// Point contact with a linearized friction pyramid.
    Point { facets: usize },
}

/// Scheduled bound on the local vertical force during engage/release.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    /// Phase in [0, 1]; the bound is `h f_max + (1 - h) f_min`.
    pub h: f64,
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Clone, Debug)]
pub struct ContactSpec {
    pub frame: String,
    pub geometry: ContactGeometry,
    pub mu: f64,
    /// SO(3) from the reference (world) frame to the local contact frame.
    pub rotation_to_local: Rotation3<f64>,
    pub transition: Option<Transition>,
}

impl ContactSpec {
    /// Surface contacts carry a 6-D wrench, point contacts a 3-D force.
    pub fn wrench_dim(&self) -> usize {
        match self.geometry {
            ContactGeometry::Surface { .. } => 6,
            ContactGeometry::Point { .. } => 3,
        }
    }

    pub fn jacobian_kind(&self) -> JacobianKind {
        match self.geometry {
            ContactGeometry::Surface { .. } => JacobianKind::Full6,
            ContactGeometry::Point { .. } => JacobianKind::Point3,
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !(self.mu > 0.0) {
            return Err(ConstraintError::InvalidConeParameter(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if let ContactGeometry::Surface { dx, dy } = self.geometry {
            if !(dx > 0.0 && dy > 0.0) {
                return Err(ConstraintError::InvalidConeParameter(format!(
                    "surface half-extents must be positive, got ({dx}, {dy})"
                )));
            }
        }
        let r = self.rotation_to_local.matrix();
        if ((r.transpose() * r) - nalgebra::Matrix3::identity()).amax() > 1e-9 {
            return Err(ConstraintError::InvalidConeParameter(
                "rotation_to_local is not orthonormal".into(),
            ));
        }
        if let Some(t) = &self.transition {
            if !(0.0..=1.0).contains(&t.h) {
                return Err(ConstraintError::InvalidTransitionPhase(t.h));
            }
            if t.f_min > t.f_max {
                return Err(ConstraintError::InvalidConeParameter(format!(
                    "f_min {} exceeds f_max {}",
                    t.f_min, t.f_max
                )));
            }
        }
        Ok(())
    }
}

/// Polyhedral admissible set `W * F >= offset`.
#[derive(Clone, Debug)]
pub struct ConeMatrix {
    pub w: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ConeMatrix {
    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    /// Residuals `W * f - offset`; nonnegative entries mean admissible.
    pub fn residuals(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.w * f - &self.offset
    }

    pub fn admits(&self, f: &DVector<f64>, tol: f64) -> bool {
        self.rows() == 0 || self.residuals(f).min() >= -tol
    }
}

/// 17-row contact wrench cone for a rectangular surface patch.
///
/// Wrench ordering is `[tau_x, tau_y, tau_z, f_x, f_y, f_z]` at the patch
/// center in the local contact frame. Rows encode `|f_x| <= mu f_z`,
/// `|f_y| <= mu f_z`, `f_z >= 0`, the center-of-pressure bounds
/// `|tau_x| <= d_y f_z`, `|tau_y| <= d_x f_z`, and the four-way expansion
/// of each yaw-torque bound.
pub fn surface_cone(mu: f64, dx: f64, dy: f64) -> Result<ConeMatrix, ConstraintError> {
    if !(mu > 0.0 && dx > 0.0 && dy > 0.0) {
        return Err(ConstraintError::InvalidConeParameter(format!(
            "surface cone needs positive (mu, dx, dy), got ({mu}, {dx}, {dy})"
        )));
    }
    let mut w = DMatrix::zeros(17, 6);
    let mut set = |r: usize, vals: [f64; 6]| {
        for (c, v) in vals.into_iter().enumerate() {
            w[(r, c)] = v;
        }
    };
    // Friction: mu f_z -+ f_x >= 0, mu f_z -+ f_y >= 0.
    set(0, [0.0, 0.0, 0.0, -1.0, 0.0, mu]);
    set(1, [0.0, 0.0, 0.0, 1.0, 0.0, mu]);
    set(2, [0.0, 0.0, 0.0, 0.0, -1.0, mu]);
    set(3, [0.0, 0.0, 0.0, 0.0, 1.0, mu]);
    // Unilaterality.
    set(4, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    // Center of pressure: d_y f_z -+ tau_x >= 0, d_x f_z -+ tau_y >= 0.
    set(5, [-1.0, 0.0, 0.0, 0.0, 0.0, dy]);
    set(6, [1.0, 0.0, 0.0, 0.0, 0.0, dy]);
    set(7, [0.0, -1.0, 0.0, 0.0, 0.0, dx]);
    set(8, [0.0, 1.0, 0.0, 0.0, 0.0, dx]);
    // Yaw torque upper bound:
    //   tau_z <= mu (dx + dy) f_z - |dy f_x + mu tau_x| - |dx f_y + mu tau_y|
    // expanded over both signs of each absolute value.
    let mut r = 9;
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            set(
                r,
                [
                    -s1 * mu,
                    -s2 * mu,
                    -1.0,
                    -s1 * dy,
                    -s2 * dx,
                    mu * (dx + dy),
                ],
            );
            r += 1;
        }
    }
    // Yaw torque lower bound:
    //   tau_z >= -mu (dx + dy) f_z + |dy f_x - mu tau_x| + |dx f_y - mu tau_y|
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            set(
                r,
                [
                    s1 * mu,
                    s2 * mu,
                    1.0,
                    -s1 * dy,
                    -s2 * dx,
                    mu * (dx + dy),
                ],
            );
            r += 1;
        }
    }
    Ok(ConeMatrix {
        w,
        offset: DVector::zeros(17),
    })
}

/// Inscribed friction pyramid for a point contact: `facets` face rows plus
/// the unilateral row, acting on `[f_x, f_y, f_z]`.
pub fn point_cone(mu: f64, facets: usize) -> Result<ConeMatrix, ConstraintError> {
    if !(mu > 0.0) {
        return Err(ConstraintError::InvalidConeParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if facets < 4 {
        return Err(ConstraintError::InvalidConeParameter(format!(
            "point cone needs at least 4 facets, got {facets}"
        )));
    }
    let mut w = DMatrix::zeros(facets + 1, 3);
    for i in 0..facets {
        let phi0 = 2.0 * std::f64::consts::PI * i as f64 / facets as f64;
        let phi1 = 2.0 * std::f64::consts::PI * (i + 1) as f64 / facets as f64;
        let e0 = Vector3::new(mu * phi0.cos(), mu * phi0.sin(), 1.0);
        let e1 = Vector3::new(mu * phi1.cos(), mu * phi1.sin(), 1.0);
        let n = e0.cross(&e1).normalize();
        w[(i, 0)] = n[0];
        w[(i, 1)] = n[1];
        w[(i, 2)] = n[2];
    }
    w[(facets, 2)] = 1.0;
    Ok(ConeMatrix {
        w,
        offset: DVector::zeros(facets + 1),
    })
}

/// One affine row bounding the local vertical force:
/// `f_z <= h f_max + (1 - h) f_min`, rewritten as `-f_z >= -bound`.
/// Coefficients act on a local surface wrench; take the force half for
/// point contacts.
pub fn transition_row(h: f64, f_min: f64, f_max: f64) -> Result<ConeMatrix, ConstraintError> {
    if !(0.0..=1.0).contains(&h) {
        return Err(ConstraintError::InvalidTransitionPhase(h));
    }
    if f_min > f_max {
        return Err(ConstraintError::InvalidConeParameter(format!(
            "f_min {f_min} exceeds f_max {f_max}"
        )));
    }
    let bound = h * f_max + (1.0 - h) * f_min;
    let mut w = DMatrix::zeros(1, 6);
    w[(0, 5)] = -1.0;
    Ok(ConeMatrix {
        w,
        offset: DVector::from_element(1, -bound),
    })
}

/// Block-diagonal augmentation over a contact set. Each block is the
/// per-contact cone composed with the world-to-local rotation applied to
/// the torque and force halves independently; scheduled transition rows
/// are appended per contact.
pub fn augment_cones(contacts: &[ContactSpec]) -> Result<ConeMatrix, ConstraintError> {
    let mut blocks: Vec<ConeMatrix> = Vec::with_capacity(contacts.len());
    let mut total_rows = 0;
    let mut total_cols = 0;
    for c in contacts {
        c.validate()?;
        let r = c.rotation_to_local.matrix();
        let dim = c.wrench_dim();
        let r_aug = match c.geometry {
            ContactGeometry::Surface { .. } => {
                let mut m = DMatrix::zeros(6, 6);
                m.view_mut((0, 0), (3, 3)).copy_from(r);
                m.view_mut((3, 3), (3, 3)).copy_from(r);
                m
            }
            ContactGeometry::Point { .. } => {
                let mut m = DMatrix::zeros(3, 3);
                m.copy_from(r);
                m
            }
        };
        let base = match c.geometry {
            ContactGeometry::Surface { dx, dy } => surface_cone(c.mu, dx, dy)?,
            ContactGeometry::Point { facets } => point_cone(c.mu, facets)?,
        };
        let mut w = base.w * &r_aug;
        let mut offset = base.offset;
        if let Some(t) = &c.transition {
            let tr = transition_row(t.h, t.f_min, t.f_max)?;
            let local_row = match c.geometry {
                ContactGeometry::Surface { .. } => tr.w.clone(),
                // Force half only.
                ContactGeometry::Point { .. } => tr.w.columns(3, 3).into_owned(),
            };
            let rotated = local_row * &r_aug;
            w = DMatrix::from_rows(
                &w.row_iter()
                    .chain(rotated.row_iter())
                    .map(|r| r.into_owned())
                    .collect::<Vec<_>>(),
            );
            offset = offset.push(tr.offset[0]);
        }
        total_rows += w.nrows();
        total_cols += dim;
        blocks.push(ConeMatrix { w, offset });
    }
    let mut w = DMatrix::zeros(total_rows, total_cols);
    let mut offset = DVector::zeros(total_rows);
    let (mut r0, mut c0) = (0, 0);
    for b in &blocks {
        w.view_mut((r0, c0), (b.w.nrows(), b.w.ncols()))
            .copy_from(&b.w);
        offset.rows_mut(r0, b.offset.len()).copy_from(&b.offset);
        r0 += b.w.nrows();
        c0 += b.w.ncols();
    }
    Ok(ConeMatrix { w, offset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wrench(v: [f64; 6]) -> DVector<f64> {
        DVector::from_column_slice(&v)
    }

    /// Direct evaluation of the surface-contact inequalities.
    pub(crate) fn surface_admissible_direct(mu: f64, dx: f64, dy: f64, w: &[f64; 6]) -> bool {
        let [tx, ty, tz, fx, fy, fz] = *w;
        let tz_min = -mu * (dx + dy) * fz + (dy * fx - mu * tx).abs() + (dx * fy - mu * ty).abs();
        let tz_max = mu * (dx + dy) * fz - (dy * fx + mu * tx).abs() - (dx * fy + mu * ty).abs();
        fx.abs() <= mu * fz
            && fy.abs() <= mu * fz
            && fz >= 0.0
            && tx.abs() <= dy * fz
            && ty.abs() <= dx * fz
            && tz_min <= tz
            && tz <= tz_max
    }

    #[test]
    fn pure_vertical_force_is_admissible() {
        let cone = surface_cone(0.5, 0.1, 0.05).unwrap();
        assert_eq!(cone.rows(), 17);
        let res = cone.residuals(&wrench([0.0, 0.0, 0.0, 0.0, 0.0, 100.0]));
        assert!(res.min() >= 0.0);
    }

    #[test]
    fn friction_boundary_has_zero_residual() {
        let cone = surface_cone(0.3, 0.1, 0.05).unwrap();
        let res = cone.residuals(&wrench([0.0, 0.0, 0.0, 30.0, 0.0, 100.0]));
        // Row 0 is mu f_z - f_x.
        assert!(res[0].abs() < 1e-12);
        assert!(res.min() >= -1e-12);
    }

    #[test]
    fn surface_cone_matches_direct_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cone = surface_cone(0.5, 0.1, 0.1).unwrap();
        for _ in 0..100_000 {
            let mut v = [0.0; 6];
            for x in &mut v {
                *x = rng.gen_range(-50.0..50.0);
            }
            v[5] = rng.gen_range(-10.0..100.0);
            let via_cone = cone.admits(&wrench(v), 0.0);
            let direct = surface_admissible_direct(0.5, 0.1, 0.1, &v);
            assert_eq!(via_cone, direct, "wrench {v:?}");
        }
    }

    #[test]
    fn point_cone_inscription() {
        let mu = 0.6;
        let fz = 100.0;
        let ft = mu * fz / 2f64.sqrt();
        let f = DVector::from_column_slice(&[ft, ft, fz]);
        // Diagonal direction lies outside the 4-facet inscribed pyramid...
        assert!(!point_cone(mu, 4).unwrap().admits(&f, 0.0));
        // ...but on the boundary of the 16-facet one (within 2%).
        let c16 = point_cone(mu, 16).unwrap();
        let shrunk = DVector::from_column_slice(&[ft * 0.98, ft * 0.98, fz]);
        assert!(c16.admits(&shrunk, 0.0));
        // Unilaterality.
        assert!(!c16.admits(&DVector::from_column_slice(&[0.0, 0.0, -1.0]), 0.0));
        assert!(c16.admits(&DVector::from_column_slice(&[0.0, 0.0, 1.0]), 0.0));
    }

    #[test]
    fn point_cone_needs_four_facets() {
        assert!(matches!(
            point_cone(0.5, 3),
            Err(ConstraintError::InvalidConeParameter(_))
        ));
    }

    #[test]
    fn transition_row_bounds() {
        let full = transition_row(1.0, 0.0, 200.0).unwrap();
        assert_eq!(full.offset[0], -200.0);
        let off = transition_row(0.0, 0.0, 200.0).unwrap();
        assert_eq!(off.offset[0], 0.0);
        let half = transition_row(0.5, 0.0, 200.0).unwrap();
        assert_eq!(half.offset[0], -100.0);
        // f_z = 150 violates the half-phase bound.
        let f = wrench([0.0, 0.0, 0.0, 0.0, 0.0, 150.0]);
        assert!(half.residuals(&f)[0] < 0.0);
        assert!(matches!(
            transition_row(1.5, 0.0, 1.0),
            Err(ConstraintError::InvalidTransitionPhase(_))
        ));
    }

    fn surface_spec(rot: Rotation3<f64>, transition: Option<Transition>) -> ContactSpec {
        ContactSpec {
            frame: "foot".into(),
            geometry: ContactGeometry::Surface { dx: 0.09, dy: 0.05 },
            mu: 0.5,
            rotation_to_local: rot,
            transition,
        }
    }

    #[test]
    fn single_block_matches_surface_cone() {
        let aug = augment_cones(&[surface_spec(Rotation3::identity(), None)]).unwrap();
        let base = surface_cone(0.5, 0.09, 0.05).unwrap();
        assert_eq!(aug.w, base.w);
        let with_tr = augment_cones(&[surface_spec(
            Rotation3::identity(),
            Some(Transition {
                h: 0.25,
                f_min: 0.0,
                f_max: 200.0,
            }),
        )])
        .unwrap();
        assert_eq!(with_tr.rows(), 18);
        assert_eq!(with_tr.offset[17], -50.0);
    }

    #[test]
    fn two_contacts_are_block_diagonal() {
        let aug = augment_cones(&[
            surface_spec(Rotation3::identity(), None),
            surface_spec(Rotation3::identity(), None),
        ])
        .unwrap();
        assert_eq!(aug.w.shape(), (34, 12));
        for r in 0..17 {
            for c in 6..12 {
                assert_eq!(aug.w[(r, c)], 0.0);
                assert_eq!(aug.w[(r + 17, c - 6)], 0.0);
            }
        }
    }

    #[test]
    fn rotation_equivariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let plain = augment_cones(&[surface_spec(Rotation3::identity(), None)]).unwrap();
        let rotated = augment_cones(&[surface_spec(rot, None)]).unwrap();
        for _ in 0..2000 {
            let mut v = [0.0; 6];
            for x in &mut v {
                *x = rng.gen_range(-30.0..30.0);
            }
            v[5] = rng.gen_range(0.0..80.0);
            let w_local = wrench(v);
            // Wrench admissible in local coordinates iff the world wrench
            // that maps onto it is admissible for the rotated contact.
            let rinv = rot.inverse();
            let mut w_world = DVector::zeros(6);
            let ta = rinv * Vector3::new(v[0], v[1], v[2]);
            let fa = rinv * Vector3::new(v[3], v[4], v[5]);
            for i in 0..3 {
                w_world[i] = ta[i];
                w_world[3 + i] = fa[i];
            }
            assert_eq!(
                plain.admits(&w_local, 1e-9),
                rotated.admits(&w_world, 1e-9)
            );
        }
    }

    proptest! {
        #[test]
        fn cone_membership_is_scale_invariant(
            v in proptest::collection::vec(-40.0f64..40.0, 6),
            alpha in 0.1f64..10.0,
        ) {
            let cone = surface_cone(0.4, 0.08, 0.06).unwrap();
            let w = DVector::from_column_slice(&v);
            let res = cone.residuals(&w);
            // Stay away from the boundary so scaling cannot flip a row.
            prop_assume!(res.iter().all(|r| r.abs() > 1e-9));
            let scaled = &w * alpha;
            prop_assert_eq!(cone.admits(&w, 0.0), cone.admits(&scaled, 0.0));
        }

        #[test]
        fn constructed_members_are_admitted_with_cop_inside(
            fz in 1.0f64..100.0,
            a in -1.0f64..1.0, b in -1.0f64..1.0,
            c in -1.0f64..1.0, d in -1.0f64..1.0,
            s in 0.0f64..1.0,
        ) {
            let (mu, dx, dy) = (0.4, 0.08, 0.06);
            let cone = surface_cone(mu, dx, dy).unwrap();
            let (fx, fy) = (a * mu * fz, b * mu * fz);
            let (tx, ty) = (c * dy * fz, d * dx * fz);
            let tz_min = -mu * (dx + dy) * fz
                + (dy * fx - mu * tx).abs() + (dx * fy - mu * ty).abs();
            let tz_max = mu * (dx + dy) * fz
                - (dy * fx + mu * tx).abs() - (dx * fy + mu * ty).abs();
            prop_assume!(tz_min <= tz_max);
            let tz = tz_min + s * (tz_max - tz_min);
            let w = DVector::from_column_slice(&[tx, ty, tz, fx, fy, fz]);
            prop_assert!(cone.admits(&w, 1e-9));
            prop_assert!((w[0] / w[5]).abs() <= dy + 1e-9);
            prop_assert!((w[1] / w[5]).abs() <= dx + 1e-9);
        }
    }
}
