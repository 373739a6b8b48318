//! Assembly of the reaction-force / relaxation quadratic program.
//!
//! Decision vector: `x = [F_r; delta]` where `F_r` stacks the contact
//! wrenches and `delta` relaxes the first-task acceleration command.
//! The equality block enforces the floating-base rows of the equations of
//! motion; the inequality block is the augmented wrench-cone matrix.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::constraints::ConeMatrix;

use super::QpProblem;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("weights must be positive, got q1={0}, q2={1}")]
    NonPositiveWeight(f64, f64),
}

/// Inputs for the reaction-force problem at one control cycle.
///
/// "Floating rows" below means the first `floating_dim` rows of the
/// corresponding full-dimensional quantity (empty for fixed-base models).
#[derive(Clone, Debug)]
pub struct FirstTaskQp {
    /// Floating rows of the mass matrix, `n_f x m`.
    pub s_f_a: DMatrix<f64>,
    /// Floating rows of the nonlinear bias forces `b + g`, length `n_f`.
    pub s_f_bias: DVector<f64>,
    /// Stacked contact Jacobian, `n_F x m`.
    pub j_contact: DMatrix<f64>,
    /// Contact-consistent acceleration with zero relaxation, length `m`.
    pub qddot1: DVector<f64>,
    /// Maps the relaxation onto accelerations: `m x k1` dynamically
    /// consistent inverse of the projected first-task Jacobian.
    pub jbar1p: DMatrix<f64>,
    /// Augmented cone inequality `W F_r >= offset`.
    pub cones: ConeMatrix,
    /// Weight on the stacked forces.
    pub q1: f64,
    /// Weight on the relaxation; choose `q2 >> q1` so forces are spent
    /// before the first task is relaxed.
    pub q2: f64,
}

/// Index layout of the assembled decision vector.
#[derive(Clone, Copy, Debug)]
pub struct WbdcQpLayout {
    pub n_forces: usize,
    pub n_delta: usize,
}

impl WbdcQpLayout {
    pub fn num_vars(&self) -> usize {
        self.n_forces + self.n_delta
    }

    /// Splits a solution vector into (forces, relaxation).
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x.rows(0, self.n_forces).into_owned(),
            x.rows(self.n_forces, self.n_delta).into_owned(),
        )
    }
}

impl FirstTaskQp {
    fn check(&self) -> Result<(usize, usize, usize, usize), AssemblyError> {
        if !(self.q1 > 0.0 && self.q2 > 0.0) {
            return Err(AssemblyError::NonPositiveWeight(self.q1, self.q2));
        }
        let m = self.s_f_a.ncols();
        let nf = self.s_f_a.nrows();
        let n_forces = self.j_contact.nrows();
        let n_delta = self.jbar1p.ncols();
        if self.s_f_bias.len() != nf {
            return Err(AssemblyError::Dimension(format!(
                "bias has {} rows, expected {nf}",
                self.s_f_bias.len()
            )));
        }
        if self.j_contact.ncols() != m {
            return Err(AssemblyError::Dimension(format!(
                "contact jacobian has {} cols, expected {m}",
                self.j_contact.ncols()
            )));
        }
        if self.qddot1.len() != m {
            return Err(AssemblyError::Dimension(format!(
                "qddot1 has {} rows, expected {m}",
                self.qddot1.len()
            )));
        }
        if self.jbar1p.nrows() != m {
            return Err(AssemblyError::Dimension(format!(
                "jbar1p has {} rows, expected {m}",
                self.jbar1p.nrows()
            )));
        }
        if self.cones.w.ncols() != n_forces {
            return Err(AssemblyError::Dimension(format!(
                "cone matrix has {} cols, expected {n_forces}",
                self.cones.w.ncols()
            )));
        }
        if self.cones.offset.len() != self.cones.w.nrows() {
            return Err(AssemblyError::Dimension(format!(
                "cone offset has {} rows, expected {}",
                self.cones.offset.len(),
                self.cones.w.nrows()
            )));
        }
        Ok((m, nf, n_forces, n_delta))
    }

    /// Floating-base force-balance rows on the forces alone:
    /// `(S_f J_c') F_r = S_f (A qddot1 + b + g)`. `S_f J_c'` is the first
    /// `n_f` columns of the contact Jacobian, transposed.
    fn force_balance(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nf = self.s_f_a.nrows();
        let a_eq = self.j_contact.columns(0, nf).transpose().into_owned();
        let b_eq = &self.s_f_a * &self.qddot1 + &self.s_f_bias;
        (a_eq, b_eq)
    }
}

/// Builds the full relaxed problem over `[F_r; delta]`:
///
/// ```text
///     minimize    q1 |F_r|^2 + q2 |delta|^2
///     subject to  S_f J_c' F_r - S_f A Jbar1p delta = S_f (A qddot1 + b + g)
///                 W F_r >= offset
/// ```
pub fn build_wbdc_qp(input: &FirstTaskQp) -> Result<(QpProblem, WbdcQpLayout), AssemblyError> {
    let (_m, nf, n_forces, n_delta) = input.check()?;
    let n = n_forces + n_delta;
    let layout = WbdcQpLayout { n_forces, n_delta };

    let mut h = DMatrix::zeros(n, n);
    for i in 0..n_forces {
        h[(i, i)] = 2.0 * input.q1;
    }
    for i in 0..n_delta {
        h[(n_forces + i, n_forces + i)] = 2.0 * input.q2;
    }

    let (eq_f, b_eq) = input.force_balance();
    let mut a_eq = DMatrix::zeros(nf, n);
    a_eq.view_mut((0, 0), (nf, n_forces)).copy_from(&eq_f);
    if n_delta > 0 {
        let eq_d = -(&input.s_f_a * &input.jbar1p);
        a_eq.view_mut((0, n_forces), (nf, n_delta)).copy_from(&eq_d);
    }

    let n_in = input.cones.w.nrows();
    let mut a_in = DMatrix::zeros(n_in, n);
    a_in.view_mut((0, 0), (n_in, n_forces))
        .copy_from(&input.cones.w);

    Ok((
        QpProblem {
            h,
            c: DVector::zeros(n),
            a_eq,
            b_eq,
            a_in,
            b_in: input.cones.offset.clone(),
        },
        layout,
    ))
}

/// Builds the unrelaxed problem over the forces alone (same equality and
/// cone rows, `delta` pinned to zero). Used to detect whether the first
/// task is achievable without relaxation.
pub fn build_force_only_qp(input: &FirstTaskQp) -> Result<QpProblem, AssemblyError> {
    let (_m, _nf, n_forces, _n_delta) = input.check()?;
    let mut h = DMatrix::zeros(n_forces, n_forces);
    for i in 0..n_forces {
        h[(i, i)] = 2.0 * input.q1;
    }
    let (a_eq, b_eq) = input.force_balance();
    Ok(QpProblem {
        h,
        c: DVector::zeros(n_forces),
        a_eq,
        b_eq,
        a_in: input.cones.w.clone(),
        b_in: input.cones.offset.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::qp_solve;
    use approx::assert_relative_eq;

    /// One force variable, one relaxation variable, scalar force balance
    /// `F - delta = 1`, force bounded above by the cone row `-F >= -0.6`.
    fn toy(q1: f64, q2: f64, f_cap: Option<f64>) -> FirstTaskQp {
        let cones = match f_cap {
            Some(cap) => ConeMatrix {
                w: DMatrix::from_row_slice(1, 1, &[-1.0]),
                offset: DVector::from_element(1, -cap),
            },
            None => ConeMatrix {
                w: DMatrix::zeros(0, 1),
                offset: DVector::zeros(0),
            },
        };
        FirstTaskQp {
            s_f_a: DMatrix::from_row_slice(1, 1, &[1.0]),
            s_f_bias: DVector::from_element(1, 1.0),
            j_contact: DMatrix::from_row_slice(1, 1, &[1.0]),
            qddot1: DVector::zeros(1),
            jbar1p: DMatrix::from_row_slice(1, 1, &[1.0]),
            cones,
            q1,
            q2,
        }
    }

    #[test]
    fn relaxation_weight_ordering() {
        // minimize q1 F^2 + q2 d^2 s.t. F - d = 1 has solution
        // F = q2/(q1+q2), d = -q1/(q1+q2): heavy q2 keeps d near zero.
        let (p, layout) = build_wbdc_qp(&toy(1.0, 100.0, None)).unwrap();
        let sol = qp_solve(&p, 50).unwrap();
        let (f, d) = layout.split(&sol.x);
        assert_relative_eq!(f[0], 100.0 / 101.0, epsilon = 1e-10);
        assert_relative_eq!(d[0], -1.0 / 101.0, epsilon = 1e-10);

        let (p_flat, layout_flat) = build_wbdc_qp(&toy(1.0, 1.0, None)).unwrap();
        let sol_flat = qp_solve(&p_flat, 50).unwrap();
        let (_, d_flat) = layout_flat.split(&sol_flat.x);
        assert!(d[0].abs() < d_flat[0].abs());
    }

    #[test]
    fn cone_row_forces_relaxation() {
        // Force capped at 0.6 but balance needs F - d = 1: d picks up the rest.
        let (p, layout) = build_wbdc_qp(&toy(1.0, 100.0, Some(0.6))).unwrap();
        let sol = qp_solve(&p, 50).unwrap();
        let (f, d) = layout.split(&sol.x);
        assert!(f[0] <= 0.6 + 1e-10);
        assert_relative_eq!(f[0] - d[0], 1.0, epsilon = 1e-10);
        assert!(d[0].abs() > 1e-3);
    }

    #[test]
    fn force_only_matches_relaxed_when_unconstrained() {
        let input = toy(1.0, 100.0, Some(2.0));
        let p = build_force_only_qp(&input).unwrap();
        let sol = qp_solve(&p, 50).unwrap();
        // F = 1 satisfies the balance and the slack cone row exactly.
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn dimension_errors_are_reported() {
        let mut input = toy(1.0, 1.0, None);
        input.s_f_bias = DVector::zeros(2);
        assert!(matches!(
            build_wbdc_qp(&input),
            Err(AssemblyError::Dimension(_))
        ));
        let mut bad_w = toy(1.0, 1.0, None);
        bad_w.q2 = 0.0;
        assert!(matches!(
            build_wbdc_qp(&bad_w),
            Err(AssemblyError::NonPositiveWeight(_, _))
        ));
    }
}
