//! Dual active-set solver for strictly convex QPs.
//!
//! The method starts from the unconstrained minimizer, installs the
//! equality constraints, then repeatedly picks the most violated
//! inequality (ties broken by lowest index) and takes primal/dual steps
//! until it becomes active or a blocking constraint is dropped. The dual
//! objective is nondecreasing along the way, which is what makes the
//! method finite.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

const FEAS_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-12;
/// Relative threshold below which a constraint normal counts as linearly
/// dependent on the active set.
const DEP_TOL: f64 = 1e-9;
/// Relative tolerance on the right-hand-side defect of dependent equality
/// rows before the system counts as contradictory. Kept below downstream
/// consistency checks (torque extraction tolerates 1e-6 absolute) so an
/// accepted defect can never resurface as a hard failure there.
const EQ_CONSISTENCY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("cost Hessian is not symmetric positive definite")]
    NotConvex,
    #[error("problem dimensions are inconsistent: {0}")]
    Dimension(String),
    #[error("constraints are infeasible (violated inequality {violated}, active set {active:?})")]
    Infeasible { violated: usize, active: Vec<usize> },
    #[error("equality constraints are mutually contradictory (defect {defect:.3e})")]
    InconsistentEqualities { defect: f64 },
    #[error("iteration limit reached after {0} iterations")]
    IterationLimit(usize),
    #[error("problem contains non-finite data")]
    NonFinite,
}

/// `minimize 1/2 x' H x + c' x  s.t.  A_eq x = b_eq,  A_in x >= b_in`.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Problem with no constraints.
    pub fn unconstrained(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::Dimension(format!(
                "H is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimension("equality block shape".into()));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err(QpError::Dimension("inequality block shape".into()));
        }
        if self.a_eq.nrows() > n {
            return Err(QpError::Dimension(format!(
                "{} equality rows exceed {} variables",
                self.a_eq.nrows(),
                n
            )));
        }
        let finite = self.h.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.a_in.iter().all(|v| v.is_finite())
            && self.b_in.iter().all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        if (&self.h - self.h.transpose()).amax() > 1e-9 * (1.0 + self.h.amax()) {
            return Err(QpError::NotConvex);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of tight inequality constraints, ascending.
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers for the equality constraints.
    pub eq_duals: DVector<f64>,
    /// Multipliers for all inequality constraints (zero when inactive).
    pub in_duals: DVector<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Active {
    /// Row index into `a_eq` (if `is_eq`) or `a_in`.
    idx: usize,
    is_eq: bool,
    /// Equality rows are sign-flipped when installed from the satisfied side.
    flipped: bool,
    dual: f64,
}

struct Workspace<'a> {
    p: &'a QpProblem,
    chol: Cholesky<f64, nalgebra::Dyn>,
    x: DVector<f64>,
    active: Vec<Active>,
    iterations: usize,
    max_iterations: usize,
}

impl<'a> Workspace<'a> {
    fn normal(&self, a: &Active) -> DVector<f64> {
        let row = if a.is_eq {
            self.p.a_eq.row(a.idx).transpose()
        } else {
            self.p.a_in.row(a.idx).transpose()
        };
        if a.flipped {
            -row
        } else {
            row
        }
    }

    fn active_ineq_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .active
            .iter()
            .filter(|a| !a.is_eq)
            .map(|a| a.idx)
            .collect();
        v.sort_unstable();
        v
    }

    /// Install one constraint (possibly dropping blockers along the way).
    fn add_constraint(&mut self, idx: usize, is_eq: bool) -> Result<(), QpError> {
        let (mut n_plus, mut b_plus) = if is_eq {
            (self.p.a_eq.row(idx).transpose(), self.p.b_eq[idx])
        } else {
            (self.p.a_in.row(idx).transpose(), self.p.b_in[idx])
        };
        let mut flipped = false;
        let s0 = n_plus.dot(&self.x) - b_plus;
        if is_eq {
            if s0.abs() <= FEAS_TOL {
                // Already satisfied. Install only if independent of the
                // current active normals, otherwise it is implied.
                if self.direction(&n_plus).2 > DEP_TOL {
                    self.active.push(Active {
                        idx,
                        is_eq,
                        flipped,
                        dual: 0.0,
                    });
                }
                return Ok(());
            }
            if s0 > 0.0 {
                n_plus = -n_plus;
                b_plus = -b_plus;
                flipped = true;
            }
        }
        let mut u_plus = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(QpError::IterationLimit(self.iterations));
            }
            let (z, r, rel) = self.direction(&n_plus);
            let s = n_plus.dot(&self.x) - b_plus;
            if s >= -FEAS_TOL {
                if rel > DEP_TOL {
                    // Satisfied while stepping; keep it active with its dual.
                    self.active.push(Active {
                        idx,
                        is_eq,
                        flipped,
                        dual: u_plus,
                    });
                } else if u_plus > 0.0 {
                    // Satisfied but dependent: its normal is N r, so fold
                    // the accumulated multiplier back into the active set
                    // to preserve stationarity without degrading the basis.
                    for (slot, a) in self.active.iter_mut().enumerate() {
                        a.dual += u_plus * r[slot];
                    }
                }
                return Ok(());
            }
            // Dual step bound: first blocking active inequality.
            let mut t1 = f64::INFINITY;
            let mut blocker: Option<usize> = None;
            for (slot, a) in self.active.iter().enumerate() {
                if a.is_eq {
                    continue;
                }
                let rj = r[slot];
                if rj > DUAL_TOL {
                    let t = a.dual / rj;
                    if t < t1 - 1e-15 || (t < t1 + 1e-15 && blocker.map_or(true, |b| a.idx < self.active[b].idx)) {
                        t1 = t;
                        blocker = Some(slot);
                    }
                }
            }
            // Primal step bound: full satisfaction of the new constraint.
            // A dependent normal (rel at round-off level) gives no primal
            // direction; treating its residual as one can blow the iterate
            // off the constraint manifold.
            let ztn = z.dot(&n_plus);
            let t2 = if rel > DEP_TOL && ztn > 0.0 {
                -s / ztn
            } else {
                f64::INFINITY
            };
            if !t1.is_finite() && !t2.is_finite() {
                return Err(QpError::Infeasible {
                    violated: idx,
                    active: self.active_ineq_indices(),
                });
            }
            let t = t1.min(t2);
            if t.is_finite() && t > 0.0 {
                self.x += &z * t;
            }
            for (slot, a) in self.active.iter_mut().enumerate() {
                a.dual -= t * r[slot];
            }
            u_plus += t;
            if t2 <= t1 {
                self.active.push(Active {
                    idx,
                    is_eq,
                    flipped,
                    dual: u_plus,
                });
                return Ok(());
            }
            // Partial step: drop the blocking constraint and continue.
            self.active.remove(blocker.expect("finite t1 implies blocker"));
        }
    }

    /// One-shot re-solve of the equality-constrained problem on the current
    /// active set. The primal/dual stepping accumulates round-off from the
    /// truncated projections in `direction`, so the converged iterate can
    /// sit ~1e-9 (relative) off the active manifold; solving
    /// `min 1/2 x'Hx + c'x  s.t.  N'x = b_act` directly removes that drift.
    fn polish(&mut self) {
        let x_unc = -self.chol.solve(&self.p.c);
        let q = self.active.len();
        if q == 0 {
            self.x = x_unc;
            return;
        }
        let l = self.chol.l();
        let nvars = self.p.num_vars();
        let mut nmat = DMatrix::zeros(nvars, q);
        let mut b_act = DVector::zeros(q);
        for (slot, a) in self.active.iter().enumerate() {
            nmat.set_column(slot, &self.normal(a));
            let b = if a.is_eq {
                self.p.b_eq[a.idx]
            } else {
                self.p.b_in[a.idx]
            };
            b_act[slot] = if a.flipped { -b } else { b };
        }
        let bmat = l
            .solve_lower_triangular(&nmat)
            .expect("Cholesky factor is nonsingular");
        let svd = bmat.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let ut = svd.u.as_ref().expect("svd requested u");
        let vt = svd.v_t.as_ref().expect("svd requested v_t");
        let r = &b_act - nmat.transpose() * &x_unc;
        // x = x_unc + L^-T U S^-1 V' r, lambda = V S^-2 V' r (truncated).
        let mut y = vt * &r;
        for (i, sv) in svd.singular_values.iter().enumerate() {
            if *sv > DEP_TOL * smax {
                y[i] /= *sv;
            } else {
                y[i] = 0.0;
            }
        }
        let step = l
            .transpose()
            .solve_upper_triangular(&(ut * &y))
            .expect("Cholesky factor is nonsingular");
        self.x = x_unc + step;
        let mut y2 = y;
        for (i, sv) in svd.singular_values.iter().enumerate() {
            if *sv > DEP_TOL * smax {
                y2[i] /= *sv;
            } else {
                y2[i] = 0.0;
            }
        }
        let lambda = vt.transpose() * y2;
        for (slot, a) in self.active.iter_mut().enumerate() {
            a.dual = lambda[slot];
        }
    }

    /// Primal direction `z` (projected H^-1 n), dual direction `r` (one
    /// entry per active constraint slot), and the relative size of `z`.
    ///
    /// With H = L L', let u = L^-1 n and B = L^-1 N (active normals). The
    /// least-squares residual w = u - B r is the component of the new
    /// normal independent of the active set, and z = L^-T w. Working on B
    /// instead of the normal-equations matrix N' H^-1 N keeps the
    /// conditioning linear in cond(B), so `|w|/|u|` is a trustworthy
    /// dependence measure: near a degenerate vertex the residual is
    /// round-off, and treating it as a descent direction would send the
    /// iterate arbitrarily far from the constraint manifold.
    fn direction(&self, n_plus: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let l = self.chol.l();
        let u = l
            .solve_lower_triangular(n_plus)
            .expect("Cholesky factor is nonsingular");
        let q = self.active.len();
        if q == 0 {
            let z = l
                .transpose()
                .solve_upper_triangular(&u)
                .expect("Cholesky factor is nonsingular");
            return (z, DVector::zeros(0), 1.0);
        }
        let nvars = self.p.num_vars();
        let mut nmat = DMatrix::zeros(nvars, q);
        for (slot, a) in self.active.iter().enumerate() {
            nmat.set_column(slot, &self.normal(a));
        }
        let b = l
            .solve_lower_triangular(&nmat)
            .expect("Cholesky factor is nonsingular");
        let svd = b.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let ut = svd.u.as_ref().expect("svd requested u");
        let vt = svd.v_t.as_ref().expect("svd requested v_t");
        let mut y = ut.transpose() * &u;
        for (i, sv) in svd.singular_values.iter().enumerate() {
            if *sv > DEP_TOL * smax {
                y[i] /= *sv;
            } else {
                y[i] = 0.0;
            }
        }
        let r = vt.transpose() * y;
        let w = &u - b * &r;
        let z = l
            .transpose()
            .solve_upper_triangular(&w)
            .expect("Cholesky factor is nonsingular");
        let un = u.norm();
        let rel = if un > 0.0 { w.norm() / un } else { 0.0 };
        (z, r, rel)
    }
}

/// Solve a strictly convex QP. Deterministic for fixed input: the most
/// violated inequality is chosen each round, ties broken by lowest index.
pub fn qp_solve(p: &QpProblem, max_iterations: usize) -> Result<QpSolution, QpError> {
    p.validate()?;
    // A rank-deficient equality system is replaced by an orthonormal basis
    // of its row space before solving. Dependent rows add no information
    // when consistent, but the sequential install below would read a
    // round-off-level right-hand-side defect on such a row as a hard
    // infeasibility; defects beyond round-off are a real contradiction.
    let me = p.a_eq.nrows();
    if me > 0 {
        let svd = p.a_eq.clone().svd(true, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|sv| **sv > DEP_TOL * smax)
            .count();
        if rank < me {
            let u = svd.u.as_ref().expect("svd requested u");
            let ur = u.columns(0, rank);
            let b_r = ur.transpose() * &p.b_eq;
            let defect = (&p.b_eq - ur * &b_r).norm();
            if defect > EQ_CONSISTENCY_TOL * (1.0 + p.b_eq.norm()) {
                return Err(QpError::InconsistentEqualities { defect });
            }
            let reduced = QpProblem {
                a_eq: ur.transpose() * &p.a_eq,
                b_eq: b_r,
                ..p.clone()
            };
            let mut sol = qp_solve(&reduced, max_iterations)?;
            // Map the reduced multipliers back onto the original rows.
            sol.eq_duals = ur * sol.eq_duals;
            return Ok(sol);
        }
    }
    let chol = Cholesky::new(p.h.clone()).ok_or(QpError::NotConvex)?;
    let x0 = -chol.solve(&p.c);
    let mut ws = Workspace {
        p,
        chol,
        x: x0,
        active: Vec::new(),
        iterations: 0,
        max_iterations,
    };
    for k in 0..p.a_eq.nrows() {
        ws.add_constraint(k, true)?;
    }
    let mut polished = false;
    loop {
        // Most violated inactive inequality.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..p.a_in.nrows() {
            if ws.active.iter().any(|a| !a.is_eq && a.idx == i) {
                continue;
            }
            let s = p.a_in.row(i).transpose().dot(&ws.x) - p.b_in[i];
            if s < -FEAS_TOL {
                let better = match worst {
                    None => true,
                    Some((_, ws_)) => s < ws_ - 1e-15,
                };
                if better {
                    worst = Some((i, s));
                }
            }
        }
        match worst {
            Some((idx, _)) => {
                ws.add_constraint(idx, false)?;
                polished = false;
            }
            // Converged: polish once, and re-enter the sweep in case the
            // polished point exposes a marginally violated inequality.
            None if !polished => {
                ws.polish();
                polished = true;
            }
            None => break,
        }
    }
    let mut eq_duals = DVector::zeros(p.a_eq.nrows());
    let mut in_duals = DVector::zeros(p.a_in.nrows());
    for a in &ws.active {
        let d = if a.flipped { -a.dual } else { a.dual };
        if a.is_eq {
            eq_duals[a.idx] = d;
        } else {
            in_duals[a.idx] = d;
        }
    }
    let objective = 0.5 * ws.x.dot(&(&p.h * &ws.x)) + p.c.dot(&ws.x);
    Ok(QpSolution {
        active_set: ws.active_ineq_indices(),
        x: ws.x,
        objective,
        iterations: ws.iterations,
        eq_duals,
        in_duals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solve(p: &QpProblem) -> QpSolution {
        qp_solve(p, 200).expect("solvable")
    }

    #[test]
    fn unconstrained_minimum_at_origin() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        let sol = solve(&p);
        assert_abs_diff_eq!(sol.x, DVector::zeros(2), epsilon = 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn one_dim_bound_becomes_active() {
        // min x^2 s.t. x >= 1
        let mut p = QpProblem::unconstrained(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
        );
        p.a_in = DMatrix::from_element(1, 1, 1.0);
        p.b_in = DVector::from_element(1, 1.0);
        let sol = solve(&p);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn equality_constrained() {
        // min 1/2 (x^2 + y^2) s.t. x + y = 2 -> (1, 1)
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 2.0);
        let sol = solve(&p);
        assert_abs_diff_eq!(sol.x, DVector::from_column_slice(&[1.0, 1.0]), epsilon = 1e-10);
    }

    #[test]
    fn detects_indefinite_hessian() {
        let p = QpProblem::unconstrained(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
        );
        assert!(matches!(qp_solve(&p, 100), Err(QpError::NotConvex)));
    }

    #[test]
    fn detects_infeasible() {
        // x >= 1 and -x >= 1
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1));
        p.a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        p.b_in = DVector::from_column_slice(&[1.0, 1.0]);
        match qp_solve(&p, 100) {
            Err(QpError::Infeasible { violated, active }) => {
                assert!(violated < 2);
                assert!(!active.is_empty() || violated < 2);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut p = QpProblem::unconstrained(
            DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]),
            DVector::from_column_slice(&[-1.0, 2.0, 0.3]),
        );
        p.a_eq = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 1.0);
        p.a_in = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        p.b_in = DVector::from_column_slice(&[0.2, -0.1]);
        let sol = solve(&p);
        // Stationarity: H x + c = A_eq' l + A_in' mu
        let grad = &p.h * &sol.x + &p.c
            - p.a_eq.transpose() * &sol.eq_duals
            - p.a_in.transpose() * &sol.in_duals;
        assert!(grad.amax() < 1e-7, "stationarity residual {}", grad.amax());
        // Primal feasibility
        assert!((&p.a_eq * &sol.x - &p.b_eq).amax() < 1e-8);
        let slack = &p.a_in * &sol.x - &p.b_in;
        assert!(slack.min() > -1e-8);
        // Dual feasibility + complementary slackness
        for i in 0..2 {
            assert!(sol.in_duals[i] > -1e-9);
            assert!(sol.in_duals[i] * slack[i] < 1e-7);
        }
    }
}
