//! Dense linear-algebra primitives shared by the controller stack:
//! tolerance-aware pseudoinverse, dynamically consistent inverse,
//! null-space projectors, and numerical rank.
//!
//! All pseudoinverses route through SVD because projected Jacobians
//! (products of the form `J * N`) are rank-deficient by construction.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
}

/// Configuration for rank decisions inside pseudoinverses.
#[derive(Clone, Copy, Debug)]
pub struct PinvConfig {
    /// Relative cutoff: singular values below `tol * sigma_max` are dropped.
    pub singular_value_tolerance: f64,
}

impl Default for PinvConfig {
    fn default() -> Self {
        Self {
            singular_value_tolerance: 1e-8,
        }
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<(), LinalgError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::InvalidMatrix)
    }
}

/// Moore–Penrose pseudoinverse with relative singular-value cutoff.
pub fn svd_pinv(m: &DMatrix<f64>, cfg: &PinvConfig) -> Result<DMatrix<f64>, LinalgError> {
    svd_pinv_floored(m, cfg, 0.0)
}

/// [`svd_pinv`] with an additional absolute cutoff floor. Singular values
/// below `max(tol * sigma_max, floor)` are dropped; use a floor derived
/// from an external scale when the matrix itself may be numerically zero
/// (e.g. a fully projected-out task Jacobian).
pub fn svd_pinv_floored(
    m: &DMatrix<f64>,
    cfg: &PinvConfig,
    floor: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = (cfg.singular_value_tolerance * sigma_max).max(floor);
    let u = svd.u.as_ref().expect("svd requested u");
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let mut inv_s = DVector::zeros(svd.singular_values.len());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff && *s > 0.0 {
            inv_s[i] = 1.0 / s;
        }
    }
    // pinv = V * S^+ * U^T
    let mut scaled_ut = u.transpose();
    for (i, mut row) in scaled_ut.row_iter_mut().enumerate() {
        let f = inv_s[i];
        row.iter_mut().for_each(|v| *v *= f);
    }
    Ok(vt.transpose() * scaled_ut)
}

/// Dynamically consistent inverse `A^-1 J^T (J A^-1 J^T)^+`.
///
/// `a_inv` is the inverse of the (SPD) mass matrix. Rank-deficient `j` is
/// permitted; the inner inverse uses [`svd_pinv`].
pub fn dyn_consistent_inv(
    j: &DMatrix<f64>,
    a_inv: &DMatrix<f64>,
    cfg: &PinvConfig,
) -> Result<DMatrix<f64>, LinalgError> {
    dyn_consistent_inv_floored(j, a_inv, cfg, 0.0)
}

/// [`dyn_consistent_inv`] with an absolute floor on the inner inverse's
/// singular values. Pass `tol * sigma_max(J_raw A^-1 J_raw^T)` when `j` is
/// a projected Jacobian `J_raw * N`: directions the projector removed are
/// then dropped instead of amplified.
pub fn dyn_consistent_inv_floored(
    j: &DMatrix<f64>,
    a_inv: &DMatrix<f64>,
    cfg: &PinvConfig,
    floor: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    check_finite(j)?;
    check_finite(a_inv)?;
    if a_inv.nrows() != a_inv.ncols() {
        return Err(LinalgError::DimensionError(format!(
            "a_inv must be square, got {}x{}",
            a_inv.nrows(),
            a_inv.ncols()
        )));
    }
    if j.ncols() != a_inv.nrows() {
        return Err(LinalgError::DimensionError(format!(
            "j has {} cols but a_inv is {}x{}",
            j.ncols(),
            a_inv.nrows(),
            a_inv.ncols()
        )));
    }
    let lambda_inv = j * a_inv * j.transpose();
    let lambda = svd_pinv_floored(&lambda_inv, cfg, floor)?;
    Ok(a_inv * j.transpose() * lambda)
}

/// Cutoff floor for inverting a projected Jacobian's task-space inertia:
/// `tol * sigma_max(J A^-1 J^T)` of the raw (unprojected) Jacobian.
pub fn projected_task_floor(
    j_raw: &DMatrix<f64>,
    a_inv: &DMatrix<f64>,
    cfg: &PinvConfig,
) -> Result<f64, LinalgError> {
    check_finite(j_raw)?;
    if j_raw.nrows() == 0 {
        return Ok(0.0);
    }
    let lambda_inv = j_raw * a_inv * j_raw.transpose();
    // A floor tied to the unprojected task scale, well above the relative
    // cutoff: directions a projector has (numerically) blocked must invert
    // to zero, not amplify projector round-off into huge corrections.
    let rel = cfg.singular_value_tolerance.max(1e-6);
    Ok(rel * lambda_inv.singular_values().max())
}

/// Null-space projector `N = I - j_bar * j`.
///
/// `j_bar` must be a (dynamically consistent) generalized inverse of `j`.
/// An empty `j` (zero rows) yields the identity.
pub fn null_projector(j: &DMatrix<f64>, j_bar: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = j.ncols();
    if j.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if j_bar.nrows() != n || j_bar.ncols() != j.nrows() {
        return Err(LinalgError::DimensionError(format!(
            "j is {}x{} but j_bar is {}x{}",
            j.nrows(),
            j.ncols(),
            j_bar.nrows(),
            j_bar.ncols()
        )));
    }
    Ok(DMatrix::identity(n, n) - j_bar * j)
}

/// Number of singular values above `tol * sigma_max`; 0 for a zero matrix.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize, LinalgError> {
    check_finite(m)?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let sv = m.clone().singular_values();
    let sigma_max = sv.max();
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let cutoff = tol * sigma_max;
    Ok(sv.iter().filter(|s| **s > cutoff).count())
}
