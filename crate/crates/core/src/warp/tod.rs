//! Off-diagonal energy penalty on warp matrices.
//!
//! The penalty is `λ · Σ_{i≠j} P_ij²`. Identity and diagonal warps have no
//! off-diagonal entries and always score zero. Kronecker warps are penalized
//! factor-wise, `λ · (Σ_{i≠j} A_ij² + Σ_{i≠j} B_ij²)`, which vanishes exactly
//! when `A ⊗ B` is diagonal.

use super::WarpMatrix;

fn offdiag_sq(entries: &[f64], n: usize) -> f64 {
    entries
        .iter()
        .enumerate()
        .filter(|(k, _)| k / n != k % n)
        .map(|(_, x)| x * x)
        .sum()
}

fn offdiag_grad(entries: &[f64], n: usize, lambda: f64, out: &mut Vec<f64>) {
    out.extend(entries.iter().enumerate().map(|(k, x)| {
        if k / n != k % n {
            2.0 * lambda * x
        } else {
            0.0
        }
    }));
}

pub fn tod_penalty(warp: &WarpMatrix, lambda: f64) -> f64 {
    match warp {
        WarpMatrix::Identity { .. } | WarpMatrix::Diagonal { .. } => 0.0,
        WarpMatrix::Dense { dim, entries } => lambda * offdiag_sq(entries, *dim),
        WarpMatrix::Kronecker { a_dim, b_dim, a, b } => {
            lambda * (offdiag_sq(a, *a_dim) + offdiag_sq(b, *b_dim))
        }
    }
}

/// Gradient of [`tod_penalty`] over the entries of [`WarpMatrix::params`].
pub fn tod_gradient(warp: &WarpMatrix, lambda: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(warp.param_count());
    match warp {
        WarpMatrix::Identity { .. } => {}
        WarpMatrix::Diagonal { diag } => out.resize(diag.len(), 0.0),
        WarpMatrix::Dense { dim, entries } => offdiag_grad(entries, *dim, lambda, &mut out),
        WarpMatrix::Kronecker { a_dim, b_dim, a, b } => {
            offdiag_grad(a, *a_dim, lambda, &mut out);
            offdiag_grad(b, *b_dim, lambda, &mut out);
        }
    }
    out
}

/// Frobenius norm of the off-diagonal part, `√(Σ_{i≠j} P_ij²)`, of the
/// materialized matrix.
pub fn offdiag_norm(warp: &WarpMatrix) -> f64 {
    match warp {
        WarpMatrix::Identity { .. } | WarpMatrix::Diagonal { .. } => 0.0,
        WarpMatrix::Dense { dim, entries } => offdiag_sq(entries, *dim).sqrt(),
        WarpMatrix::Kronecker { .. } => {
            let m = warp.materialize();
            offdiag_sq(m.data(), warp.dim()).sqrt()
        }
    }
}
