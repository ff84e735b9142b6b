//! Norms, matrix square roots and projections onto the convex sets used by
//! the solvers (PSD cone, ℓ1-type balls).

use num_complex::Complex64;

use super::decomp::{singular_values, svd_compact, sym_eig, sym_eig_warm, SymEig};
use super::fourier::ComplexVector;
use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

/// Eigenvalues down to `-PSD_SLACK * ‖a‖_op` count as zero.
pub const PSD_SLACK: f64 = 1e-9;
/// Below `-NOT_PSD * ‖a‖_op` the input is rejected as indefinite.
pub const NOT_PSD: f64 = 1e-6;

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> f64 {
    singular_values(a).iter().sum()
}

/// Symmetric PSD square root `S` with `S² = a`.
pub fn principal_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    check_psd(&eig)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

fn check_psd(eig: &SymEig) -> Result<()> {
    let op = eig.op_norm();
    let min = eig.min_eigenvalue();
    if min < -NOT_PSD * op {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            op_norm: op,
        });
    }
    Ok(())
}

/// Moore-Penrose pseudoinverse square root of a symmetric PSD matrix:
/// eigenvalues above `rel_tol * λ_max` map to `λ^{-1/2}`, the rest to zero.
pub fn pinv_sqrt_psd(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    check_psd(&eig)?;
    let cut = rel_tol * eig.op_norm();
    Ok(eig.reconstruct_with(|l| if l > cut && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 }))
}

/// Nearest PSD matrix in Frobenius norm (eigenvalue clipping).
pub fn psd_project(a: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(a)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0)))
}

/// PSD projection that keeps the last eigenbasis to warm-start the next call.
/// Inside iterative solvers consecutive inputs are close, so the Jacobi sweeps
/// converge almost immediately.
#[derive(Debug, Default, Clone)]
pub struct PsdProjector {
    basis: Option<Matrix>,
}

impl PsdProjector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn project(&mut self, a: &Matrix) -> Result<Matrix> {
        let eig = match &self.basis {
            Some(b) if b.shape() == a.shape() => sym_eig_warm(a, b)?,
            _ => sym_eig(a)?,
        };
        let out = eig.reconstruct_with(|l| l.max(0.0));
        self.basis = Some(eig.eigenvectors);
        Ok(out)
    }
}

/// Soft threshold `τ ≥ 0` such that `Σ (x_i − τ)_+ = budget` for nonnegative
/// `x` with `Σ x_i > budget`; returns 0 when `x` is already inside the ball.
pub(crate) fn l1_threshold(x: &[f64], budget: f64) -> f64 {
    let total: f64 = x.iter().sum();
    if total <= budget {
        return 0.0;
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - budget) / (k + 1) as f64;
        if *v > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

/// Euclidean projection of nonnegative values onto `{ Σ x ≤ budget, x ≥ 0 }`.
pub(crate) fn project_nonneg_l1(x: &[f64], budget: f64) -> Vec<f64> {
    let tau = l1_threshold(x, budget);
    x.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Projection onto `{ Σ_k |c_k| ≤ budget }` that preserves every phase.
/// Conjugate symmetry of the input is preserved.
pub fn simplex_project_magnitudes(c: &ComplexVector, budget: f64) -> Result<ComplexVector> {
    if !(budget > 0.0) {
        return Err(invalid(format!("budget must be positive, got {budget}")));
    }
    let mags = c.magnitudes();
    let tau = l1_threshold(&mags, budget);
    if tau == 0.0 {
        return Ok(c.clone());
    }
    let out = c
        .as_slice()
        .iter()
        .zip(&mags)
        .map(|(z, &r)| if r > tau { z * ((r - tau) / r) } else { Complex64::new(0.0, 0.0) })
        .collect();
    ComplexVector::new(out)
}

/// Projection onto the nuclear-norm ball `{ ‖a‖_* ≤ budget }`: singular values
/// are projected onto the ℓ1 simplex.
pub fn project_nuclear_ball(a: &Matrix, budget: f64) -> Result<Matrix> {
    if !(budget > 0.0) {
        return Err(invalid(format!("budget must be positive, got {budget}")));
    }
    let svd = svd_compact(a, 1e-14)?;
    let total: f64 = svd.singular_values.iter().sum();
    if total <= budget {
        return Ok(a.clone());
    }
    let mut shrunk = svd.clone();
    shrunk.singular_values = project_nonneg_l1(&svd.singular_values, budget);
    Ok(shrunk.reconstruct())
}
