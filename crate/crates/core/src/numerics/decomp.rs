//! Jacobi-based dense decompositions: one-sided Jacobi SVD and cyclic Jacobi
//! symmetric eigendecomposition. Both target the small dense matrices of this
//! crate (tens to a few hundred rows).

use super::matrix::{dot, Matrix};
use crate::error::{invalid, Result};

const MAX_SWEEPS: usize = 100;

/// Compact singular value decomposition `a = u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m x r`, orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, strictly positive, length `r`.
    pub singular_values: Vec<f64>,
    /// `n x r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for j in 0..self.rank() {
            for i in 0..us.rows() {
                us[(i, j)] *= self.singular_values[j];
            }
        }
        us.matmul_t(&self.v)
    }
}

/// Compact SVD keeping singular values `> rank_tol * s_max`.
pub fn svd_compact(a: &Matrix, rank_tol: f64) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(invalid("svd of a non-finite matrix"));
    }
    if !(rank_tol > 0.0) {
        return Err(invalid(format!("rank tolerance must be positive, got {rank_tol}")));
    }
    let (u, s, v) = if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose());
        (v, s, u)
    };
    let s_max = s.first().copied().unwrap_or(0.0);
    let r = s.iter().take_while(|&&x| x > rank_tol * s_max && x > 0.0).count();
    let keep: Vec<usize> = (0..r).collect();
    Ok(SvdResult {
        u: u.select_columns(&keep),
        singular_values: s[..r].to_vec(),
        v: v.select_columns(&keep),
    })
}

/// All `min(m, n)` singular values, nonincreasing.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let t;
    let tall = if a.rows() >= a.cols() {
        a
    } else {
        t = a.transpose();
        &t
    };
    let mut cols = columns_of(tall);
    hestenes(&mut cols, None);
    let mut s: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn columns_of(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols()).map(|j| a.column(j)).collect()
}

/// One-sided Jacobi on the columns of a tall matrix. Returns full-width
/// factors (`u` is m x n, possibly with zero columns), sorted.
fn jacobi_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let n = a.cols();
    let mut cols = columns_of(a);
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    hestenes(&mut cols, Some(&mut v));

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));

    let m = a.rows();
    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sj = norms[j];
        s.push(sj);
        if sj > 0.0 {
            for i in 0..m {
                u[(i, k)] = cols[j][i] / sj;
            }
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    (u, s, vm)
}

fn hestenes(cols: &mut [Vec<f64>], mut v: Option<&mut Vec<Vec<f64>>>) {
    let n = cols.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(cols, p, q, c, s);
                if let Some(v) = v.as_deref_mut() {
                    rotate_pair(v, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Symmetric eigendecomposition `a = Q · diag(λ) · Qᵀ`, eigenvalues
/// nonincreasing, eigenvectors in the columns of `Q`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mut scaled = q.clone();
        for (j, lam) in self.eigenvalues.iter().enumerate() {
            let fl = f(*lam);
            for i in 0..n {
                scaled[(i, j)] *= fl;
            }
        }
        scaled.matmul_t(q)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    pub fn op_norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cyclic Jacobi eigensolver for symmetric input (symmetry checked to
/// `1e-10` relative).
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    check_symmetric(a)?;
    Ok(jacobi_eig(a.symmetrize(), None))
}

/// Same as [`sym_eig`] but starts from an approximate eigenbasis `basis`
/// (e.g. from a previous iteration), which makes nearby problems converge in
/// one or two sweeps.
pub fn sym_eig_warm(a: &Matrix, basis: &Matrix) -> Result<SymEig> {
    check_symmetric(a)?;
    if basis.shape() != a.shape() {
        return Err(invalid("warm-start basis shape mismatch"));
    }
    let rotated = basis.t_matmul(&a.symmetrize()).matmul(basis).symmetrize();
    Ok(jacobi_eig(rotated, Some(basis)))
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(invalid(format!("eigendecomposition of non-square {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(invalid("eigendecomposition of a non-finite matrix"));
    }
    if !a.is_symmetric(1e-10) {
        return Err(invalid("matrix is not symmetric"));
    }
    Ok(())
}

fn jacobi_eig(mut a: Matrix, basis: Option<&Matrix>) -> SymEig {
    let n = a.rows();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let diag = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diag[y].total_cmp(&diag[x]));
    let eigenvalues = order.iter().map(|&j| diag[j]).collect();
    let mut q = v.select_columns(&order);
    if let Some(b) = basis {
        q = b.matmul(&q);
    }
    SymEig {
        eigenvalues,
        eigenvectors: q,
    }
}
