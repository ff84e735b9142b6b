//! Cyclic-shift symmetry: circulant logit matrices, the convex program over
//! generating vectors, and the Gram square-root identities.
//!
//! For a block-circulant `Z = [circ(z_1) | ⋯ | circ(z_b)]` the Gram `ZZᵀ` is
//! circulant with eigenvalues `Σ_i |λ_{ik}|²`, where `λ_i = dft(z_i)`. Hence
//! `‖Z‖_* = Σ_k ‖(λ_{1k}, …, λ_{bk})‖₂`, a group-ℓ1 norm over frequencies.
//! Parseval makes the Euclidean metric on generators a multiple of the one on
//! DFT coefficients, so the projection onto that ball is an exact group soft
//! threshold.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::circulant_project;
use crate::error::{invalid, Error, Result};
use crate::exec::{check_cancel, CancelToken};
use crate::groups::is_uniform;
use crate::layer_peeled::{check_budgets, cross_entropy, softmax_columns, FactorPair, SIMPLEX_TOL};
use crate::numerics::{
    dft, idft_unchecked, l1_threshold, simplex_project_magnitudes, svd_compact,
    ComplexVector, Matrix, RANK_TOL,
};

/// Circulant matrix whose column `j` is `z` cyclically shifted by `j`.
pub fn build_circulant(z: &[f64]) -> Matrix {
    let m = z.len();
    assert!(m >= 1, "circulant of an empty vector");
    Matrix::from_fn(m, m, |i, j| z[(i + m - j) % m])
}

/// `[circ(z_1) | ⋯ | circ(z_b)]`.
pub fn build_block_circulant(generators: &[Vec<f64>]) -> Matrix {
    let mut blocks = generators.iter().map(|z| build_circulant(z));
    let first = blocks.next().expect("at least one generator");
    blocks.fold(first, |acc, b| acc.hcat(&b))
}

/// Nuclear norm of the block-circulant matrix generated by `generators`,
/// computed in the Fourier domain.
pub fn generator_nuclear_norm(generators: &[Vec<f64>]) -> Result<f64> {
    Ok(frequency_norms(&spectra(generators)?).iter().sum())
}

fn spectra(generators: &[Vec<f64>]) -> Result<Vec<ComplexVector>> {
    generators.iter().map(|z| dft(z)).collect()
}

fn frequency_norms(spectra: &[ComplexVector]) -> Vec<f64> {
    let m = spectra[0].len();
    (0..m)
        .map(|k| spectra.iter().map(|s| s.as_slice()[k].norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

/// Euclidean projection of the generators onto `{ ‖Z‖_* ≤ radius }`.
pub fn project_generators(generators: &[Vec<f64>], radius: f64) -> Result<Vec<Vec<f64>>> {
    if !(radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    let spec = spectra(generators)?;
    if spec.len() == 1 {
        let p = simplex_project_magnitudes(&spec[0], radius)?;
        return Ok(vec![idft_unchecked(p.as_slice())]);
    }
    let norms = frequency_norms(&spec);
    let tau = l1_threshold(&norms, radius);
    if tau == 0.0 {
        return Ok(generators.to_vec());
    }
    let factors: Vec<f64> = norms
        .iter()
        .map(|&r| if r > tau { (r - tau) / r } else { 0.0 })
        .collect();
    Ok(spec
        .iter()
        .map(|s| {
            let shrunk: Vec<Complex64> = s.as_slice().iter().zip(&factors).map(|(c, f)| c * f).collect();
            idft_unchecked(&shrunk)
        })
        .collect())
}

/// Replaces every `m × m` block by its circulant projection.
pub fn symmetrize_blocks(z: &Matrix) -> Result<Matrix> {
    let m = z.rows();
    if m == 0 || !z.cols().is_multiple_of(m) {
        return Err(invalid(format!("{:?} is not a row of square blocks", z.shape())));
    }
    let mut out = Matrix::zeros(m, z.cols());
    for b in 0..z.cols() / m {
        let p = circulant_project(&z.submatrix(0, b * m, m, m))?;
        for j in 0..m {
            out.set_column(b * m + j, &p.column(j));
        }
    }
    Ok(out)
}

/// Projection onto `{ ‖Z‖_* ≤ radius } ∩ {block-circulant}` by Dykstra's
/// alternating projections. The result is exactly block-circulant.
pub fn dykstra_project(z: &Matrix, radius: f64, tol: f64, max_iter: usize) -> Result<(Matrix, usize)> {
    let mut x = symmetrize_blocks(z)?;
    let mut p = Matrix::zeros(z.rows(), z.cols());
    let mut q = Matrix::zeros(z.rows(), z.cols());
    let mut x_prev = z.clone();
    for it in 1..=max_iter {
        let y = crate::numerics::project_nuclear_ball(&x_prev.add(&p), radius)?;
        p = x_prev.add(&p).sub(&y);
        x = symmetrize_blocks(&y.add(&q))?;
        q = y.add(&q).sub(&x);
        let change = x.sub(&x_prev).frobenius_norm();
        if change <= tol * x.frobenius_norm().max(1.0) && x.sub(&y).frobenius_norm() <= tol * x.frobenius_norm().max(1.0) {
            return Ok((x, it));
        }
        x_prev = x.clone();
    }
    Err(Error::SolverFailure {
        solver: "dykstra projection",
        reason: format!("no fixed point within {max_iter} iterations"),
        residual: Some(x.sub(&x_prev).frobenius_norm()),
        restart: None,
    })
}

/// How the multi-block feasible set is projected onto.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiBlockProjection {
    /// Exact group soft threshold in the Fourier domain.
    #[default]
    FourierGroup,
    /// Dykstra between the nuclear ball and the block-circulant subspace.
    Dykstra,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclicOptions {
    pub max_iter: usize,
    /// Bound on the gradient-mapping norm `‖z − P(z − ∇f(z))‖₂`.
    pub tol: f64,
    pub projection: MultiBlockProjection,
    pub dykstra_tol: f64,
    pub dykstra_max_iter: usize,
    /// Solve a second time from a random start and compare.
    pub check_uniqueness: bool,
    pub seed: u64,
    #[serde(skip)]
    pub cancel: Option<CancelToken>,
}

impl Default for CyclicOptions {
    fn default() -> Self {
        Self {
            max_iter: 1_000_000,
            tol: 1e-11,
            projection: MultiBlockProjection::FourierGroup,
            dykstra_tol: 1e-10,
            dykstra_max_iter: 20_000,
            check_uniqueness: true,
            seed: 0,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CyclicSolution {
    pub generators: Vec<Vec<f64>>,
    pub z_matrix: Matrix,
    /// `[circ(y_1) | ⋯ | circ(y_b)]`.
    pub y_matrix: Matrix,
    pub gram_w: Matrix,
    pub gram_h: Matrix,
    /// Full objective over all `b·m` columns.
    pub objective: f64,
    pub nuclear_norm_used: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Set when every target is uniform and the objective does not depend on the factors.
    pub degenerate: bool,
    /// Two starts reached the same objective at different generators.
    pub non_unique: bool,
}

fn block_loss(ys: &[Vec<f64>], zs: &[Vec<f64>]) -> f64 {
    ys.iter().zip(zs).map(|(y, z)| cross_entropy(y, z)).sum()
}

fn block_grad(ys: &[Vec<f64>], zs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    ys.iter()
        .zip(zs)
        .map(|(y, z)| {
            let s = softmax_columns(&Matrix::from_vec_unchecked(z.len(), 1, z.clone()));
            s.as_slice().iter().zip(y).map(|(a, b)| a - b).collect()
        })
        .collect()
}

fn distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn step_and_project(
    ys: &[Vec<f64>],
    at: &[Vec<f64>],
    project: &mut dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<Vec<f64>>> {
    // Unit step: the softmax cross-entropy Hessian is bounded by the identity.
    let g = block_grad(ys, at);
    let moved: Vec<Vec<f64>> = at
        .iter()
        .zip(&g)
        .map(|(z, gz)| z.iter().zip(gz).map(|(a, b)| a - b).collect())
        .collect();
    project(&moved)
}

/// Accelerated projected gradient with adaptive restart. Returns the iterate,
/// iteration count and final gradient-mapping residual.
fn accelerated_pg(
    ys: &[Vec<f64>],
    start: Vec<Vec<f64>>,
    opts: &CyclicOptions,
    project: &mut dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<(Vec<Vec<f64>>, usize, f64)> {
    let mut x = project(&start)?;
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        check_cancel(opts.cancel.as_ref())?;
        let x_new = step_and_project(ys, &y, project)?;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // Restart momentum when it points against the progress direction.
        let against: f64 = y
            .iter()
            .zip(&x_new)
            .zip(&x)
            .map(|((yv, xn), xo)| yv.iter().zip(xn).zip(xo).map(|((a, b), c)| (a - b) * (b - c)).sum::<f64>())
            .sum();
        if against > 0.0 || block_loss(ys, &x_new) > block_loss(ys, &x) {
            t = 1.0;
            y = x_new.clone();
        } else {
            let beta = (t - 1.0) / t_new;
            y = x_new
                .iter()
                .zip(&x)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + beta * (u - v)).collect())
                .collect();
            t = t_new;
        }
        x = x_new;
        residual = distance(&x, &step_and_project(ys, &x, project)?);
        if residual <= opts.tol {
            return Ok((x, it, residual));
        }
    }
    Err(Error::SolverFailure {
        solver: "cyclic generating-vector solver",
        reason: format!("gradient-mapping residual above {} after {} iterations", opts.tol, opts.max_iter),
        residual: Some(residual),
        restart: None,
    })
}

fn validate_targets(ys: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = ys.first() else {
        return Err(invalid("no target blocks"));
    };
    let m = first.len();
    if m == 0 {
        return Err(invalid("empty target vector"));
    }
    for (i, y) in ys.iter().enumerate() {
        if y.len() != m {
            return Err(invalid(format!("block {i} has length {}, expected {m}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) || (y.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("block {i} is not a probability vector")));
        }
    }
    Ok(m)
}

/// Minimizes `Σ_i CE(softmax(z_i), y_i)` over generators whose block-circulant
/// matrix has nuclear norm at most `√(e_w e_h)`.
pub fn solve_generating_vectors(ys: &[Vec<f64>], e_w: f64, e_h: f64, opts: &CyclicOptions) -> Result<CyclicSolution> {
    let m = validate_targets(ys)?;
    check_budgets(e_w, e_h)?;
    let radius = (e_w * e_h).sqrt();
    let b = ys.len();
    let degenerate = ys.iter().all(|y| is_uniform(y));

    let mut project: Box<dyn FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>> = match opts.projection {
        MultiBlockProjection::FourierGroup => Box::new(move |zs: &[Vec<f64>]| project_generators(zs, radius)),
        MultiBlockProjection::Dykstra => {
            let (tol, max_iter) = (opts.dykstra_tol, opts.dykstra_max_iter);
            Box::new(move |zs: &[Vec<f64>]| {
                let (z, _) = dykstra_project(&build_block_circulant(zs), radius, tol, max_iter)?;
                Ok((0..zs.len()).map(|i| z.column(i * m)).collect())
            })
        }
    };

    let (generators, iterations, kkt_residual) = accelerated_pg(ys, vec![vec![0.0; m]; b], opts, &mut *project)?;

    let mut non_unique = false;
    if opts.check_uniqueness && !degenerate {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let start: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mean = v.iter().sum::<f64>() / m as f64;
                v.iter().map(|x| x - mean).collect()
            })
            .collect();
        let (other, _, _) = accelerated_pg(ys, start, opts, &mut *project)?;
        let gap = (block_loss(ys, &other) - block_loss(ys, &generators)).abs();
        non_unique = distance(&other, &generators) > 1e-6 && gap < 1e-10;
    }

    let z_matrix = build_block_circulant(&generators);
    let y_matrix = build_block_circulant(ys);
    let (gram_w, gram_h) = grams_from_logits(&z_matrix, e_w, e_h)?;
    Ok(CyclicSolution {
        objective: m as f64 * block_loss(ys, &generators),
        nuclear_norm_used: generator_nuclear_norm(&generators)?,
        generators,
        z_matrix,
        y_matrix,
        gram_w,
        gram_h,
        kkt_residual,
        iterations,
        degenerate,
        non_unique,
    })
}

/// `(√(e_w/e_h)·(ZZᵀ)^{1/2}, √(e_h/e_w)·(ZᵀZ)^{1/2})`, both read off the SVD
/// of `Z` (`UΣUᵀ` and `VΣVᵀ`).
pub fn grams_from_logits(z: &Matrix, e_w: f64, e_h: f64) -> Result<(Matrix, Matrix)> {
    check_budgets(e_w, e_h)?;
    if z.max_abs() == 0.0 {
        return Ok((Matrix::zeros(z.rows(), z.rows()), Matrix::zeros(z.cols(), z.cols())));
    }
    let svd = svd_compact(z, RANK_TOL * 1e-4)?;
    let weighted = |basis: &Matrix| {
        let mut scaled = basis.clone();
        for j in 0..svd.rank() {
            for i in 0..scaled.rows() {
                scaled[(i, j)] *= svd.singular_values[j];
            }
        }
        scaled.matmul_t(basis).symmetrize()
    };
    let ratio = (e_w / e_h).sqrt();
    Ok((weighted(&svd.u).scale(ratio), weighted(&svd.v).scale(1.0 / ratio)))
}

/// Balanced factorization `W = (e_w/e_h)^{1/4} U Σ^{1/2} Qᵀ`,
/// `H = (e_h/e_w)^{1/4} Q Σ^{1/2} Vᵀ` with `Q` the first `r` columns of `I_d`.
pub fn factor_solution(z: &Matrix, e_w: f64, e_h: f64, d: usize) -> Result<FactorPair> {
    let r = if z.max_abs() == 0.0 { 0 } else { svd_compact(z, RANK_TOL)?.rank() };
    if d < r {
        return Err(invalid(format!("embedding dimension {d} is below rank {r}")));
    }
    factor_solution_with(z, e_w, e_h, &Matrix::identity(d).submatrix(0, 0, d, r))
}

/// [`factor_solution`] with a caller-supplied `d × r` partial isometry `Q`.
pub fn factor_solution_with(z: &Matrix, e_w: f64, e_h: f64, q: &Matrix) -> Result<FactorPair> {
    check_budgets(e_w, e_h)?;
    let d = q.rows();
    if z.max_abs() == 0.0 {
        return Ok(FactorPair {
            w: Matrix::zeros(z.rows(), d),
            h: Matrix::zeros(d, z.cols()),
        });
    }
    let svd = svd_compact(z, RANK_TOL)?;
    let r = svd.rank();
    if q.cols() != r {
        return Err(invalid(format!("Q has {} columns but rank is {r}", q.cols())));
    }
    let root: Vec<f64> = svd.singular_values.iter().map(|s| s.sqrt()).collect();
    let scale_cols = |a: &Matrix| Matrix::from_fn(a.rows(), r, |i, j| a[(i, j)] * root[j]);
    let quarter = (e_w / e_h).powf(0.25);
    let w = scale_cols(&svd.u).matmul_t(q).scale(quarter);
    let h = q.matmul(&scale_cols(&svd.v).transpose()).scale(1.0 / quarter);
    Ok(FactorPair { w, h })
}
