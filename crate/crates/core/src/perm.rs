//! Permutation and 2-transitive symmetry: the α system, the residual matrix
//! `C = A − Y`, and the closed-form optimal factors with simplex-ETF output
//! Gram.
//!
//! For fixed `k` the stationarity equations decouple per block and
//! coordinate: `log α_ℓ + k α_ℓ = c + k y_ℓ`, with the block constant `c` fixed
//! by `Σ α = 1` (the mean-log condition then holds automatically). The
//! remaining scalar equation `(m−1)·k·γ(α(k)) = √(E_W E_H)` is solved by a
//! bracketed root search on `log k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::groups::{is_two_transitive, is_uniform, OrbitMatrix, Permutation, TargetSpec};
use crate::layer_peeled::{check_budgets, FactorPair};
use crate::numerics::{pinv_sqrt_psd, svd_compact, Matrix, RANK_TOL};

/// `M* = √(m/(m−1))·(I − J/m)`.
pub fn etf_reference(m: usize) -> Result<Matrix> {
    if m < 2 {
        return Err(invalid("simplex ETF needs m ≥ 2"));
    }
    let s = (m as f64 / (m as f64 - 1.0)).sqrt();
    Ok(Matrix::centering(m).scale(s))
}

/// One block of the α system: how many columns it contributes and its base
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBlock {
    pub multiplicity: usize,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaCertificate {
    pub alphas: Vec<Vec<f64>>,
    pub multiplicities: Vec<usize>,
    pub k: f64,
    pub gamma: f64,
    /// Largest violation of the stationarity equations.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 400,
        }
    }
}

/// `γ = √(Σ_j n_j ‖α_j − y_j‖² / (m−1))`.
pub fn gamma(blocks: &[AlphaBlock], alphas: &[Vec<f64>]) -> f64 {
    let m = blocks[0].y.len() as f64;
    let s: f64 = blocks
        .iter()
        .zip(alphas)
        .map(|(b, a)| b.multiplicity as f64 * a.iter().zip(&b.y).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum();
    (s / (m - 1.0)).sqrt()
}

/// `φ(α) = −√(E_W E_H)·γ(α) − Σ_j n_j Σ_ℓ α_{jℓ} log α_{jℓ}`.
pub fn phi(blocks: &[AlphaBlock], alphas: &[Vec<f64>], e_w: f64, e_h: f64) -> f64 {
    let entropy: f64 = blocks
        .iter()
        .zip(alphas)
        .map(|(b, a)| b.multiplicity as f64 * a.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum::<f64>())
        .sum();
    -(e_w * e_h).sqrt() * gamma(blocks, alphas) + entropy
}

/// The value `(m−1)·k·γ(α(k))` tends to as `k → ∞`; the budgets bind only
/// when `√(E_W E_H)` lies below it. Infinite when a nonuniform block has a
/// zero entry.
pub fn activity_threshold(blocks: &[AlphaBlock]) -> f64 {
    let m = blocks[0].y.len() as f64;
    let mut s = 0.0;
    for b in blocks.iter().filter(|b| !is_uniform(&b.y)) {
        if b.y.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        let logs: Vec<f64> = b.y.iter().map(|v| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / m;
        s += b.multiplicity as f64 * logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>();
    }
    ((m - 1.0) * s).sqrt()
}

/// Solves `e^v + v = t` for `v` (the log of the Wright omega function).
fn log_omega(t: f64) -> f64 {
    let (mut lo, mut hi) = if t > 1.0 {
        ((t - t.ln()).ln(), t.ln().min(t))
    } else {
        (t - t.exp(), t)
    };
    let mut v = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = v.exp() + v - t;
        if f > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let next = v - f / (v.exp() + 1.0);
        if (next - v).abs() <= 2.0 * f64::EPSILON * v.abs().max(1.0) {
            return next;
        }
        v = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    v
}

/// `α(k)` for one block: the simplex point solving
/// `log α_ℓ + k α_ℓ = c + k y_ℓ` for the common `c`.
fn alpha_for_k(y: &[f64], k: f64) -> Vec<f64> {
    let m = y.len() as f64;
    if is_uniform(y) {
        return vec![1.0 / m; y.len()];
    }
    // α_ℓ = e^{v}/k with e^v + v = s_ℓ + log k.
    let alpha = |c: f64| -> Vec<f64> { y.iter().map(|yl| log_omega(c + k * yl + k.ln()).exp() / k).collect() };
    let mut lo = -m.ln() - k - 1.0;
    let mut hi = -m.ln() + k + 1.0;
    let mut c = -m.ln();
    for _ in 0..300 {
        let a = alpha(c);
        let f: f64 = a.iter().sum::<f64>() - 1.0;
        if f > 0.0 {
            hi = c;
        } else {
            lo = c;
        }
        let df: f64 = a.iter().map(|x| x / (1.0 + k * x)).sum();
        let next = c - f / df;
        if (next - c).abs() <= 2.0 * f64::EPSILON * c.abs().max(1.0) {
            c = next;
            break;
        }
        c = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    let mut a = alpha(c);
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|x| *x /= s);
    a
}

/// Largest violation of `k(α−y) + log α − mean log α = 0`.
pub fn stationarity_residual(blocks: &[AlphaBlock], alphas: &[Vec<f64>], k: f64) -> f64 {
    blocks
        .iter()
        .zip(alphas)
        .flat_map(|(b, a)| {
            let mean = a.iter().map(|x| x.ln()).sum::<f64>() / a.len() as f64;
            b.y.iter()
                .zip(a)
                .map(move |(y, x)| (k * (x - y) + x.ln() - mean).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

fn validate_blocks(blocks: &[AlphaBlock]) -> Result<usize> {
    let Some(first) = blocks.first() else {
        return Err(invalid("no blocks"));
    };
    let m = first.y.len();
    if m < 2 {
        return Err(invalid("the α system needs m ≥ 2"));
    }
    for (i, b) in blocks.iter().enumerate() {
        if b.y.len() != m || b.multiplicity == 0 {
            return Err(invalid(format!("block {i} has the wrong length or no columns")));
        }
        if b.y.iter().any(|v| !v.is_finite() || *v < 0.0) || (b.y.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("block {i} base is not a probability vector")));
        }
    }
    Ok(m)
}

/// Solves the joint α system for active budgets.
pub fn solve_alpha(blocks: &[AlphaBlock], e_w: f64, e_h: f64, opts: &AlphaOptions) -> Result<AlphaCertificate> {
    let m = validate_blocks(blocks)? as f64;
    check_budgets(e_w, e_h)?;
    if blocks.iter().all(|b| is_uniform(&b.y)) {
        return Err(Error::HypothesisViolated(
            "every base distribution is uniform, so α = y and γ = 0".into(),
        ));
    }
    let radius = (e_w * e_h).sqrt();
    let threshold = activity_threshold(blocks);
    if radius >= threshold {
        return Err(Error::HypothesisViolated(format!(
            "√(E_W E_H) = {radius} is at least {threshold}: the budgets are not active and the \
             minimizer matches the targets without saturating them"
        )));
    }
    let eval = |k: f64| {
        let alphas: Vec<Vec<f64>> = blocks.iter().map(|b| alpha_for_k(&b.y, k)).collect();
        let h = (m - 1.0) * k * gamma(blocks, &alphas) - radius;
        (alphas, h)
    };
    // Bracket the root in log k.
    let mut lo = 0.0_f64;
    let mut hi = 0.0_f64;
    let (_, h0) = eval(1.0);
    if h0 < 0.0 {
        hi = 1.0;
        while eval(hi.exp()).1 < 0.0 {
            lo = hi;
            hi += 2.0;
            if hi > 80.0 {
                return Err(Error::SolverFailure {
                    solver: "α system",
                    reason: "could not bracket k".into(),
                    residual: None,
                    restart: None,
                });
            }
        }
    } else {
        lo = -1.0;
        while eval(lo.exp()).1 >= 0.0 {
            hi = lo;
            lo -= 2.0;
            if lo < -80.0 {
                return Err(Error::SolverFailure {
                    solver: "α system",
                    reason: "could not bracket k".into(),
                    residual: None,
                    restart: None,
                });
            }
        }
    }
    let mut iterations = 0;
    while hi - lo > 1e-15 * hi.abs().max(1.0) && iterations < opts.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid.exp()).1 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let (alphas, _) = eval((0.5 * (lo + hi)).exp());
    let g = gamma(blocks, &alphas);
    // k from its defining relation, so that relation holds to rounding.
    let k = radius / ((m - 1.0) * g);
    let residual = stationarity_residual(blocks, &alphas, k);
    if !(residual <= opts.tol) {
        return Err(Error::SolverFailure {
            solver: "α system",
            reason: format!("stationarity residual {residual:e} above {:e}", opts.tol),
            residual: Some(residual),
            restart: None,
        });
    }
    Ok(AlphaCertificate {
        multiplicities: blocks.iter().map(|b| b.multiplicity).collect(),
        alphas,
        k,
        gamma: g,
        residual,
    })
}

/// α blocks for an orbit matrix: one per target block, weighted by its
/// actual column count.
pub fn alpha_blocks(target: &TargetSpec, orbit: &OrbitMatrix) -> Vec<AlphaBlock> {
    target
        .blocks
        .iter()
        .zip(orbit.multiplicities())
        .map(|(b, n)| AlphaBlock {
            multiplicity: n,
            y: b.base.clone(),
        })
        .collect()
}

/// Rejects targets whose nonuniform blocks are not generated by a
/// 2-transitive group.
pub fn check_two_transitive(target: &TargetSpec) -> Result<()> {
    for (i, b) in target.blocks.iter().enumerate() {
        if !b.is_uniform() && !is_two_transitive(&b.group)? {
            return Err(Error::HypothesisViolated(format!("block {i} group is not 2-transitive")));
        }
    }
    Ok(())
}

/// `A − Y`: column `(i, g)` is `g∘α_i − g∘y_i`.
pub fn build_residual(cert: &AlphaCertificate, target: &TargetSpec, orbit: &OrbitMatrix) -> Result<Matrix> {
    if cert.alphas.len() != target.blocks.len() || cert.multiplicities != orbit.multiplicities() {
        return Err(invalid("certificate blocks do not match the orbit enumeration"));
    }
    let mut cols = Vec::with_capacity(orbit.n());
    for (j, label) in orbit.labels.iter().enumerate() {
        let alpha = label.element.act(&cert.alphas[label.block])?;
        let y = orbit.y.column(j);
        if label.element.act(&target.blocks[label.block].base)? != y {
            return Err(invalid(format!("column {j} does not match its label")));
        }
        cols.push(alpha.iter().zip(&y).map(|(a, b)| a - b).collect());
    }
    Matrix::from_columns(&cols)
}

/// Choice of the partial isometry `Q` in the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMode {
    /// First `m−1` columns of `I_d`.
    Canonical,
    /// Random `d × (m−1)` orthonormal columns.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct EtfSolution {
    pub w: Matrix,
    pub h: Matrix,
    pub c: Matrix,
    pub u: Matrix,
    pub v: Matrix,
    pub singular_values: Vec<f64>,
    pub certificate: AlphaCertificate,
    pub gram_w: Matrix,
    pub gram_h: Matrix,
    pub logits: Matrix,
}

impl EtfSolution {
    pub fn factors(&self) -> FactorPair {
        FactorPair {
            w: self.w.clone(),
            h: self.h.clone(),
        }
    }

    /// `max/min − 1` over the singular values of `C`.
    pub fn spectral_spread(&self) -> f64 {
        let max = self.singular_values.iter().copied().fold(0.0, f64::max);
        let min = self.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        max / min - 1.0
    }
}

/// `W = √(E_W/(m−1))·U Qᵀ`, `H = −√(E_H/(m−1))·Q Vᵀ` from the SVD `C = γ U Vᵀ`.
pub fn construct_solution(
    cert: &AlphaCertificate,
    target: &TargetSpec,
    orbit: &OrbitMatrix,
    e_w: f64,
    e_h: f64,
    d: usize,
    q_mode: QMode,
) -> Result<EtfSolution> {
    check_budgets(e_w, e_h)?;
    let m = orbit.y.rows();
    if d < m {
        return Err(invalid(format!("embedding dimension {d} is below m = {m}")));
    }
    let c = build_residual(cert, target, orbit)?;
    let svd = svd_compact(&c, RANK_TOL)?;
    if svd.rank() != m - 1 {
        return Err(Error::HypothesisViolated(format!(
            "residual matrix has rank {} instead of {}",
            svd.rank(),
            m - 1
        )));
    }
    let q = match q_mode {
        QMode::Canonical => Matrix::identity(d).submatrix(0, 0, d, m - 1),
        QMode::Random(seed) => Matrix::random_orthonormal(d, m - 1, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let denom = (m - 1) as f64;
    let w = svd.u.matmul_t(&q).scale((e_w / denom).sqrt());
    let h = q.matmul_t(&svd.v).scale(-(e_h / denom).sqrt());
    let gram_w = w.matmul_t(&w).symmetrize();
    let gram_h = h.t_matmul(&h).symmetrize();
    let logits = w.matmul(&h);
    Ok(EtfSolution {
        w,
        h,
        c,
        u: svd.u,
        v: svd.v,
        singular_values: svd.singular_values,
        certificate: cert.clone(),
        gram_w,
        gram_h,
        logits,
    })
}

/// `P_W = Wᵀ (W Wᵀ)^{†/2}` (d × m).
pub fn embedding_projector(w: &Matrix) -> Result<Matrix> {
    if w.max_abs() == 0.0 {
        return Err(invalid("embedding projector of a zero matrix"));
    }
    let root = pinv_sqrt_psd(&w.matmul_t(w).symmetrize(), 1e-10)?;
    Ok(w.t_matmul(&root))
}

/// Largest relative mismatch, within each block, between `(g_j g_i⁻¹)∘x_i`
/// and `x_j` over all ordered column pairs of `x` (m × n).
pub fn orbit_equivariance_error(x: &Matrix, orbit: &OrbitMatrix) -> Result<f64> {
    let scale = (0..x.cols())
        .map(|j| x.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for range in &orbit.block_ranges {
        for i in range.clone() {
            let gi_inv = orbit.labels[i].element.inverse();
            let xi = x.column(i);
            for j in range.clone() {
                let rel: Permutation = orbit.labels[j].element.compose(&gi_inv);
                let moved = rel.act(&xi)?;
                let err = moved
                    .iter()
                    .zip(x.column(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(err / scale);
            }
        }
    }
    Ok(worst)
}
