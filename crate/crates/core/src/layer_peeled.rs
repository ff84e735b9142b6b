//! The factored cross-entropy problem with Frobenius budgets on both factors,
//! and a multi-restart projected-gradient solver for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{check_cancel, map_indices, CancelToken, Execution};
use crate::numerics::Matrix;

/// Tolerance on column sums and nonnegativity of targets.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Target matrix, budgets `‖W‖_F² ≤ e_w`, `‖H‖_F² ≤ e_h` and embedding
/// dimension `d`.
#[derive(Debug, Clone)]
pub struct LayerPeeledProblem {
    y: Matrix,
    e_w: f64,
    e_h: f64,
    d: usize,
}

impl LayerPeeledProblem {
    pub fn new(y: Matrix, e_w: f64, e_h: f64, d: usize) -> Result<Self> {
        check_budgets(e_w, e_h)?;
        if d == 0 {
            return Err(invalid("embedding dimension must be at least 1"));
        }
        check_targets(&y)?;
        Ok(Self { y, e_w, e_h, d })
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn e_w(&self) -> f64 {
        self.e_w
    }

    pub fn e_h(&self) -> f64 {
        self.e_h
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.y.rows()
    }

    pub fn n(&self) -> usize {
        self.y.cols()
    }

    /// `√(E_W E_H)`, the nuclear-norm radius reachable by `WH`.
    pub fn budget_product(&self) -> f64 {
        (self.e_w * self.e_h).sqrt()
    }
}

pub(crate) fn check_budgets(e_w: f64, e_h: f64) -> Result<()> {
    if !(e_w > 0.0 && e_w.is_finite() && e_h > 0.0 && e_h.is_finite()) {
        return Err(invalid(format!("budgets must be positive and finite, got ({e_w}, {e_h})")));
    }
    Ok(())
}

/// Every column of `y` must be a probability vector.
pub(crate) fn check_targets(y: &Matrix) -> Result<()> {
    if y.rows() == 0 || y.cols() == 0 {
        return Err(invalid("empty target matrix"));
    }
    for j in 0..y.cols() {
        let col = y.column(j);
        if col.iter().any(|v| *v < -SIMPLEX_TOL || !v.is_finite()) {
            return Err(invalid(format!("target column {j} has negative or non-finite entries")));
        }
        let s: f64 = col.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("target column {j} sums to {s}")));
        }
    }
    Ok(())
}

/// Output projection `W` (m×d) and context embeddings `H` (d×n).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: Matrix,
    pub h: Matrix,
}

impl FactorPair {
    pub fn logits(&self) -> Matrix {
        self.w.matmul(&self.h)
    }
}

fn log_sum_exp(col: &[f64]) -> f64 {
    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Columnwise softmax, stabilized by subtracting each column's maximum.
pub fn softmax_columns(z: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for j in 0..z.cols() {
        let col = z.column(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.set_column(j, &e.iter().map(|v| v / s).collect::<Vec<_>>());
    }
    out
}

/// Cross-entropy of a single distribution `y` against `softmax(z)`.
pub fn cross_entropy(y: &[f64], z: &[f64]) -> f64 {
    let lse = log_sum_exp(z);
    y.iter()
        .zip(z)
        .filter(|(yi, _)| **yi != 0.0)
        .map(|(yi, zi)| yi * (lse - zi))
        .sum()
}

/// `Σ_j CE(softmax(Z_{:,j}), Y_{:,j})`.
pub fn logit_loss(y: &Matrix, z: &Matrix) -> f64 {
    assert_eq!(y.shape(), z.shape());
    (0..y.cols()).map(|j| cross_entropy(&y.column(j), &z.column(j))).sum()
}

/// Gradient of [`logit_loss`] with respect to the logits: `softmax(Z) − Y`.
pub fn logit_gradient(y: &Matrix, z: &Matrix) -> Matrix {
    softmax_columns(z).sub(y)
}

/// Sum of column entropies: the unreachable floor of the objective.
pub fn entropy_floor(y: &Matrix) -> f64 {
    y.as_slice().iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum()
}

fn check_shapes(p: &LayerPeeledProblem, f: &FactorPair) -> Result<()> {
    let (m, n, d) = (p.m(), p.n(), p.d());
    if f.w.shape() != (m, d) || f.h.shape() != (d, n) {
        return Err(invalid(format!(
            "factor shapes {:?} and {:?} do not match m={m}, d={d}, n={n}",
            f.w.shape(),
            f.h.shape()
        )));
    }
    Ok(())
}

pub fn objective(p: &LayerPeeledProblem, f: &FactorPair) -> Result<f64> {
    check_shapes(p, f)?;
    Ok(logit_loss(&p.y, &f.logits()))
}

/// `((σ(WH) − Y) Hᵀ, Wᵀ (σ(WH) − Y))`.
pub fn gradients(p: &LayerPeeledProblem, f: &FactorPair) -> Result<(Matrix, Matrix)> {
    check_shapes(p, f)?;
    let g = logit_gradient(&p.y, &f.logits());
    Ok((g.matmul_t(&f.h), f.w.t_matmul(&g)))
}

/// Radial projection onto `{ ‖a‖_F² ≤ budget_sq }`.
pub fn project_frobenius_ball(a: &Matrix, budget_sq: f64) -> Matrix {
    assert!(budget_sq > 0.0, "budget must be positive");
    let sq = a.frobenius_sq();
    if sq <= budget_sq {
        a.clone()
    } else {
        a.scale((budget_sq / sq).sqrt())
    }
}

/// Hyperparameters of [`solve_pgd`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// First trial step of the Armijo search.
    pub initial_step: f64,
    /// Stop once the objective drops by less than `rel_tol` (relative) over
    /// `window` iterations.
    pub rel_tol: f64,
    pub window: usize,
    #[serde(skip)]
    pub execution: Execution,
    #[serde(skip)]
    pub cancel: Option<CancelToken>,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iter: 200_000,
            seed: 0,
            initial_step: 1.0,
            rel_tol: 1e-12,
            window: 50,
            execution: Execution::default(),
            cancel: None,
        }
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub factors: FactorPair,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub best: FactorPair,
    pub objective: f64,
    pub best_restart: usize,
    pub restart_objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// `(‖W‖_F²/E_W, ‖H‖_F²/E_H)` at the best iterate.
    pub constraint_activity: (f64, f64),
}

impl SolveReport {
    /// Largest pairwise objective gap between restarts.
    pub fn consensus_gap(&self) -> f64 {
        let max = self.restart_objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.restart_objectives.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Gaussian factors rescaled to half of each budget; restart `r` draws from
/// stream `r` of the seeded generator.
pub fn initial_factors(p: &LayerPeeledProblem, seed: u64, restart: usize) -> FactorPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let scale_to = |a: Matrix, target: f64| {
        let n = a.frobenius_norm();
        if n == 0.0 {
            a
        } else {
            a.scale((target / 2.0).sqrt() / n)
        }
    };
    let w = scale_to(Matrix::random_normal(p.m(), p.d(), &mut rng), p.e_w);
    let h = scale_to(Matrix::random_normal(p.d(), p.n(), &mut rng), p.e_h);
    FactorPair { w, h }
}

/// Projected gradient with Armijo backtracking from a given start.
pub fn run_pgd(p: &LayerPeeledProblem, start: FactorPair, opts: &PgdOptions, restart: usize) -> Result<RestartOutcome> {
    check_shapes(p, &start)?;
    let fail = |reason: String| Error::SolverFailure {
        solver: "projected gradient",
        reason,
        residual: None,
        restart: Some(restart),
    };
    let mut x = FactorPair {
        w: project_frobenius_ball(&start.w, p.e_w),
        h: project_frobenius_ball(&start.h, p.e_h),
    };
    let mut f = objective(p, &x)?;
    if !f.is_finite() {
        return Err(fail("objective is not finite at the starting point".into()));
    }
    let mut history = vec![f];
    let mut step = opts.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        check_cancel(opts.cancel.as_ref())?;
        iterations += 1;
        let (gw, gh) = gradients(p, &x)?;
        step = (step * 2.0).min(1e6);
        let (next, f_next, moved) = loop {
            let mut w = x.w.clone();
            w.axpy(-step, &gw);
            let mut h = x.h.clone();
            h.axpy(-step, &gh);
            let cand = FactorPair {
                w: project_frobenius_ball(&w, p.e_w),
                h: project_frobenius_ball(&h, p.e_h),
            };
            let dw = cand.w.sub(&x.w);
            let dh = cand.h.sub(&x.h);
            let moved = dw.frobenius_sq() + dh.frobenius_sq();
            let f_cand = objective(p, &cand)?;
            if f_cand.is_nan() {
                return Err(fail(format!("objective became NaN at iteration {iterations}")));
            }
            let model = f + gw.inner(&dw) + gh.inner(&dh) + moved / (2.0 * step);
            if f_cand <= model || moved == 0.0 {
                break (cand, f_cand, moved);
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(fail("step size underflow in backtracking".into()));
            }
        };
        if f_next > f {
            // Rounding can make the model test pass on a flat step; keep the
            // iterate and treat it as stationary.
            converged = true;
            break;
        }
        x = next;
        f = f_next;
        history.push(f);
        if moved == 0.0 {
            converged = true;
            break;
        }
        if history.len() > opts.window {
            let past = history[history.len() - 1 - opts.window];
            if past - f <= opts.rel_tol * f.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(RestartOutcome {
        factors: x,
        objective: f,
        iterations,
        converged,
    })
}

/// Multi-restart projected gradient. Deterministic given `(seed, restarts)`
/// regardless of the execution policy.
pub fn solve_pgd(p: &LayerPeeledProblem, opts: &PgdOptions) -> Result<SolveReport> {
    if opts.restarts == 0 {
        return Err(invalid("at least one restart is required"));
    }
    if opts.window == 0 {
        return Err(invalid("convergence window must be positive"));
    }
    let outcomes = map_indices(opts.execution, opts.restarts, |r| {
        run_pgd(p, initial_factors(p, opts.seed, r), opts, r)
    });
    let outcomes: Vec<RestartOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let best_restart = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let best = outcomes[best_restart].factors.clone();
    let objective = objective(p, &best)?;
    let constraint_activity = (best.w.frobenius_sq() / p.e_w, best.h.frobenius_sq() / p.e_h);
    Ok(SolveReport {
        best,
        objective,
        best_restart,
        restart_objectives: outcomes.iter().map(|o| o.objective).collect(),
        iterations: outcomes.iter().map(|o| o.iterations).collect(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
        constraint_activity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn problem(y: Matrix, e: f64, d: usize) -> LayerPeeledProblem {
        LayerPeeledProblem::new(y, e, e, d).unwrap()
    }

    fn random_simplex_matrix(m: usize, n: usize, rng: &mut impl Rng) -> Matrix {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        Matrix::from_columns(&cols).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_columns(&Matrix::zeros(4, 1));
        s.as_slice().iter().for_each(|v| assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15));
        let z = Matrix::new(3, 1, vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        let s = softmax_columns(&z);
        for (i, e) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            assert_abs_diff_eq!(s[(i, 0)], e, epsilon = 1e-15);
        }
        let shifted = softmax_columns(&z.map(|v| v + 17.0));
        assert!(shifted.rel_diff(&s) < 1e-14);
        let big = Matrix::new(2, 1, vec![1000.0, 0.0]).unwrap();
        assert!(softmax_columns(&big).is_finite());
    }

    #[test]
    fn objective_examples() {
        let y = Matrix::from_columns(&[vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]).unwrap();
        let p = problem(y, 1.0, 2);
        let zero = FactorPair {
            w: Matrix::zeros(3, 2),
            h: Matrix::zeros(2, 2),
        };
        assert_abs_diff_eq!(objective(&p, &zero).unwrap(), 2.0 * 3f64.ln(), epsilon = 1e-14);
        let (gw, gh) = gradients(&p, &zero).unwrap();
        assert_eq!(gw.max_abs(), 0.0);
        assert_eq!(gh.max_abs(), 0.0);

        let y = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        for a in [0.0, 0.7, 3.0] {
            let z = Matrix::new(2, 1, vec![a, 0.0]).unwrap();
            assert_abs_diff_eq!(logit_loss(&y, &z), (1.0 + (-a).exp()).ln(), epsilon = 1e-14);
        }
        let mut last = f64::INFINITY;
        for a in 0..20 {
            let z = Matrix::new(2, 1, vec![a as f64, 0.0]).unwrap();
            let v = logit_loss(&y, &z);
            assert!(v < last && v > 0.0);
            last = v;
        }
    }

    #[test]
    fn gradient_vanishes_at_realizable_target() {
        let z = Matrix::new(3, 1, vec![0.3, -1.0, 0.4]).unwrap();
        let y = softmax_columns(&z);
        assert!(logit_gradient(&y, &z).max_abs() < 1e-15);
        assert_abs_diff_eq!(logit_loss(&y, &z), entropy_floor(&y), epsilon = 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, n, d) = (rng.gen_range(2..5), rng.gen_range(1..6), rng.gen_range(1..5));
            let p = problem(random_simplex_matrix(m, n, &mut rng), 5.0, d);
            let f = FactorPair {
                w: Matrix::random_normal(m, d, &mut rng),
                h: Matrix::random_normal(d, n, &mut rng),
            };
            let (gw, gh) = gradients(&p, &f).unwrap();
            let dw = Matrix::random_normal(m, d, &mut rng);
            let dh = Matrix::random_normal(d, n, &mut rng);
            let eps = 1e-6;
            let at = |t: f64| {
                let mut w = f.w.clone();
                w.axpy(t, &dw);
                let mut h = f.h.clone();
                h.axpy(t, &dh);
                objective(&p, &FactorPair { w, h }).unwrap()
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let analytic = gw.inner(&dw) + gh.inner(&dh);
            assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n, d) = (4, 5, 6);
        let p = problem(random_simplex_matrix(m, n, &mut rng), 5.0, d);
        let f = FactorPair {
            w: Matrix::random_normal(m, d, &mut rng),
            h: Matrix::random_normal(d, n, &mut rng),
        };
        let base = objective(&p, &f).unwrap();
        let r = Matrix::random_orthonormal(d, d, &mut rng);
        let rotated = FactorPair {
            w: f.w.matmul(&r),
            h: r.t_matmul(&f.h),
        };
        assert_abs_diff_eq!(objective(&p, &rotated).unwrap(), base, epsilon = 1e-12 * base.abs());

        let z = f.logits();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let shifted = Matrix::from_fn(m, n, |i, j| z[(i, j)] + beta[j]);
        assert_abs_diff_eq!(logit_loss(p.y(), &shifted), logit_loss(p.y(), &z), epsilon = 1e-12 * base.abs());
    }

    #[test]
    fn logit_loss_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let y = random_simplex_matrix(3, 2, &mut rng);
            let z1 = Matrix::random_normal(3, 2, &mut rng).scale(3.0);
            let z2 = Matrix::random_normal(3, 2, &mut rng).scale(3.0);
            let t: f64 = rng.gen_range(0.01..0.99);
            let mid = z1.scale(t).add(&z2.scale(1.0 - t));
            let lhs = logit_loss(&y, &mid);
            let rhs = t * logit_loss(&y, &z1) + (1.0 - t) * logit_loss(&y, &z2);
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn frobenius_projection_examples() {
        let a = Matrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
        assert_eq!(project_frobenius_ball(&a, 1.0), a);
        let b = Matrix::from_rows(&[vec![0.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(project_frobenius_ball(&b, 4.0).frobenius_norm(), 2.0, epsilon = 1e-15);
        assert_eq!(project_frobenius_ball(&Matrix::zeros(2, 2), 1.0), Matrix::zeros(2, 2));
    }

    #[test]
    fn scalar_instance_matches_grid_search() {
        // With ‖Z‖_* ≤ 1 and a single column the logit vector lies in the unit
        // Euclidean ball; only the gap z1 − z2 matters.
        let y = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let p = problem(y.clone(), 1.0, 2);
        let grid = (0..=200_000)
            .map(|i| {
                let th = std::f64::consts::PI * 2.0 * i as f64 / 200_000.0;
                let z = Matrix::new(2, 1, vec![th.cos(), th.sin()]).unwrap();
                logit_loss(&y, &z)
            })
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(grid, (1.0 + (-(2f64.sqrt())).exp()).ln(), epsilon = 1e-9);
        let report = solve_pgd(&p, &PgdOptions { restarts: 4, ..Default::default() }).unwrap();
        assert!((report.objective - grid).abs() <= 1e-6, "{} vs {grid}", report.objective);
        assert!(report.constraint_activity.0 > 1.0 - 1e-3);
        assert!(report.constraint_activity.1 > 1.0 - 1e-3);
    }

    #[test]
    fn pgd_is_deterministic_across_execution_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = problem(random_simplex_matrix(3, 4, &mut rng), 2.0, 3);
        let opts = PgdOptions {
            restarts: 4,
            max_iter: 500,
            seed: 42,
            ..Default::default()
        };
        let par = solve_pgd(&p, &PgdOptions { execution: Execution::Parallel, ..opts.clone() }).unwrap();
        let seq = solve_pgd(&p, &PgdOptions { execution: Execution::Sequential, ..opts }).unwrap();
        assert_eq!(par.best, seq.best);
        assert_eq!(par.restart_objectives, seq.restart_objectives);
        assert!(par.consensus_gap() >= 0.0);
    }

    #[test]
    fn pgd_descends_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = problem(random_simplex_matrix(3, 3, &mut rng), 3.0, 3);
        let start = initial_factors(&p, 1, 0);
        let mut f_prev = objective(&p, &start).unwrap();
        let mut x = start;
        for _ in 0..30 {
            let opts = PgdOptions {
                max_iter: 5,
                ..Default::default()
            };
            let out = run_pgd(&p, x, &opts, 0).unwrap();
            assert!(out.objective <= f_prev);
            f_prev = out.objective;
            x = out.factors;
        }
    }

    #[test]
    fn initial_factors_use_half_budget() {
        let y = Matrix::identity(3);
        let p = LayerPeeledProblem::new(y, 4.0, 6.0, 5).unwrap();
        let f = initial_factors(&p, 0, 3);
        assert_abs_diff_eq!(f.w.frobenius_sq(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.h.frobenius_sq(), 3.0, epsilon = 1e-12);
        assert_ne!(initial_factors(&p, 0, 2), f);
    }

    #[test]
    fn rejects_invalid_problems() {
        let y = Matrix::new(2, 1, vec![0.5, 0.6]).unwrap();
        assert!(LayerPeeledProblem::new(y, 1.0, 1.0, 2).is_err());
        assert!(LayerPeeledProblem::new(Matrix::identity(2), 0.0, 1.0, 2).is_err());
        assert!(LayerPeeledProblem::new(Matrix::identity(2), 1.0, 1.0, 0).is_err());
    }
}
