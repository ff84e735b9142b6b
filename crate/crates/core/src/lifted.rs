//! Convex PSD lift of the factored problem and least-squares fits of the
//! block patterns its Gram blocks exhibit.
//!
//! The lifted variable is `X = [[HᵀH, HᵀWᵀ], [WH, WWᵀ]]` ((n+m) × (n+m)); the
//! logits are its lower-left block and the budgets bound the traces of the
//! two diagonal blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{check_cancel, CancelToken};
use crate::layer_peeled::{check_budgets, check_targets, logit_gradient, logit_loss};
use crate::numerics::{sym_eig, Matrix, PsdProjector};

/// Largest lift dimension `n + m` accepted.
pub const MAX_LIFT_DIM: usize = 200;

#[derive(Debug, Clone)]
pub struct LiftedProblem {
    y: Matrix,
    e_w: f64,
    e_h: f64,
}

impl LiftedProblem {
    pub fn new(y: Matrix, e_w: f64, e_h: f64) -> Result<Self> {
        check_budgets(e_w, e_h)?;
        check_targets(&y)?;
        let dim = y.rows() + y.cols();
        if dim > MAX_LIFT_DIM {
            return Err(Error::TooLarge {
                what: "lift dimension",
                size: dim,
                limit: MAX_LIFT_DIM,
            });
        }
        Ok(Self { y, e_w, e_h })
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn m(&self) -> usize {
        self.y.rows()
    }

    pub fn n(&self) -> usize {
        self.y.cols()
    }

    pub fn dim(&self) -> usize {
        self.m() + self.n()
    }

    pub fn e_w(&self) -> f64 {
        self.e_w
    }

    pub fn e_h(&self) -> f64 {
        self.e_h
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftedOptions {
    pub max_iter: usize,
    /// Bound on the gradient-mapping norm `‖X − P(X − t∇f)‖_F / t`.
    pub tol: f64,
    pub step: f64,
    pub dykstra_tol: f64,
    pub dykstra_max_iter: usize,
    /// `None` starts at `X = 0`, which is invariant under every symmetry of
    /// the target, so the iterates (and the returned optimum) stay invariant.
    /// `Some(seed)` starts from a random PSD point at half budget.
    pub seed: Option<u64>,
    #[serde(skip)]
    pub cancel: Option<CancelToken>,
}

impl Default for LiftedOptions {
    fn default() -> Self {
        Self {
            max_iter: 500_000,
            tol: 1e-9,
            step: 2.0,
            dykstra_tol: 1e-13,
            dykstra_max_iter: 5_000,
            seed: None,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiftedSolution {
    pub x: Matrix,
    pub gram_h: Matrix,
    pub logits: Matrix,
    pub gram_w: Matrix,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// `(tr(WWᵀ)/E_W, tr(HᵀH)/E_H)`.
    pub activity: (f64, f64),
}

/// Splits a lifted matrix into `(HᵀH, WH, WWᵀ)`.
pub fn split_blocks(x: &Matrix, n: usize) -> (Matrix, Matrix, Matrix) {
    let m = x.rows() - n;
    (x.submatrix(0, 0, n, n), x.submatrix(n, 0, m, n), x.submatrix(n, n, m, m))
}

fn block_trace(x: &Matrix, start: usize, len: usize) -> f64 {
    (start..start + len).map(|i| x[(i, i)]).sum()
}

/// Exact projection onto the two trace half-spaces: the diagonal of a
/// violating block is shifted down uniformly.
fn project_traces(x: &Matrix, n: usize, e_h: f64, e_w: f64) -> Matrix {
    let mut out = x.clone();
    let m = x.rows() - n;
    for (start, len, budget) in [(0, n, e_h), (n, m, e_w)] {
        let excess = block_trace(x, start, len) - budget;
        if excess > 0.0 {
            let shift = excess / len as f64;
            for i in start..start + len {
                out[(i, i)] -= shift;
            }
        }
    }
    out
}

struct LiftProjector {
    psd: PsdProjector,
    n: usize,
    e_h: f64,
    e_w: f64,
    tol: f64,
    max_iter: usize,
}

impl LiftProjector {
    /// Dykstra between the PSD cone and the trace half-spaces. The last PSD
    /// iterate is rescaled by a block-diagonal congruence so the result is
    /// feasible even when the iteration stops early.
    fn project(&mut self, z: &Matrix) -> Result<Matrix> {
        let dim = z.rows();
        let scale = z.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut x = z.clone();
        let mut p = Matrix::zeros(dim, dim);
        let mut q = Matrix::zeros(dim, dim);
        let mut y = z.clone();
        for _ in 0..self.max_iter {
            y = self.psd.project(&x.add(&p))?;
            p = x.add(&p).sub(&y);
            let x_next = project_traces(&y.add(&q), self.n, self.e_h, self.e_w);
            q = y.add(&q).sub(&x_next);
            let change = x_next.sub(&x).frobenius_norm();
            x = x_next;
            if change <= self.tol * scale && x.sub(&y).frobenius_norm() <= self.tol * scale {
                break;
            }
        }
        Ok(shrink_to_budgets(&y, self.n, self.e_h, self.e_w))
    }
}

/// Congruence by `diag(√a I_n, √b I_m)` with `a, b ≤ 1` chosen so both block
/// traces fit their budgets.
fn shrink_to_budgets(x: &Matrix, n: usize, e_h: f64, e_w: f64) -> Matrix {
    let dim = x.rows();
    let ratio = |tr: f64, e: f64| if tr > e { (e / tr).sqrt() } else { 1.0 };
    let a = ratio(block_trace(x, 0, n), e_h);
    let b = ratio(block_trace(x, n, dim - n), e_w);
    if a == 1.0 && b == 1.0 {
        return x.clone();
    }
    Matrix::from_fn(dim, dim, |i, j| {
        let si = if i < n { a } else { b };
        let sj = if j < n { a } else { b };
        x[(i, j)] * si * sj
    })
}

fn lifted_gradient(p: &LiftedProblem, x: &Matrix) -> Matrix {
    let n = p.n();
    let (_, z, _) = split_blocks(x, n);
    let g = logit_gradient(&p.y, &z);
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..p.m() {
        for j in 0..n {
            out[(n + i, j)] = 0.5 * g[(i, j)];
            out[(j, n + i)] = 0.5 * g[(i, j)];
        }
    }
    out
}

fn lifted_objective(p: &LiftedProblem, x: &Matrix) -> f64 {
    let (_, z, _) = split_blocks(x, p.n());
    logit_loss(&p.y, &z)
}

fn initial_point(p: &LiftedProblem, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = p.dim();
    let b = Matrix::random_normal(dim, dim, &mut rng);
    let mut x = b.matmul_t(&b);
    let n = p.n();
    let sh = 0.5 * p.e_h / block_trace(&x, 0, n);
    let sw = 0.5 * p.e_w / block_trace(&x, n, p.m());
    // Congruence by diag(√sh, √sw) keeps X PSD.
    let d: Vec<f64> = (0..dim).map(|i| if i < n { sh.sqrt() } else { sw.sqrt() }).collect();
    for i in 0..dim {
        for j in 0..dim {
            x[(i, j)] *= d[i] * d[j];
        }
    }
    x.symmetrize()
}

/// Accelerated projected gradient on the lifted variable.
pub fn solve_lifted(p: &LiftedProblem, opts: &LiftedOptions) -> Result<LiftedSolution> {
    if !(opts.step > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let n = p.n();
    let mut proj = LiftProjector {
        psd: PsdProjector::new(),
        n,
        e_h: p.e_h,
        e_w: p.e_w,
        tol: opts.dykstra_tol,
        max_iter: opts.dykstra_max_iter,
    };
    let t = opts.step;
    let step = |proj: &mut LiftProjector, at: &Matrix| -> Result<Matrix> {
        let mut moved = at.clone();
        moved.axpy(-t, &lifted_gradient(p, at));
        Ok(proj.project(&moved)?.symmetrize())
    };

    let start = opts.seed.map_or_else(|| Matrix::zeros(p.dim(), p.dim()), |seed| initial_point(p, seed));
    let mut x = proj.project(&start)?.symmetrize();
    let mut f = lifted_objective(p, &x);
    let mut yv = x.clone();
    let mut theta = 1.0_f64;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        check_cancel(opts.cancel.as_ref())?;
        iterations += 1;
        let x_new = step(&mut proj, &yv)?;
        let f_new = lifted_objective(p, &x_new);
        if !f_new.is_finite() {
            return Err(Error::SolverFailure {
                solver: "lifted projected gradient",
                reason: "objective is not finite".into(),
                residual: None,
                restart: None,
            });
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        if f_new > f || yv.sub(&x_new).inner(&x_new.sub(&x)) > 0.0 {
            theta = 1.0;
            yv = x_new.clone();
        } else {
            let beta = (theta - 1.0) / theta_new;
            yv = x_new.add(&x_new.sub(&x).scale(beta));
            theta = theta_new;
        }
        x = x_new;
        f = f_new;
        if iterations % 10 == 0 {
            residual = x.sub(&step(&mut proj, &x)?).frobenius_norm() / t;
            if residual <= opts.tol {
                break;
            }
        }
    }
    if residual > opts.tol {
        return Err(Error::SolverFailure {
            solver: "lifted projected gradient",
            reason: format!("gradient-mapping residual above {} after {} iterations", opts.tol, opts.max_iter),
            residual: Some(residual),
            restart: None,
        });
    }
    let (gram_h, logits, gram_w) = split_blocks(&x, n);
    let activity = (gram_w.trace() / p.e_w, gram_h.trace() / p.e_h);
    Ok(LiftedSolution {
        objective: logit_loss(&p.y, &logits),
        x,
        gram_h,
        logits,
        gram_w,
        kkt_residual: residual,
        iterations,
        activity,
    })
}

/// Smallest eigenvalue relative to the operator norm (PSD check helper).
pub fn relative_min_eigenvalue(x: &Matrix) -> Result<f64> {
    let e = sym_eig(x)?;
    Ok(e.min_eigenvalue() / e.op_norm().max(f64::MIN_POSITIVE))
}

/// Block pattern to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockPattern {
    /// `α_i I + β_i (J − I)` on each diagonal block, `κ_ij J` off the diagonal.
    DirectSum,
    /// `a × l` grid: shared `α I + β (J − I)` on diagonal blocks and shared
    /// `α′ I + β′ (J − I)` on off-diagonal blocks.
    Grid { a: usize, l: usize },
    /// `b` blocks of size `s`: shared `α I + β (J − I)` on diagonal blocks and
    /// a single constant `κ` off the diagonal.
    Wreath { s: usize, b: usize },
}

/// Fitted off-diagonal block parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OffBlockFit {
    /// `κ_ij` for each pair of blocks (symmetric, diagonal unused).
    PerPair(Vec<Vec<f64>>),
    /// Shared `α′ I + β′ (J − I)`.
    Shared { alpha: f64, beta: f64 },
    /// Shared constant `κ J`.
    Constant(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockPatternFit {
    pub partition: Vec<usize>,
    /// One entry per diagonal-block class (a single shared class for grid and
    /// wreath patterns).
    pub alpha_diag: Vec<f64>,
    pub beta_diag: Vec<f64>,
    pub off: OffBlockFit,
    pub relative_residual: f64,
    pub parameter_count: usize,
    /// For grid and wreath patterns: the fit under the other of the two,
    /// since both shapes can describe the same observed matrix.
    pub alternative: Option<Box<BlockPatternFit>>,
}

impl BlockPatternFit {
    /// Rebuilds the fitted matrix from the parameters.
    pub fn reconstruct(&self) -> Matrix {
        let starts = block_starts(&self.partition);
        let q: usize = self.partition.iter().sum();
        let shared = self.alpha_diag.len() == 1;
        Matrix::from_fn(q, q, |i, j| {
            let (bi, oi) = locate(&starts, i);
            let (bj, oj) = locate(&starts, j);
            if bi == bj {
                let c = if shared { 0 } else { bi };
                if i == j {
                    self.alpha_diag[c]
                } else {
                    self.beta_diag[c]
                }
            } else {
                match &self.off {
                    OffBlockFit::PerPair(k) => k[bi][bj],
                    OffBlockFit::Shared { alpha, beta } => {
                        if oi == oj {
                            *alpha
                        } else {
                            *beta
                        }
                    }
                    OffBlockFit::Constant(k) => *k,
                }
            }
        })
    }
}

fn block_starts(partition: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    partition
        .iter()
        .map(|s| {
            let start = acc;
            acc += s;
            start
        })
        .collect()
}

fn locate(starts: &[usize], i: usize) -> (usize, usize) {
    let b = starts.partition_point(|&s| s <= i) - 1;
    (b, i - starts[b])
}

/// Least-squares fit by class means; `class(i, j)` returns a class index.
fn class_means(g: &Matrix, classes: usize, class: impl Fn(usize, usize) -> usize) -> (Vec<f64>, usize) {
    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let c = class(i, j);
            sums[c] += g[(i, j)];
            counts[c] += 1;
        }
    }
    let used = counts.iter().filter(|&&c| c > 0).count();
    (
        sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect(),
        used,
    )
}

fn fit_shared(g: &Matrix, partition: &[usize], constant_off: bool) -> BlockPatternFit {
    let starts = block_starts(partition);
    let (means, used) = class_means(g, 4, |i, j| {
        let (bi, oi) = locate(&starts, i);
        let (bj, oj) = locate(&starts, j);
        match (bi == bj, oi == oj) {
            (true, true) => 0,
            (true, false) => 1,
            (false, _) if constant_off => 2,
            (false, true) => 2,
            (false, false) => 3,
        }
    });
    let off = if constant_off {
        OffBlockFit::Constant(means[2])
    } else {
        OffBlockFit::Shared {
            alpha: means[2],
            beta: means[3],
        }
    };
    finish(g, partition, vec![means[0]], vec![means[1]], off, used)
}

fn finish(
    g: &Matrix,
    partition: &[usize],
    alpha_diag: Vec<f64>,
    beta_diag: Vec<f64>,
    off: OffBlockFit,
    parameter_count: usize,
) -> BlockPatternFit {
    let mut fit = BlockPatternFit {
        partition: partition.to_vec(),
        alpha_diag,
        beta_diag,
        off,
        relative_residual: 0.0,
        parameter_count,
        alternative: None,
    };
    let norm = g.frobenius_norm();
    fit.relative_residual = if norm == 0.0 {
        0.0
    } else {
        g.sub(&fit.reconstruct()).frobenius_norm() / norm
    };
    fit
}

/// Least-squares fit of a block pattern; `relative_residual` is
/// `‖g − fit‖_F / ‖g‖_F`.
pub fn fit_block_pattern(g: &Matrix, partition: &[usize], pattern: BlockPattern) -> Result<BlockPatternFit> {
    if !g.is_square() {
        return Err(invalid("pattern fit needs a square matrix"));
    }
    if partition.is_empty() || partition.contains(&0) || partition.iter().sum::<usize>() != g.rows() {
        return Err(invalid(format!("partition {partition:?} does not cover size {}", g.rows())));
    }
    match pattern {
        BlockPattern::DirectSum => {
            let r = partition.len();
            let starts = block_starts(partition);
            // Classes: 2 per diagonal block, then one per unordered block pair.
            let pair = |a: usize, b: usize| {
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                2 * r + a * r + b
            };
            let (means, used) = class_means(g, 2 * r + r * r, |i, j| {
                let (bi, _) = locate(&starts, i);
                let (bj, _) = locate(&starts, j);
                if bi == bj {
                    2 * bi + usize::from(i != j)
                } else {
                    pair(bi, bj)
                }
            });
            let kappa = (0..r)
                .map(|a| (0..r).map(|b| if a == b { 0.0 } else { means[pair(a, b)] }).collect())
                .collect();
            Ok(finish(
                g,
                partition,
                (0..r).map(|b| means[2 * b]).collect(),
                (0..r).map(|b| means[2 * b + 1]).collect(),
                OffBlockFit::PerPair(kappa),
                used,
            ))
        }
        BlockPattern::Grid { a, l } | BlockPattern::Wreath { s: l, b: a } => {
            if partition != vec![l; a].as_slice() {
                return Err(invalid(format!("partition {partition:?} is not {a} blocks of size {l}")));
            }
            let grid = fit_shared(g, partition, false);
            let wreath = fit_shared(g, partition, true);
            let (mut primary, alt) = if matches!(pattern, BlockPattern::Grid { .. }) {
                (grid, wreath)
            } else {
                (wreath, grid)
            };
            primary.alternative = Some(Box::new(alt));
            Ok(primary)
        }
    }
}
