//! Command implementations. Each one solves, writes its matrices through a
//! [`Run`] and records invariant checks in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use symtransfer::cyclic::{factor_solution, solve_generating_vectors, CyclicSolution};
use symtransfer::diagnostics::{build_report, circ_distance, etf_distance, Checks, GramMatrix};
use symtransfer::groups::{is_two_transitive, orbit_matrix, ColumnMode, GroupSpec, TargetSpec};
use symtransfer::io::{read_matrix, ExperimentConfig, PayloadFormat, SolverKind};
use symtransfer::layer_peeled::{logit_loss, objective, solve_pgd, LayerPeeledProblem};
use symtransfer::lifted::{fit_block_pattern, relative_min_eigenvalue, solve_lifted, BlockPattern, LiftedProblem};
use symtransfer::numerics::nuclear_norm;
use symtransfer::perm::{
    alpha_blocks, check_two_transitive, construct_solution, orbit_equivariance_error, phi, solve_alpha,
    EtfSolution, QMode,
};
use symtransfer::exec::map_slice;
use symtransfer::{Execution, Matrix};

use crate::run::Run;
use crate::CliError;

/// Tolerance for closed-form identities.
const EXACT_TOL: f64 = 1e-8;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.rel_diff(b)
}

fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(symtransfer::Error::from)?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

/// Which characterization applies to a target.
pub fn classify(cfg: &ExperimentConfig) -> Result<SolverKind, CliError> {
    if cfg.solver != SolverKind::Auto {
        return Ok(cfg.solver);
    }
    let blocks = &cfg.target.blocks;
    if blocks
        .iter()
        .all(|b| b.group.is_cyclic() && b.columns == ColumnMode::Elements)
    {
        return Ok(SolverKind::Cyclic);
    }
    let mut two_transitive = true;
    for b in blocks {
        two_transitive &= b.is_uniform() || is_two_transitive(&b.group)?;
    }
    Ok(if two_transitive { SolverKind::Perm } else { SolverKind::Lifted })
}

fn embedding_dim(cfg: &ExperimentConfig, default: usize) -> usize {
    cfg.d.unwrap_or(default)
}

// ---------------------------------------------------------------- cyclic

fn cyclic_bases(target: &TargetSpec) -> Result<Vec<Vec<f64>>, CliError> {
    target
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if !b.group.is_cyclic() || b.columns != ColumnMode::Elements {
                Err(CliError::Core(symtransfer::Error::InvalidInput(format!(
                    "block {i} is not an element-indexed cyclic orbit"
                ))))
            } else {
                Ok(b.base.clone())
            }
        })
        .collect()
}

fn block_circ_distance(z: &Matrix) -> Result<f64, CliError> {
    let m = z.rows();
    let mut worst = 0.0_f64;
    for b in 0..z.cols() / m {
        worst = worst.max(circ_distance(&z.submatrix(0, b * m, m, m))?);
    }
    Ok(worst)
}

pub fn run_cyclic(cfg: &ExperimentConfig, run: &mut Run) -> Result<CyclicSolution, CliError> {
    let ys = cyclic_bases(&cfg.target)?;
    let (e_w, e_h) = (cfg.budgets.e_w, cfg.budgets.e_h);
    let opts = symtransfer::cyclic::CyclicOptions {
        seed: cfg.seed,
        ..cfg.cyclic.clone()
    };
    let sol = solve_generating_vectors(&ys, e_w, e_h, &opts)?;
    let m = ys[0].len();
    let d = embedding_dim(cfg, m);
    let factors = factor_solution(&sol.z_matrix, e_w, e_h, d)?;

    for (name, mat) in [
        ("y", &sol.y_matrix),
        ("z", &sol.z_matrix),
        ("gram_w", &sol.gram_w),
        ("gram_h", &sol.gram_h),
        ("w", &factors.w),
        ("h", &factors.h),
    ] {
        run.write(name, mat)?;
    }
    run.residual("kkt", sol.kkt_residual);
    run.detail("objective", sol.objective);
    run.detail("generators", &sol.generators);
    run.detail("nuclear_norm_used", sol.nuclear_norm_used);
    run.detail("iterations", sol.iterations);
    run.detail("degenerate", sol.degenerate);
    run.detail("non_unique", sol.non_unique);

    let orbit = orbit_matrix(&cfg.target)?;
    run.check_le("orbit_matches_circulant_layout", rel(&orbit.y, &sol.y_matrix), 0.0);
    run.check_le("delta_circ_z", block_circ_distance(&sol.z_matrix)?, EXACT_TOL);
    run.check_le("delta_circ_gram_w", circ_distance(&sol.gram_w)?, EXACT_TOL);
    if ys.len() == 1 {
        run.check_le("delta_circ_gram_h", circ_distance(&sol.gram_h)?, EXACT_TOL);
    }
    let p = LayerPeeledProblem::new(sol.y_matrix.clone(), e_w, e_h, d)?;
    run.check_le("factor_logits", rel(&factors.logits(), &sol.z_matrix), EXACT_TOL);
    run.check_le("factor_gram_w", rel(&factors.w.matmul_t(&factors.w), &sol.gram_w), EXACT_TOL);
    run.check_le("factor_objective", rel_scalar(objective(&p, &factors)?, sol.objective), EXACT_TOL);
    if !sol.degenerate {
        let radius = (e_w * e_h).sqrt();
        run.check_le("nuclear_norm_active", rel_scalar(nuclear_norm(&sol.z_matrix), radius), 1e-6);
    }
    run.check_le("kkt", sol.kkt_residual, 10.0 * opts.tol);
    Ok(sol)
}

// ---------------------------------------------------------------- perm

pub struct PermRun {
    pub solution: EtfSolution,
    pub objective: f64,
}

pub fn run_perm(cfg: &ExperimentConfig, run: &mut Run, q: QMode) -> Result<PermRun, CliError> {
    check_two_transitive(&cfg.target)?;
    let orbit = orbit_matrix(&cfg.target)?;
    let blocks = alpha_blocks(&cfg.target, &orbit);
    let (e_w, e_h) = (cfg.budgets.e_w, cfg.budgets.e_h);
    let cert = solve_alpha(&blocks, e_w, e_h, &cfg.alpha)?;
    let m = orbit.y.rows();
    let d = embedding_dim(cfg, m);
    let sol = construct_solution(&cert, &cfg.target, &orbit, e_w, e_h, d, q)?;
    let obj = logit_loss(&orbit.y, &sol.logits);

    for (name, mat) in [
        ("y", &orbit.y),
        ("w", &sol.w),
        ("h", &sol.h),
        ("c", &sol.c),
        ("logits", &sol.logits),
        ("gram_w", &sol.gram_w),
        ("gram_h", &sol.gram_h),
    ] {
        run.write(name, mat)?;
    }
    run.residual("alpha", cert.residual);
    run.detail("certificate", &cert);
    run.detail("objective", obj);

    let expected_gram = Matrix::centering(m).scale(e_w / (m - 1) as f64);
    run.check_le("gram_w_etf", rel(&sol.gram_w, &expected_gram), EXACT_TOL);
    let kc = sol.c.scale(cert.k);
    let mismatch = sol.logits.add(&kc).frobenius_norm() / kc.frobenius_norm().max(f64::MIN_POSITIVE);
    run.check_le("logits_equal_minus_kc", mismatch, EXACT_TOL);
    run.check_le("alpha_residual", cert.residual, cfg.alpha.tol.max(1e-10));
    run.check_le("flat_spectrum", sol.spectral_spread(), 1e-7);
    run.check_le(
        "objective_equals_phi",
        rel_scalar(obj, phi(&blocks, &cert.alphas, e_w, e_h)),
        EXACT_TOL,
    );
    run.check_le("logit_equivariance", orbit_equivariance_error(&sol.logits, &orbit)?, EXACT_TOL);
    Ok(PermRun {
        solution: sol,
        objective: obj,
    })
}

// ---------------------------------------------------------------- pgd

pub fn run_pgd(cfg: &ExperimentConfig, run: &mut Run, sequential: bool) -> Result<f64, CliError> {
    let orbit = orbit_matrix(&cfg.target)?;
    let d = embedding_dim(cfg, orbit.y.rows() + orbit.n());
    let (e_w, e_h) = (cfg.budgets.e_w, cfg.budgets.e_h);
    let p = LayerPeeledProblem::new(orbit.y.clone(), e_w, e_h, d)?;
    let mut opts = cfg.seeded_pgd();
    if sequential {
        opts.execution = Execution::Sequential;
    }
    let report = solve_pgd(&p, &opts)?;
    let logits = report.best.logits();
    run.write("y", &orbit.y)?;
    run.write("w", &report.best.w)?;
    run.write("h", &report.best.h)?;
    run.write("logits", &logits)?;
    run.write("gram_w", &report.best.w.matmul_t(&report.best.w))?;
    run.write("gram_h", &report.best.h.t_matmul(&report.best.h))?;
    run.residual("restart_consensus_gap", report.consensus_gap());
    run.detail("objective", report.objective);
    run.detail("best_restart", report.best_restart);
    run.detail("restart_objectives", &report.restart_objectives);
    run.detail("iterations", &report.iterations);
    run.detail("converged", &report.converged);
    run.detail("constraint_activity", report.constraint_activity);
    run.check_le("w_budget", report.best.w.frobenius_sq() / e_w - 1.0, 1e-9);
    run.check_le("h_budget", report.best.h.frobenius_sq() / e_h - 1.0, 1e-9);
    Ok(report.objective)
}

// ---------------------------------------------------------------- lifted

/// Block pattern implied by a single-block composite group.
pub fn implied_pattern(target: &TargetSpec) -> Option<(Vec<usize>, BlockPattern)> {
    match &target.blocks.first()?.group {
        GroupSpec::DirectSum { blocks } => Some((blocks.clone(), BlockPattern::DirectSum)),
        GroupSpec::DirectProduct { a, l } => Some((vec![*l; *a], BlockPattern::Grid { a: *a, l: *l })),
        GroupSpec::Wreath { s, b } => Some((vec![*s; *b], BlockPattern::Wreath { s: *s, b: *b })),
        _ => None,
    }
}

pub fn run_lifted(
    cfg: &ExperimentConfig,
    run: &mut Run,
    pattern: Option<(Vec<usize>, BlockPattern)>,
) -> Result<f64, CliError> {
    let orbit = orbit_matrix(&cfg.target)?;
    let (e_w, e_h) = (cfg.budgets.e_w, cfg.budgets.e_h);
    let p = LiftedProblem::new(orbit.y.clone(), e_w, e_h)?;
    let opts = cfg.lifted.clone();
    let sol = solve_lifted(&p, &opts)?;
    run.write("y", &orbit.y)?;
    run.write("x", &sol.x)?;
    run.write("gram_w", &sol.gram_w)?;
    run.write("gram_h", &sol.gram_h)?;
    run.write("logits", &sol.logits)?;
    run.residual("kkt", sol.kkt_residual);
    run.detail("objective", sol.objective);
    run.detail("iterations", sol.iterations);
    run.detail("activity", sol.activity);
    run.check_le("psd", -relative_min_eigenvalue(&sol.x)?, 1e-8);
    run.check_le("trace_w", sol.gram_w.trace() - e_w, 1e-8 * e_w);
    run.check_le("trace_h", sol.gram_h.trace() - e_h, 1e-8 * e_h);
    if let Some((partition, pattern)) = pattern.or_else(|| implied_pattern(&cfg.target)) {
        let fit = fit_block_pattern(&sol.gram_w, &partition, pattern)?;
        run.residual("pattern_fit", fit.relative_residual);
        run.detail("pattern_fit", &fit);
    }
    Ok(sol.objective)
}

// ---------------------------------------------------------------- diagnose

pub struct Diagnosed {
    pub path: PathBuf,
    pub outcome: Result<symtransfer::diagnostics::DiagnosticsReport, CliError>,
}

/// Expands directories into their `.mat` files (sorted).
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(symtransfer::Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "mat"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn diagnose_files(files: &[PathBuf], checks: Checks) -> Vec<Diagnosed> {
    map_slice(Execution::Parallel, files, |path| Diagnosed {
        path: path.clone(),
        outcome: read_matrix(path)
            .and_then(|f| GramMatrix::new(f.data, f.labels))
            .and_then(|g| build_report(&g, checks))
            .map_err(CliError::from),
    })
}

/// Fixed six-decimal rendering used for every printed delta.
pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

// ---------------------------------------------------------------- verify

pub fn verify(cfg: &ExperimentConfig, run: &mut Run, with_pgd: bool) -> Result<SolverKind, CliError> {
    let kind = classify(cfg)?;
    let reference = match kind {
        SolverKind::Cyclic => Some(run_cyclic(cfg, run)?.objective),
        SolverKind::Perm => {
            let r = run_perm(cfg, run, QMode::Canonical)?;
            let etf = etf_distance(&r.solution.gram_w)?.0;
            run.check_le("delta_etf_gram_w", etf, EXACT_TOL);
            Some(r.objective)
        }
        SolverKind::Lifted => Some(run_lifted(cfg, run, None)?),
        SolverKind::Pgd | SolverKind::Auto => None,
    };
    if with_pgd || kind == SolverKind::Pgd {
        let mut sub = Run::new("verify", run.dir().join("pgd"), PayloadFormat::Binary)?.with_config(cfg);
        let pgd = run_pgd(cfg, &mut sub, false)?;
        sub.finish()?;
        run.detail("pgd_objective", pgd);
        if let Some(r) = reference {
            // The closed form is a global minimum: PGD may not beat it.
            run.check_le("pgd_not_below_closed_form", (r - pgd) / r.abs().max(1.0), 1e-6);
            run.check_le("pgd_matches_closed_form", rel_scalar(pgd, r), 1e-3);
        }
    }
    run.detail("solver", kind);
    Ok(kind)
}
