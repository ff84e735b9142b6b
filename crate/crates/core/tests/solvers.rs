//! Cross-module agreement between the solvers, the diagnostics and the file
//! format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtransfer::cyclic::{solve_generating_vectors, CyclicOptions, MultiBlockProjection};
use symtransfer::diagnostics::{build_report, circ_distance, etf_distance, Checks, GramMatrix};
use symtransfer::groups::{orbit_matrix, GroupSpec, TargetBlock, TargetSpec};
use symtransfer::io::{read_matrix, write_matrix, ExperimentConfig, MatrixFile, PayloadFormat};
use symtransfer::layer_peeled::{logit_loss, solve_pgd, LayerPeeledProblem, PgdOptions};
use symtransfer::lifted::{fit_block_pattern, solve_lifted, BlockPattern, LiftedOptions, LiftedProblem, OffBlockFit};
use symtransfer::perm::{activity_threshold, alpha_blocks, construct_solution, solve_alpha, AlphaOptions, QMode};

fn random_distribution(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn pgd(y: symtransfer::Matrix, e: f64, d: usize) -> f64 {
    let p = LayerPeeledProblem::new(y, e, e, d).unwrap();
    solve_pgd(&p, &PgdOptions { restarts: 8, ..Default::default() }).unwrap().objective
}

#[test]
fn cyclic_routes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = random_distribution(&mut rng, 5);
    let e = 2.0;
    let sol = solve_generating_vectors(std::slice::from_ref(&y), e, e, &CyclicOptions::default()).unwrap();
    let orbit = orbit_matrix(&TargetSpec::single(GroupSpec::Cyclic { m: 5 }, y)).unwrap();
    let factored = pgd(orbit.y.clone(), e, 5);
    let lifted = solve_lifted(&LiftedProblem::new(orbit.y, e, e).unwrap(), &LiftedOptions::default()).unwrap();
    assert!((sol.objective - factored).abs() <= 1e-6 * sol.objective);
    assert!((sol.objective - lifted.objective).abs() <= 1e-6 * sol.objective);
    assert!(circ_distance(&lifted.gram_w).unwrap() <= 1e-6);
}

#[test]
fn multi_block_cyclic_projections_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ys = vec![random_distribution(&mut rng, 4), random_distribution(&mut rng, 4)];
    let fourier = solve_generating_vectors(&ys, 1.5, 1.5, &CyclicOptions::default()).unwrap();
    let dykstra = solve_generating_vectors(
        &ys,
        1.5,
        1.5,
        &CyclicOptions {
            projection: MultiBlockProjection::Dykstra,
            tol: 1e-9,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((fourier.objective - dykstra.objective).abs() <= 1e-7 * fourier.objective);
    assert!(circ_distance(&fourier.gram_w).unwrap() <= 1e-8);
}

#[test]
fn closed_form_matches_oracles_on_symmetric_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let target = TargetSpec::single(GroupSpec::Symmetric { m: 4 }, random_distribution(&mut rng, 4));
    let orbit = orbit_matrix(&target).unwrap();
    let blocks = alpha_blocks(&target, &orbit);
    let e = 0.6 * activity_threshold(&blocks);
    let cert = solve_alpha(&blocks, e, e, &AlphaOptions::default()).unwrap();
    let canonical = construct_solution(&cert, &target, &orbit, e, e, 6, QMode::Canonical).unwrap();
    let rotated = construct_solution(&cert, &target, &orbit, e, e, 6, QMode::Random(5)).unwrap();
    assert!(canonical.logits.rel_diff(&rotated.logits) <= 1e-10);
    assert!(canonical.gram_w.rel_diff(&rotated.gram_w) <= 1e-10);

    let closed = logit_loss(&orbit.y, &canonical.logits);
    let factored = pgd(orbit.y.clone(), e, 6);
    let lifted = solve_lifted(&LiftedProblem::new(orbit.y, e, e).unwrap(), &LiftedOptions::default()).unwrap();
    assert!(factored >= closed - 1e-9 * closed);
    assert!((factored - closed).abs() <= 1e-6 * closed);
    assert!((lifted.objective - closed).abs() <= 1e-6 * closed);
    assert!(etf_distance(&lifted.gram_w).unwrap().0 <= 1e-5);
}

#[test]
fn solver_grams_survive_files_and_diagnostics() {
    let target = TargetSpec {
        blocks: vec![
            TargetBlock::new(GroupSpec::Symmetric { m: 3 }, vec![0.5, 0.3, 0.2]),
            TargetBlock::new(GroupSpec::Symmetric { m: 3 }, vec![0.7, 0.2, 0.1]),
        ],
    };
    let orbit = orbit_matrix(&target).unwrap();
    let cert = solve_alpha(&alpha_blocks(&target, &orbit), 1.0, 1.0, &AlphaOptions::default()).unwrap();
    let sol = construct_solution(&cert, &target, &orbit, 1.0, 1.0, 3, QMode::Canonical).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let path = dir.path().join("gram_w.mat");
    let file = MatrixFile::new("gram_w", sol.gram_w.clone())
        .with_labels(labels.clone())
        .with_format(PayloadFormat::Binary);
    write_matrix(&file, &path).unwrap();
    let back = read_matrix(&path).unwrap();
    assert_eq!(back, file);

    let report = build_report(&GramMatrix::new(back.data, back.labels).unwrap(), Checks::ALL).unwrap();
    assert!(report.delta_etf.unwrap() <= 1e-8);
    assert!(report.c_star.unwrap() > 0.0);
    let (again, _) = etf_distance(report.normalized.matrix()).unwrap();
    assert!((again - report.delta_etf.unwrap()).abs() <= 1e-12);
    assert_eq!(report.heatmap.labels.as_deref(), Some(labels.as_slice()));
}

#[test]
fn product_group_lift_has_grid_pattern() {
    let target = TargetSpec::single(GroupSpec::DirectProduct { a: 2, l: 3 }, vec![0.3, 0.2, 0.1, 0.15, 0.15, 0.1]);
    let orbit = orbit_matrix(&target).unwrap();
    let sol = solve_lifted(&LiftedProblem::new(orbit.y, 6.0, 6.0).unwrap(), &LiftedOptions::default()).unwrap();
    let fit = fit_block_pattern(&sol.gram_w, &[3, 3], BlockPattern::Grid { a: 2, l: 3 }).unwrap();
    assert!(fit.relative_residual <= 1e-6, "{}", fit.relative_residual);
    assert!(matches!(fit.off, OffBlockFit::Shared { .. }));
    let alt = fit.alternative.expect("wreath-shaped alternative");
    assert!(matches!(alt.off, OffBlockFit::Constant(_)));
    assert!(alt.relative_residual >= fit.relative_residual);
}

#[test]
fn config_file_reproduces_direct_calls() {
    let text = r#"
seed = 2
d = 3

[budgets]
e_w = 1.0
e_h = 1.0

[[target.blocks]]
group = { kind = "symmetric", m = 3 }
base = [0.5, 0.3, 0.2]

[pgd]
restarts = 3
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let orbit = orbit_matrix(&cfg.target).unwrap();
    let p = LayerPeeledProblem::new(orbit.y.clone(), cfg.budgets.e_w, cfg.budgets.e_h, cfg.d.unwrap()).unwrap();
    let a = solve_pgd(&p, &cfg.seeded_pgd()).unwrap();
    let b = solve_pgd(
        &p,
        &PgdOptions {
            restarts: 3,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert_eq!(a.best.w, b.best.w);
}
