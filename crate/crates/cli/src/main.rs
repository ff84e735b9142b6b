//! `symtransfer` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 parse or input error, 3 solver
//! failure, 4 invariant violation.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use symtransfer::diagnostics::Checks;
use symtransfer::io::{ExperimentConfig, PayloadFormat, SolverKind};
use symtransfer::lifted::BlockPattern;
use symtransfer::perm::QMode;

use crate::commands::{fmt6, load_config};
use crate::run::Run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] symtransfer::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use symtransfer::Error as E;
        match self {
            CliError::Invariant(_) => 4,
            CliError::Core(E::Io(_)) => 1,
            CliError::Core(E::Parse { .. } | E::InvalidInput(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "symtransfer", version, about = "Layer-peeled symmetry solvers and Gram diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

impl From<Format> for PayloadFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => PayloadFormat::Text,
            Format::Binary => PayloadFormat::Binary,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory. Defaults to the config's `output_dir`, then
    /// $SYMTRANSFER_OUT, then ./symtransfer-out.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Payload format of written matrices.
    #[arg(long, value_enum, default_value = "binary")]
    format: Format,
}

impl RunArgs {
    fn open(&self, command: &'static str) -> Result<(ExperimentConfig, Run), CliError> {
        let cfg = load_config(&self.config)?;
        let dir = run::resolve_out_dir(self.out.as_deref(), Some(&cfg));
        let run = Run::new(command, dir, self.format.into())?.with_config(&cfg);
        Ok((cfg, run))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    DirectSum,
    Grid,
    Wreath,
}

#[derive(Subcommand)]
enum Command {
    /// Cyclic targets: convex generating-vector program and factorization.
    SolveCyclic(RunArgs),
    /// 2-transitive targets: α system and closed-form ETF solution.
    SolvePerm {
        #[command(flatten)]
        run: RunArgs,
        /// Use a random orthonormal Q drawn from this seed instead of the
        /// canonical one.
        #[arg(long)]
        random_q: Option<u64>,
    },
    /// Multi-block targets: picks the cyclic, α-system or lifted solver from
    /// the config's `solver` key (or the group structure when `auto`).
    SolveMultiblock(RunArgs),
    /// Multi-restart projected gradient on the factored problem.
    OraclePgd {
        #[command(flatten)]
        run: RunArgs,
        /// Run restarts on one thread.
        #[arg(long)]
        sequential: bool,
    },
    /// PSD-lifted convex relaxation, with an optional block-pattern fit of
    /// the W Gram.
    LiftSolve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, requires = "partition")]
        pattern: Option<PatternArg>,
        /// Block sizes, e.g. `2,3`.
        #[arg(long, value_delimiter = ',')]
        partition: Option<Vec<usize>>,
    },
    /// Distances of Gram matrices to simplex-ETF and circulant geometry.
    /// Directories are scanned for `.mat` files.
    Diagnose {
        /// Only the simplex-ETF distance. With neither flag both are computed.
        #[arg(long)]
        etf: bool,
        /// Only the circulant distance.
        #[arg(long)]
        circ: bool,
        /// Print the full summaries as JSON.
        #[arg(long)]
        json: bool,
        /// Where normalized Grams and the manifest go.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Gram files or directories of them.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Solve a config and check every closed-form invariant that applies.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Also compare against the projected-gradient oracle.
        #[arg(long)]
        pgd: bool,
    },
}

fn pattern_from(arg: PatternArg, partition: &[usize]) -> Result<BlockPattern, CliError> {
    let uniform = |name: &str| {
        let l = partition[0];
        if partition.iter().all(|&s| s == l) {
            Ok((partition.len(), l))
        } else {
            Err(CliError::Core(symtransfer::Error::InvalidInput(format!(
                "{name} pattern needs equal block sizes"
            ))))
        }
    };
    Ok(match arg {
        PatternArg::DirectSum => BlockPattern::DirectSum,
        PatternArg::Grid => {
            let (a, l) = uniform("grid")?;
            BlockPattern::Grid { a, l }
        }
        PatternArg::Wreath => {
            let (b, s) = uniform("wreath")?;
            BlockPattern::Wreath { s, b }
        }
    })
}

fn finish(run: Run) -> Result<(), CliError> {
    let path = run.finish()?;
    println!("manifest {}", path.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveCyclic(args) => {
            let (cfg, mut run) = args.open("solve-cyclic")?;
            let sol = commands::run_cyclic(&cfg, &mut run)?;
            println!("objective {}", sol.objective);
            finish(run)
        }
        Command::SolvePerm { run: args, random_q } => {
            let (cfg, mut run) = args.open("solve-perm")?;
            let q = random_q.map_or(QMode::Canonical, QMode::Random);
            let r = commands::run_perm(&cfg, &mut run, q)?;
            println!("objective {}", r.objective);
            println!("k {}", r.solution.certificate.k);
            finish(run)
        }
        Command::SolveMultiblock(args) => {
            let (cfg, mut run) = args.open("solve-multiblock")?;
            let kind = commands::classify(&cfg)?;
            let obj = match kind {
                SolverKind::Cyclic => commands::run_cyclic(&cfg, &mut run)?.objective,
                SolverKind::Perm => commands::run_perm(&cfg, &mut run, QMode::Canonical)?.objective,
                SolverKind::Lifted => commands::run_lifted(&cfg, &mut run, None)?,
                SolverKind::Pgd | SolverKind::Auto => commands::run_pgd(&cfg, &mut run, false)?,
            };
            run.detail("solver", kind);
            println!("solver {}", serde_json::to_value(kind).expect("kind serializes").as_str().unwrap_or("?"));
            println!("objective {obj}");
            finish(run)
        }
        Command::OraclePgd { run: args, sequential } => {
            let (cfg, mut run) = args.open("oracle-pgd")?;
            let obj = commands::run_pgd(&cfg, &mut run, sequential)?;
            println!("objective {obj}");
            finish(run)
        }
        Command::LiftSolve {
            run: args,
            pattern,
            partition,
        } => {
            let (cfg, mut run) = args.open("lift-solve")?;
            let explicit = match (pattern, partition) {
                (Some(p), Some(part)) if !part.is_empty() => Some((part.clone(), pattern_from(p, &part)?)),
                _ => None,
            };
            let obj = commands::run_lifted(&cfg, &mut run, explicit)?;
            println!("objective {obj}");
            finish(run)
        }
        Command::Diagnose {
            etf,
            circ,
            json,
            out,
            paths,
        } => diagnose(etf, circ, json, out, &paths),
        Command::Verify { run: args, pgd } => {
            let (cfg, mut run) = args.open("verify")?;
            let outcome = commands::verify(&cfg, &mut run, pgd);
            for c in run.checks() {
                println!("{} {} {:e} <= {:e}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.value, c.tolerance);
            }
            outcome?;
            finish(run)
        }
    }
}

fn diagnose(etf: bool, circ: bool, json: bool, out: Option<PathBuf>, paths: &[PathBuf]) -> Result<(), CliError> {
    let checks = if etf || circ { Checks { etf, circ } } else { Checks::ALL };
    let files = commands::collect_inputs(paths)?;
    if files.is_empty() {
        return Err(CliError::Core(symtransfer::Error::InvalidInput("no input matrices".into())));
    }
    let results = commands::diagnose_files(&files, checks);
    let mut run = Run::new("diagnose", run::resolve_out_dir(out.as_deref(), None), PayloadFormat::Text)?;
    let mut summaries = Vec::new();
    let mut first_error = None;
    let mut used_names = std::collections::BTreeSet::new();
    for d in results {
        let shown = d.path.display().to_string();
        match d.outcome {
            Ok(report) => {
                let summary = report.summary();
                if !json {
                    if files.len() > 1 {
                        println!("file {shown}");
                    }
                    if let (Some(delta), Some(c)) = (summary.delta_etf, summary.c_star) {
                        println!("delta_etf {}", fmt6(delta));
                        println!("c_star {}", fmt6(c));
                        if summary.anti_aligned {
                            println!("anti_aligned true");
                        }
                    }
                    if let Some(delta) = summary.delta_circ {
                        println!("delta_circ {}", fmt6(delta));
                    }
                }
                let stem = d.path.file_stem().map_or("gram".into(), |s| s.to_string_lossy().into_owned());
                let mut name = format!("{stem}.normalized");
                let mut k = 1;
                while !used_names.insert(name.clone()) {
                    k += 1;
                    name = format!("{stem}_{k}.normalized");
                }
                run.write_labeled(&name, report.normalized.matrix(), report.normalized.labels().map(<[String]>::to_vec))?;
                summaries.push(serde_json::json!({ "file": shown, "summary": summary }));
            }
            Err(e) => {
                eprintln!("error: {shown}: {e}");
                summaries.push(serde_json::json!({ "file": shown, "error": e.to_string() }));
                first_error.get_or_insert(e);
            }
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&summaries).expect("summaries serialize"));
    }
    run.detail("reports", &summaries);
    run.finish()?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
