//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use symtransfer::io::{ExperimentConfig, MatrixFile, PayloadFormat};
use symtransfer::Matrix;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SYMTRANSFER_OUT";
const FALLBACK_OUT: &str = "symtransfer-out";
pub const MANIFEST: &str = "manifest.json";

/// `--out`, then the config's `output_dir`, then the environment, then a
/// fixed relative directory.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub format: PayloadFormat,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    versions: BTreeMap<&'static str, &'static str>,
    config_hash: Option<&'a str>,
    seed: Option<u64>,
    outputs: &'a [OutputEntry],
    residuals: &'a BTreeMap<String, f64>,
    checks: &'a [Check],
    all_checks_passed: bool,
    details: &'a BTreeMap<String, serde_json::Value>,
}

/// Collects the artifacts of one command and writes them with a manifest.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    format: PayloadFormat,
    config_hash: Option<String>,
    seed: Option<u64>,
    outputs: Vec<OutputEntry>,
    residuals: BTreeMap<String, f64>,
    checks: Vec<Check>,
    details: BTreeMap<String, serde_json::Value>,
}

impl Run {
    pub fn new(command: &'static str, dir: PathBuf, format: PayloadFormat) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(symtransfer::Error::from)?;
        Ok(Self {
            dir,
            command,
            format,
            config_hash: None,
            seed: None,
            outputs: Vec::new(),
            residuals: BTreeMap::new(),
            checks: Vec::new(),
            details: BTreeMap::new(),
        })
    }

    pub fn with_config(mut self, cfg: &ExperimentConfig) -> Self {
        self.config_hash = Some(sha256_hex(cfg.to_toml().as_bytes()));
        self.seed = Some(cfg.seed);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn provenance(&self) -> String {
        let mut p = format!("symtransfer {} {}", env!("CARGO_PKG_VERSION"), self.command);
        if let Some(seed) = self.seed {
            p.push_str(&format!(" seed={seed}"));
        }
        if let Some(h) = &self.config_hash {
            p.push_str(&format!(" config={}", &h[..16]));
        }
        p
    }

    pub fn write(&mut self, name: &str, m: &Matrix) -> Result<(), CliError> {
        self.write_labeled(name, m, None)
    }

    pub fn write_labeled(&mut self, name: &str, m: &Matrix, labels: Option<Vec<String>>) -> Result<(), CliError> {
        let mut file = MatrixFile::new(name, m.clone())
            .with_provenance(self.provenance())
            .with_format(self.format);
        file.labels = labels;
        let bytes = file.to_bytes()?;
        let file_name = format!("{name}.mat");
        fs::write(self.dir.join(&file_name), &bytes).map_err(symtransfer::Error::from)?;
        self.outputs.push(OutputEntry {
            file: file_name,
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            format: self.format,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn residual(&mut self, name: &str, value: f64) {
        self.residuals.insert(name.to_string(), value);
    }

    /// Records `value ≤ tolerance`; NaN fails.
    pub fn check_le(&mut self, name: &str, value: f64, tolerance: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("detail serializes");
        self.details.insert(key.to_string(), v);
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    /// Writes the manifest; fails with an invariant error when a check did not
    /// pass.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let all_passed = self.checks.iter().all(|c| c.passed);
        let versions = BTreeMap::from([
            ("symtransfer", env!("CARGO_PKG_VERSION")),
            ("manifest", "1"),
        ]);
        let manifest = Manifest {
            command: self.command,
            versions,
            config_hash: self.config_hash.as_deref(),
            seed: self.seed,
            outputs: &self.outputs,
            residuals: &self.residuals,
            checks: &self.checks,
            all_checks_passed: all_passed,
            details: &self.details,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text + "\n").map_err(symtransfer::Error::from)?;
        if all_passed {
            Ok(path)
        } else {
            let failed: Vec<String> = self
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{} = {:e} (tolerance {:e})", c.name, c.value, c.tolerance))
                .collect();
            Err(CliError::Invariant(failed.join("; ")))
        }
    }
}
