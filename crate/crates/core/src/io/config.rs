//! TOML experiment configuration.
//!
//! ```toml
//! seed = 0
//! d = 8
//! solver = "cyclic"
//!
//! [budgets]
//! e_w = 10.0
//! e_h = 10.0
//!
//! [[target.blocks]]
//! group = { kind = "cyclic", m = 7 }
//! base = [0.0, 0.5, 0.3, 0.2, 0.0, 0.0, 0.0]
//!
//! [pgd]
//! restarts = 20
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cyclic::CyclicOptions;
use crate::error::{invalid, Error, Result};
use crate::groups::TargetSpec;
use crate::layer_peeled::{check_budgets, PgdOptions};
use crate::lifted::LiftedOptions;
use crate::perm::AlphaOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub e_w: f64,
    pub e_h: f64,
}

/// Which characterization a run uses. `Auto` picks the cyclic solver when every
/// block is cyclic, the α system when every block is 2-transitive, and the
/// lift otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Auto,
    Cyclic,
    Perm,
    Pgd,
    Lifted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Embedding dimension; defaults to the number of columns plus classes
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub budgets: Budgets,
    pub target: TargetSpec,
    #[serde(default)]
    pub pgd: PgdOptions,
    #[serde(default)]
    pub cyclic: CyclicOptions,
    #[serde(default)]
    pub alpha: AlphaOptions,
    #[serde(default)]
    pub lifted: LiftedOptions,
}

impl ExperimentConfig {
    pub fn new(target: TargetSpec, e_w: f64, e_h: f64) -> Self {
        Self {
            seed: 0,
            d: None,
            solver: SolverKind::Auto,
            output_dir: None,
            budgets: Budgets { e_w, e_h },
            target,
            pgd: PgdOptions::default(),
            cyclic: CyclicOptions::default(),
            alpha: AlphaOptions::default(),
            lifted: LiftedOptions::default(),
        }
    }

    /// Parses and validates. TOML syntax and unknown keys are reported as
    /// parse errors with a line number.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        check_budgets(self.budgets.e_w, self.budgets.e_h)?;
        self.target.validate()?;
        if self.d == Some(0) {
            return Err(invalid("d must be at least 1"));
        }
        if self.pgd.restarts == 0 {
            return Err(invalid("pgd.restarts must be at least 1"));
        }
        Ok(())
    }

    /// Seed propagated to every stochastic component.
    pub fn seeded_pgd(&self) -> PgdOptions {
        PgdOptions {
            seed: self.seed,
            ..self.pgd.clone()
        }
    }

}
