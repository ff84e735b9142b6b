//! Matrix interchange files and experiment configuration.

mod config;
mod matrix_file;

pub use config::{Budgets, ExperimentConfig, SolverKind};
pub use matrix_file::{read_matrix, write_matrix, MatrixFile, PayloadFormat, MAGIC};
