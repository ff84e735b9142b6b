//! Dense linear-algebra kernels shared by every solver: matrices, Jacobi SVD
//! and eigendecomposition, the DFT, matrix square roots and projections.

mod cone;
mod decomp;
mod fourier;
mod matrix;

pub use cone::{
    nuclear_norm, pinv_sqrt_psd, principal_sqrt_psd, project_nuclear_ball, psd_project,
    simplex_project_magnitudes, PsdProjector, NOT_PSD, PSD_SLACK,
};
pub(crate) use cone::l1_threshold;
pub use decomp::{singular_values, svd_compact, sym_eig, sym_eig_warm, SvdResult, SymEig};
pub use fourier::{dft, idft, ComplexVector};
pub(crate) use fourier::idft_unchecked;
pub use matrix::Matrix;

/// Default relative rank tolerance for compact SVDs.
pub const RANK_TOL: f64 = 1e-10;
