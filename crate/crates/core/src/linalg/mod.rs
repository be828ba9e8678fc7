//! Dense kernels for dynamic mode decomposition: a Gram-matrix thin SVD,
//! the pseudoinverse built on it, and eigenvalues of small real matrices.

mod eig;
mod matrix;
mod svd;

pub use eig::{eig_small, spectral_order, ComplexSpectrum};
pub use matrix::Matrix;
pub use svd::{default_tol, pseudoinverse, svd_from_gram, symmetric_eigen, thin_svd, GramSvd, ThinSvd};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: expected a non-empty square matrix, got {rows}x{cols}")]
    Dimension { op: &'static str, rows: usize, cols: usize },
    #[error("{op}: input contains NaN or infinity")]
    NonFinite { op: &'static str },
    #[error("QR iteration did not converge after {iterations} sweeps (subdiagonal norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}
