//! Crate-wide error type.
//!
//! Errors are grouped by how the front end reacts to them: configuration
//! problems (exit code 2), numerical failures such as contact or Newton
//! divergence (exit code 3), and structural misuse of the library (bugs in
//! the caller, not the data).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration file or command-line input.
    #[error("config error: {0}")]
    Config(String),

    /// The fluid film closed up: min(1 + η) fell to the contact floor.
    /// The scheme (and the analysis behind it) presumes a strictly positive
    /// fluid height, so we abort rather than regularize.
    #[error("contact at step {step} (t = {t:.6}): min fluid height {min_height:.6e} <= floor {floor:.3e}")]
    Contact {
        step: usize,
        t: f64,
        min_height: f64,
        floor: f64,
    },

    /// Newton ran out of iterations on the fully implicit residual.
    #[error("Newton did not converge at step {step} after {iters} iterations; residual history {history:?}")]
    NewtonDiverged {
        step: usize,
        iters: usize,
        history: Vec<f64>,
    },

    /// Exact singularity met during LU factorization; `kind` says whether
    /// it was structural (empty row/column) or numeric (zero pivot).
    #[error("singular matrix: {kind} {index}")]
    Singular { index: usize, kind: &'static str },

    /// The caller violated a structural precondition (non-nested meshes,
    /// dimension mismatch, degenerate mesh request, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// NaN or other invalid numbers in input data.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
