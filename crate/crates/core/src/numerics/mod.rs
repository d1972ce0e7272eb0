//! Dense linear-algebra kernels for the small matrices that appear in
//! multi-agent regulator design.
//!
//! Everything here is generic over [`Real`], implemented for `f32` and `f64`.
//! Matrix sizes are tiny (single-digit agents and states), so the routines
//! favour plain dense algorithms: Householder/QR for eigenvalues, partial
//! pivoting for ranks and solves, and Kronecker vectorization for Lyapunov
//! equations.

mod eig;
mod lyapunov;
mod matrix;
mod rank;
mod solve;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use thiserror::Error;

pub use eig::{eig, sym_eigvals, Spectrum, MAX_EIG_DIM};
pub use lyapunov::solve_lyapunov;
pub use matrix::{norm2, CMatrix, Matrix};
pub use rank::{crank, rank, DEFAULT_RANK_TOL};
pub use solve::{solve_block_linear, Lu};

/// Real scalar usable by every kernel in this crate.
pub trait Real: Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar type.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    /// Lossy widening used for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix dimension {dim} exceeds the supported maximum of {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("eigenvalue iteration did not converge after {iterations} sweeps for matrix\n{matrix}")]
    NoConvergence { iterations: usize, matrix: String },

    #[error("singular system: smallest pivot {pivot:e} at column {index}")]
    Singular { index: usize, pivot: f64 },

    #[error(
        "resonant pair: eigenvalues {lambda_i} and {lambda_j} sum to {sum:e}, \
         the Lyapunov operator is singular"
    )]
    ResonantPair {
        lambda_i: String,
        lambda_j: String,
        sum: f64,
    },

    #[error("right-hand side must be symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
}
