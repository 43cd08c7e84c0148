//! Preconditioners for the bidomain system.
//!
//! [`BlockLuPreconditioner`] approximates the block LU factorization of `Λ`,
//! replacing the Schur complement `K` by the monodomain matrix `K_m` and
//! both diagonal blocks by pluggable [`InnerPreconditioner`]s.

mod block;
mod cholesky;
mod ic0;
mod jacobi;
mod ordering;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use block::{build_km, regularize_s1, BlockLuPreconditioner, OpCounts, RegularizedInverse, RegularizedS1};
pub use cholesky::SparseCholesky;
pub use ic0::{Ic0, IC0_MAX_RESTARTS};
pub use jacobi::Jacobi;
pub use ordering::nested_dissection;

/// Approximate inverse of an SPD matrix.
///
/// Implementations must be linear, symmetric and positive so that they can
/// be used inside conjugate gradients.
pub trait InnerPreconditioner: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `P⁻¹ y` into `out`. Both slices have length [`dim`](Self::dim).
    fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]);

    fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_inverse_into(y, &mut out);
        out
    }

    fn name(&self) -> &'static str;
}

/// Inner preconditioner choice, as named in configuration files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    /// Sparse Cholesky factorization.
    #[default]
    Exact,
    /// Zero-fill incomplete Cholesky.
    Ic0,
    /// Diagonal scaling.
    Jacobi,
}

impl InnerKind {
    pub const ALL: [InnerKind; 3] = [InnerKind::Exact, InnerKind::Ic0, InnerKind::Jacobi];

    pub fn setup(self, a: &SparseMatrix) -> Result<Box<dyn InnerPreconditioner>> {
        Ok(match self {
            InnerKind::Exact => Box::new(SparseCholesky::factor(a)?),
            InnerKind::Ic0 => Box::new(Ic0::factor(a)?),
            InnerKind::Jacobi => Box::new(Jacobi::new(a)?),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InnerKind::Exact => "exact",
            InnerKind::Ic0 => "ic0",
            InnerKind::Jacobi => "jacobi",
        }
    }
}

impl fmt::Display for InnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(InnerKind::Exact),
            "ic0" => Ok(InnerKind::Ic0),
            "jacobi" => Ok(InnerKind::Jacobi),
            other => Err(Error::InvalidArgument(format!(
                "unknown inner preconditioner {other:?} (expected exact, ic0 or jacobi)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in InnerKind::ALL {
            assert_eq!(k.to_string().parse::<InnerKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{k}\""));
        }
        assert!("ilu".parse::<InnerKind>().is_err());
    }
}
