//! Finite element bidomain solver with a block-LU preconditioner for the
//! coupled heart-torso system.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod bench;
pub mod cli;
pub mod conductivity;
pub mod config;
pub mod error;
pub mod ionic;
pub mod krylov;
pub mod mesh;
pub mod oracle;
pub mod precond;
pub mod simulate;
pub mod sparse;
pub mod system;
pub mod vtk;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/system.md")]
    mod system {}
    #[doc = include_str!("../../../book/src/preconditioner.md")]
    mod preconditioner {}
    #[doc = include_str!("../../../book/src/krylov.md")]
    mod krylov {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/bench.md")]
    mod bench {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
