//! Solvers for nonlocal Euler–chemotaxis models of immune-cell migration,
//! a hybrid agent model, and a density-matching calibration pipeline.

pub mod error;
pub mod estimation;
pub mod fft;
pub mod grid;
pub mod hyperbolic;
pub mod io;
pub mod kde;
pub mod kernels;
pub mod micro;
pub mod models;
pub mod parabolic;

pub use error::{Error, Result};
pub use grid::{ConservedState, Grid2D, ScalarField, VectorField};

// Chapters of the guide in book/, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/kinetic.md")]
    mod kinetic {}
    #[doc = include_str!("../../../book/src/chemotaxis.md")]
    mod chemotaxis {}
    #[doc = include_str!("../../../book/src/interactions.md")]
    mod interactions {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
