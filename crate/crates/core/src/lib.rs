//! Ship wake detection in sea-surface imagery as a sparse-regularised
//! inverse Radon problem.
//!
//! The pipeline masks the ship, estimates a sparse sinogram `X` with
//! `Y ≈ C X` (`C` = filtered back-projection) under a GMC, L1, Lp, TV or
//! nuclear-norm prior, searches that sinogram for the turbulent / narrow-V /
//! Kelvin wake signatures, and confirms each candidate half-line by its
//! mean intensity in the original image.

pub mod detect;
pub mod error;
pub mod eval;
pub mod image;
pub mod operator;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
pub use image::Image;
pub use prox::{PriorKind, PriorSpec};
pub use solver::{SolverConfig, SolverResult};
pub use transform::{AngleGrid, FbpFilter, Projector, Sinogram};
