//! Matrix-free P1 finite elements on locally structured triangular meshes,
//! with polynomial surrogates for the stiffness stencils.
//!
//! The domain is covered by a coarse conforming macro-mesh. Every macro-element
//! is refined uniformly into a structured lattice on which the stiffness matrix
//! is a seven-point stencil whose entries vary smoothly with position. The
//! [`surrogate`] module fits low-degree polynomials to those stencil functions
//! so that operator application only evaluates polynomials instead of
//! integrating the coefficient.

pub mod analysis;
pub mod coefficients;
pub mod error;
pub mod grid;
pub mod mesh;
pub mod multigrid;
pub mod operator;
pub mod problems;
pub mod quadrature;
pub mod sparse;
pub mod stencil;
pub mod surrogate;

pub use error::{Error, Result};
