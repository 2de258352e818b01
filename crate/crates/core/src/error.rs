use thiserror::Error;

use crate::mesh::Point;

/// Errors raised by mesh construction, operator application and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("triangle {triangle} references vertex {vertex}, but the mesh has {num_vertices} vertices")]
    InvalidVertexIndex {
        triangle: usize,
        vertex: usize,
        num_vertices: usize,
    },

    #[error("triangle {triangle} is degenerate (zero area)")]
    DegenerateTriangle { triangle: usize },

    #[error("triangle {triangle} is a sliver (aspect ratio {aspect_ratio:.3e} exceeds {limit:.0e})")]
    SliverTriangle {
        triangle: usize,
        aspect_ratio: f64,
        limit: f64,
    },

    #[error("non-conforming mesh: {0}")]
    NonConforming(String),

    #[error("mesh file line {line}: {message}")]
    MeshParse { line: usize, message: String },

    #[error("lattice index ({i}, {j}) out of range for level {level}")]
    LatticeIndex { level: u32, i: usize, j: usize },

    #[error("lattice point ({i}, {j}) at level {level} is not macro-interior")]
    NotInterior { level: u32, i: usize, j: usize },

    #[error("interface alias mismatch at {a:?} vs {b:?} (distance {distance:.3e})")]
    AliasMismatch { a: Point, b: Point, distance: f64 },

    #[error("singular domain-map Jacobian at ({}, {})", point[0], point[1])]
    SingularJacobian { point: Point },

    #[error("coefficient is not positive definite at ({}, {}): smallest eigenvalue {lambda_min:.3e}", point[0], point[1])]
    NotPositiveDefinite { point: Point, lambda_min: f64 },

    #[error("least-squares system is underdetermined: {samples} samples for {unknowns} coefficients")]
    Underdetermined { samples: usize, unknowns: usize },

    #[error("least-squares basis is numerically rank deficient (rank {rank} of {unknowns}, condition estimate {condition:.3e})")]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        condition: f64,
    },

    #[error("level mismatch: expected level {expected}, got {found}")]
    LevelMismatch { expected: u32, found: u32 },

    #[error("grid function must be synchronized before use")]
    Unsynchronized,

    #[error("level {level} exceeds the assembly cap {cap}")]
    AssemblyCap { level: u32, cap: u32 },

    #[error("zero diagonal entry in macro-element {triangle} at lattice point ({i}, {j})")]
    ZeroDiagonal { triangle: usize, i: usize, j: usize },

    #[error("coarse solver failed: {0}")]
    CoarseSolve(String),

    #[error("dense matrix dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mesh sizes must be strictly decreasing")]
    NonMonotoneSizes,

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("Picard iteration did not converge in time step {step} after {iterations} iterations (last increment {increment:.3e})")]
    PicardDivergence {
        step: usize,
        iterations: usize,
        increment: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
