//! Mesh types, discrete operators and sparse solves.

pub mod cholesky;
pub mod laplacian;
pub mod mesh;
pub mod sparse;

use thiserror::Error;

pub use cholesky::{solve_spd, solve_spd_vec, CholeskyFactor, CholeskyPattern, SolveError};
pub use laplacian::{barycentric_vertex_areas, mixed_vertex_areas, cotangent_laplacian, membrane_weights, MembraneScheme};
pub use mesh::{
    grid_mesh, icosphere, subdivide_midpoint, subdivide_midpoint_with, subdivide_template, vertex_normals,
    TemplateMesh, TriangleMesh,
};
pub use sparse::SparseOperator;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("vertex {index} has a non-finite coordinate")]
    NonFiniteVertex { index: usize },
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange { face: usize, index: usize, vertex_count: usize },
    #[error("face {face} repeats a vertex index")]
    RepeatedIndex { face: usize },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("embedding of vertex {index} is non-finite or outside [-1, 1]")]
    EmbeddingOutOfRange { index: usize },
    #[error("subdivision levels {0} outside [0, 3]")]
    SubdivisionLevels(usize),
    #[error("face {face} is degenerate (area {area:e} mm²)")]
    DegenerateTriangle { face: usize, area: f64 },
}
