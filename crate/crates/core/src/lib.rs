//! Reconstruction of detailed facial meshes from per-pixel depth and
//! correspondence maps.

pub mod align;
pub mod correspondence;
pub mod evaluation;
pub mod fixtures;
pub mod geom;
pub mod io;
pub mod lifting;
pub mod maps;
pub mod nonrigid;
pub mod refine;

pub use align::{AffineTransform, RansacConfig};
pub use correspondence::{CorrespondenceSet, MatchSpace};
pub use geom::{SparseOperator, TemplateMesh, TriangleMesh};
pub use lifting::{lift_maps_to_mesh, TargetMesh};
pub use maps::MapStack;
pub use nonrigid::{register, RegistrationConfig};
