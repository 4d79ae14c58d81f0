//! Triangulation of the per-pixel xyz map into a target mesh.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geom::TriangleMesh;
use crate::maps::MapStack;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LiftError {
    #[error("only {valid} valid pixels; at least 3 are needed to build a face")]
    EmptyFace { valid: usize },
}

/// Lifted target surface with the pixel each vertex came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMesh {
    pub mesh: TriangleMesh,
    /// `(row, col)` per vertex.
    pub pixel_of_vertex: Vec<(usize, usize)>,
    /// Correspondence-map value per vertex.
    pub embedding: Vec<Vector3<f64>>,
}

impl TargetMesh {
    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }
}

/// One vertex per valid pixel (row-major order) at its xyz value. Every 2x2
/// quad of valid pixels becomes two triangles split along the top-left to
/// bottom-right diagonal, wound counter-clockwise as seen from the camera.
pub fn lift_maps_to_mesh(stack: &MapStack) -> Result<TargetMesh, LiftError> {
    let (w, h) = (stack.width(), stack.height());
    let valid = stack.valid_count();
    if valid < 3 {
        return Err(LiftError::EmptyFace { valid });
    }
    let mut index = vec![usize::MAX; w * h];
    let mut vertices = Vec::with_capacity(valid);
    let mut pixel_of_vertex = Vec::with_capacity(valid);
    let mut embedding = Vec::with_capacity(valid);
    for row in 0..h {
        for col in 0..w {
            if !stack.is_valid(row, col) {
                continue;
            }
            index[row * w + col] = vertices.len();
            let p = stack.xyz.pixel(row, col);
            vertices.push(Point3::new(p[0], p[1], p[2]));
            let e = stack.correspondence.pixel(row, col);
            embedding.push(Vector3::new(e[0], e[1], e[2]));
            pixel_of_vertex.push((row, col));
        }
    }
    let mut faces = Vec::new();
    for row in 0..h.saturating_sub(1) {
        for col in 0..w.saturating_sub(1) {
            let tl = index[row * w + col];
            let tr = index[row * w + col + 1];
            let bl = index[(row + 1) * w + col];
            let br = index[(row + 1) * w + col + 1];
            if [tl, tr, bl, br].contains(&usize::MAX) {
                continue;
            }
            faces.push([tl, bl, br]);
            faces.push([tl, br, tr]);
        }
    }
    let mesh = TriangleMesh::new(vertices, faces).expect("lifted indices are in range and xyz is finite");
    Ok(TargetMesh { mesh, pixel_of_vertex, embedding })
}
