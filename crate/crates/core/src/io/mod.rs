//! PLY and OBJ mesh files.

mod obj;
mod ply;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geom::{GeomError, TemplateMesh, TriangleMesh};
use crate::lifting::TargetMesh;

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid mesh data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// A mesh plus the optional per-vertex attributes carried by PLY files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshData {
    pub mesh: TriangleMesh,
    /// `ex, ey, ez`
    pub embedding: Option<Vec<Vector3<f64>>>,
    /// `row, col`
    pub pixels: Option<Vec<(usize, usize)>>,
    /// Any other per-vertex scalar, by property name.
    pub scalars: BTreeMap<String, Vec<f64>>,
}

impl MeshData {
    pub fn from_mesh(mesh: TriangleMesh) -> Self {
        Self { mesh, ..Default::default() }
    }

    pub fn from_template(template: &TemplateMesh) -> Self {
        Self { embedding: Some(template.embedding().to_vec()), ..Self::from_mesh(template.mesh.clone()) }
    }

    pub fn from_target(target: &TargetMesh) -> Self {
        Self {
            mesh: target.mesh.clone(),
            embedding: Some(target.embedding.clone()),
            pixels: Some(target.pixel_of_vertex.clone()),
            scalars: BTreeMap::new(),
        }
    }

    pub fn with_scalar(mut self, name: &str, values: Vec<f64>) -> Self {
        self.scalars.insert(name.to_string(), values);
        self
    }

    /// Template view; fails when the file carried no embedding.
    pub fn into_template(self) -> Result<TemplateMesh, MeshIoError> {
        let embedding = self
            .embedding
            .ok_or_else(|| MeshIoError::Invalid("template PLY needs ex, ey, ez vertex properties".into()))?;
        Ok(TemplateMesh::new(self.mesh, embedding)?)
    }
}

fn is_obj(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("obj"))
}

/// Reads `.ply` (any encoding) or `.obj` by extension.
pub fn read_mesh(path: &Path) -> Result<MeshData, MeshIoError> {
    let reader = BufReader::new(File::open(path)?);
    if is_obj(path) {
        Ok(MeshData::from_mesh(obj::read_obj(reader)?))
    } else {
        ply::read_ply(reader)
    }
}

/// Writes binary little-endian `.ply`, or `.obj` (geometry only) by extension.
pub fn write_mesh(path: &Path, data: &MeshData) -> Result<(), MeshIoError> {
    let writer = BufWriter::new(File::create(path)?);
    if is_obj(path) {
        obj::write_obj(writer, &data.mesh)
    } else {
        ply::write_ply(writer, data)
    }
}

pub fn read_template(path: &Path) -> Result<TemplateMesh, MeshIoError> {
    read_mesh(path)?.into_template()
}
