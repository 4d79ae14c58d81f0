//! Indexed triangle meshes and per-vertex canonical embeddings.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::GeomError;

/// Triangle mesh with vertex positions in millimetres.
///
/// Construction validates the index and finiteness invariants, so every
/// `TriangleMesh` in circulation has in-range, non-repeating face indices and
/// finite coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeomError> {
        for (index, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(GeomError::NonFiniteVertex { index });
            }
        }
        let n = vertices.len();
        for (face, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= n) {
                return Err(GeomError::IndexOutOfRange { face, index, vertex_count: n });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeomError::RepeatedIndex { face });
            }
        }
        Ok(Self { vertices, faces })
    }

    /// Same triangulation, new positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self, GeomError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeomError::LengthMismatch {
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        if let Some(index) = vertices
            .iter()
            .position(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(GeomError::NonFiniteVertex { index });
        }
        Ok(Self { vertices, faces: self.faces.clone() })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn into_parts(self) -> (Vec<Point3<f64>>, Vec<[usize; 3]>) {
        (self.vertices, self.faces)
    }

    /// `(p1 - p0) x (p2 - p0)`: twice the area times the unit face normal.
    pub fn face_cross(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[face];
        let p0 = self.vertices[a];
        (self.vertices[b] - p0).cross(&(self.vertices[c] - p0))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Sorted 1-ring neighbour lists.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut rings = vec![Vec::new(); self.vertices.len()];
        for (i, j) in self.edges() {
            rings[i].push(j);
            rings[j].push(i);
        }
        for ring in &mut rings {
            ring.sort_unstable();
        }
        rings
    }

    /// Flags vertices that sit on an edge used by exactly one face.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut uses: HashMap<(usize, usize), u32> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *uses.entry(if a < b { (a, b) } else { (b, a) }).or_default() += 1;
            }
        }
        let mut boundary = vec![false; self.vertices.len()];
        for ((a, b), count) in uses {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        boundary
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }
}

/// A mesh whose vertices carry canonical-face coordinates in `[-1, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub mesh: TriangleMesh,
    embedding: Vec<Vector3<f64>>,
}

/// Slack allowed on the `[-1, 1]` embedding range for rounding.
const EMBEDDING_SLACK: f64 = 1e-9;

impl TemplateMesh {
    pub fn new(mesh: TriangleMesh, embedding: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if embedding.len() != mesh.vertex_count() {
            return Err(GeomError::LengthMismatch {
                expected: mesh.vertex_count(),
                actual: embedding.len(),
            });
        }
        for (index, e) in embedding.iter().enumerate() {
            if e.iter().any(|c| !c.is_finite() || c.abs() > 1.0 + EMBEDDING_SLACK) {
                return Err(GeomError::EmbeddingOutOfRange { index });
            }
        }
        Ok(Self { mesh, embedding })
    }

    /// Rescales an arbitrary embedding uniformly so its bounding box is
    /// centred at the origin and its largest half-extent is 1.
    pub fn with_normalized_embedding(
        mesh: TriangleMesh,
        raw: Vec<Vector3<f64>>,
    ) -> Result<Self, GeomError> {
        if raw.is_empty() {
            return Self::new(mesh, raw);
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for e in &raw {
            lo = lo.inf(e);
            hi = hi.sup(e);
        }
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo) * 0.5).max();
        let scale = if half > 0.0 { 1.0 / half } else { 1.0 };
        let embedding = raw.iter().map(|e| (e - center) * scale).collect();
        Self::new(mesh, embedding)
    }

    pub fn embedding(&self) -> &[Vector3<f64>] {
        &self.embedding
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }
}

/// Area-weighted vertex normals.
///
/// Each face adds its unnormalised cross product to its three corners, in face
/// order, and the sums are normalised. Vertices with no non-degenerate
/// incident face get the zero vector, which callers treat as "no normal".
pub fn vertex_normals(mesh: &TriangleMesh) -> Vec<Vector3<f64>> {
    let mut sums = vec![Vector3::zeros(); mesh.vertex_count()];
    for (fi, f) in mesh.faces().iter().enumerate() {
        let cross = mesh.face_cross(fi);
        for &v in f {
            sums[v] += cross;
        }
    }
    sums.into_iter()
        .map(|s| {
            let norm = s.norm();
            if norm > 0.0 && norm.is_finite() {
                s / norm
            } else {
                Vector3::zeros()
            }
        })
        .collect()
}

/// Splits every triangle 4-way `levels` times, placing new vertices at edge
/// midpoints. Original vertices keep their index and position.
pub fn subdivide_midpoint(mesh: &TriangleMesh, levels: usize) -> Result<TriangleMesh, GeomError> {
    subdivide_midpoint_with(mesh, &[], levels).map(|(m, _)| m)
}

/// [`subdivide_midpoint`] that also interpolates a per-vertex vector attribute
/// linearly along each split edge.
pub fn subdivide_midpoint_with(
    mesh: &TriangleMesh,
    attribute: &[Vector3<f64>],
    levels: usize,
) -> Result<(TriangleMesh, Vec<Vector3<f64>>), GeomError> {
    if levels > MAX_SUBDIVISION_LEVELS {
        return Err(GeomError::SubdivisionLevels(levels));
    }
    if !attribute.is_empty() && attribute.len() != mesh.vertex_count() {
        return Err(GeomError::LengthMismatch {
            expected: mesh.vertex_count(),
            actual: attribute.len(),
        });
    }
    let mut vertices = mesh.vertices().to_vec();
    let mut faces = mesh.faces().to_vec();
    let mut attr = attribute.to_vec();
    for _ in 0..levels {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>, attr: &mut Vec<Vector3<f64>>| {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(nalgebra::center(&vertices[a], &vertices[b]));
                if !attr.is_empty() {
                    attr.push((attr[a] + attr[b]) * 0.5);
                }
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices, &mut attr);
            let bc = mid(b, c, &mut vertices, &mut attr);
            let ca = mid(c, a, &mut vertices, &mut attr);
            next_faces.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        faces = next_faces;
    }
    Ok((TriangleMesh::new(vertices, faces)?, attr))
}

pub const MAX_SUBDIVISION_LEVELS: usize = 3;

/// Subdivides a template, carrying the embedding along.
pub fn subdivide_template(template: &TemplateMesh, levels: usize) -> Result<TemplateMesh, GeomError> {
    let (mesh, embedding) = subdivide_midpoint_with(&template.mesh, template.embedding(), levels)?;
    TemplateMesh::new(mesh, embedding)
}

/// Icosahedron inscribed in the sphere of the given radius, refined
/// `subdivisions` times with vertices pushed back onto the sphere. Faces are
/// wound counter-clockwise seen from outside. Level 4 has 2562 vertices.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|p| Point3::from(Vector3::new(p[0], p[1], p[2]).normalize()))
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let mut mid = |x: usize, y: usize| {
                let key = if x < y { (x, y) } else { (y, x) };
                *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[x].coords + vertices[y].coords).normalize();
                    vertices.push(Point3::from(m));
                    vertices.len() - 1
                })
            };
            let ab = mid(a, b);
            let bc = mid(b, c);
            let ca = mid(c, a);
            next.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = Point3::from(v.coords * radius);
    }
    TriangleMesh::new(vertices, faces).expect("icosphere construction is valid")
}

/// Regular `nx` x `ny` vertex grid in the z = 0 plane with spacing `h`,
/// triangulated along one diagonal, counter-clockwise seen from +z.
pub fn grid_mesh(nx: usize, ny: usize, h: f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("grid construction is valid")
}
