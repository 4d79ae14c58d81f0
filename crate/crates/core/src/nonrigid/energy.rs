use nalgebra::{Matrix3, Point3, Vector3};

use super::{NonrigidError, RegistrationConfig};
use crate::correspondence::CorrespondenceSet;
use crate::geom::{CholeskyPattern, SparseOperator};
use crate::lifting::TargetMesh;

/// The quadratic registration energy around a fixed rest configuration:
///
/// `a_point Σ |v_i - c_i|² + a_plane Σ (n_c · (v_i - c_i))²
///  + a_memb s Σ_i Σ_{j ∈ N(i)} w_ij |(v_i - r_i) - (v_j - r_j)|²`
///
/// over the active pairs, with target normals frozen. The membrane acts on
/// displacements from `rest`, so a rigid translation costs nothing and the
/// rest shape itself is stress-free.
#[derive(Debug)]
pub struct DeformationModel<'a> {
    rest: &'a [Point3<f64>],
    target: &'a TargetMesh,
    target_normals: &'a [Vector3<f64>],
    weights: &'a SparseOperator,
    cfg: &'a RegistrationConfig,
    pattern: CholeskyPattern,
}

impl<'a> DeformationModel<'a> {
    pub fn new(
        rest: &'a [Point3<f64>],
        target: &'a TargetMesh,
        target_normals: &'a [Vector3<f64>],
        weights: &'a SparseOperator,
        cfg: &'a RegistrationConfig,
    ) -> Result<Self, NonrigidError> {
        if weights.dim() != rest.len() {
            return Err(NonrigidError::LengthMismatch { expected: rest.len(), actual: weights.dim() });
        }
        if target_normals.len() != target.vertex_count() {
            return Err(NonrigidError::LengthMismatch { expected: target.vertex_count(), actual: target_normals.len() });
        }
        // Pattern from an all-zero assembly: every vertex block plus edges.
        let probe = assemble(rest.len(), weights, 1.0, &vec![None; rest.len()]);
        let pattern = CholeskyPattern::analyze(&probe)?;
        Ok(Self { rest, target, target_normals, weights, cfg, pattern })
    }

    pub fn vertex_count(&self) -> usize {
        self.rest.len()
    }

    fn data_block(&self, target_index: usize) -> Matrix3<f64> {
        let n = self.target_normals[target_index];
        Matrix3::identity() * self.cfg.alpha_p2point + n * n.transpose() * self.cfg.alpha_p2plane
    }

    /// Per-vertex data block for the active pairs.
    fn blocks(&self, pairs: &CorrespondenceSet) -> Vec<Option<(Matrix3<f64>, usize)>> {
        let mut blocks = vec![None; self.rest.len()];
        for (i, j) in pairs.active_pairs() {
            blocks[i] = Some((self.data_block(j), j));
        }
        blocks
    }

    pub fn energy(&self, positions: &[Point3<f64>], pairs: &CorrespondenceSet, alpha_memb: f64) -> Result<f64, NonrigidError> {
        if positions.len() != self.rest.len() {
            return Err(NonrigidError::LengthMismatch { expected: self.rest.len(), actual: positions.len() });
        }
        if pairs.active_count() == 0 {
            return Err(NonrigidError::EmptyPairSet);
        }
        let c = self.target.mesh.vertices();
        let mut data = 0.0;
        for (i, j) in pairs.active_pairs() {
            let d = positions[i] - c[j];
            let n = self.target_normals[j];
            data += self.cfg.alpha_p2point * d.norm_squared() + self.cfg.alpha_p2plane * n.dot(&d).powi(2);
        }
        let mut memb = 0.0;
        for (i, j, w) in self.weights.triplets() {
            if i != j {
                let du = (positions[i] - self.rest[i]) - (positions[j] - self.rest[j]);
                memb += w * du.norm_squared();
            }
        }
        Ok(data + alpha_memb * self.cfg.membrane_scale * memb)
    }

    /// Exact minimiser of the energy for the given active pairs: one sparse
    /// SPD solve of dimension `3N` in the displacement `u = V - R`,
    /// `(2 a s G ⊗ I + blockdiag(M_i)) u = Σ M_i (c_i - r_i)` with `G` the
    /// weighted graph Laplacian and `M_i = a_point I + a_plane n nᵀ`.
    pub fn solve(&self, pairs: &CorrespondenceSet, alpha_memb: f64) -> Result<Vec<Point3<f64>>, NonrigidError> {
        if pairs.active_count() == 0 {
            return Err(NonrigidError::EmptyPairSet);
        }
        let n = self.rest.len();
        let blocks = self.blocks(pairs);
        let data_blocks: Vec<Option<Matrix3<f64>>> = blocks.iter().map(|b| b.map(|(m, _)| m)).collect();
        let op = assemble(n, self.weights, 2.0 * alpha_memb * self.cfg.membrane_scale, &data_blocks);
        let c = self.target.mesh.vertices();
        let mut rhs = vec![0.0; 3 * n];
        for (i, b) in blocks.iter().enumerate() {
            if let Some((m, j)) = b {
                let r = m * (c[*j] - self.rest[i]);
                rhs[3 * i..3 * i + 3].copy_from_slice(r.as_slice());
            }
        }
        let factor = self.pattern.factor(&op)?;
        let u = factor.solve_refined(&op, &rhs)?;
        Ok((0..n)
            .map(|i| self.rest[i] + Vector3::new(u[3 * i], u[3 * i + 1], u[3 * i + 2]))
            .collect())
    }
}

/// Assembles the `3N` system matrix. The triplet sequence (and hence the
/// sparsity pattern) depends only on the mesh, never on the active set.
pub(crate) fn assemble(n: usize, weights: &SparseOperator, k: f64, blocks: &[Option<Matrix3<f64>>]) -> SparseOperator {
    let degree = weights.row_sums();
    let mut trip = Vec::with_capacity(9 * n + 3 * weights.nnz());
    for i in 0..n {
        let m = blocks[i].unwrap_or_else(Matrix3::zeros);
        for a in 0..3 {
            for b in 0..3 {
                let mut v = m[(a, b)];
                if a == b {
                    v += k * degree[i];
                }
                trip.push((3 * i + a, 3 * i + b, v));
            }
        }
    }
    for (i, j, w) in weights.triplets() {
        if i != j {
            for d in 0..3 {
                trip.push((3 * i + d, 3 * j + d, -k * w));
            }
        }
    }
    SparseOperator::from_triplets(3 * n, &trip, true)
}
