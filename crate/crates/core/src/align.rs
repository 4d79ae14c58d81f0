//! Robust affine initialisation from embedding correspondences.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Matrix4, Matrix4x3, Point3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::CorrespondenceSet;
use crate::geom::{GeomError, TemplateMesh};
use crate::lifting::TargetMesh;

/// Minimal sample for a 3-d affine map.
pub const MIN_SAMPLE: usize = 4;

/// Samples whose tetrahedron volume relative to its edge lengths falls below
/// this are treated as coplanar.
const COPLANAR_TOLERANCE: f64 = 1e-6;

const REFIT_DAMPING: f64 = 1e-12;

const MAX_REFITS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("{found} active pairs; at least {MIN_SAMPLE} are needed")]
    TooFewPairs { found: usize },
    #[error("all {iterations} RANSAC samples were degenerate")]
    DegenerateSample { iterations: usize },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
    #[error("transform is singular or non-finite")]
    SingularTransform,
}

/// `x -> linear * x + translation`, serialised as three rows `[a b c t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 3]", into = "[[f64; 4]; 3]")]
pub struct AffineTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self { linear: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear * p.coords + self.translation)
    }

    pub fn is_valid(&self) -> bool {
        self.linear.iter().chain(self.translation.iter()).all(|v| v.is_finite()) && self.linear.determinant().abs() > 1e-9
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = self.linear.try_inverse()?;
        Some(Self { linear: inv, translation: -(inv * self.translation) })
    }

    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        std::array::from_fn(|r| {
            [self.linear[(r, 0)], self.linear[(r, 1)], self.linear[(r, 2)], self.translation[r]]
        })
    }

    /// Positions of the template after the transform; the embedding is kept.
    pub fn apply_to_template(&self, template: &TemplateMesh) -> Result<TemplateMesh, GeomError> {
        let moved = template.mesh.vertices().iter().map(|p| self.apply(p)).collect();
        TemplateMesh::new(template.mesh.with_vertices(moved)?, template.embedding().to_vec())
    }
}

impl From<AffineTransform> for [[f64; 4]; 3] {
    fn from(t: AffineTransform) -> Self {
        t.to_rows()
    }
}

impl TryFrom<[[f64; 4]; 3]> for AffineTransform {
    type Error = AlignError;

    fn try_from(rows: [[f64; 4]; 3]) -> Result<Self, Self::Error> {
        let t = Self {
            linear: Matrix3::from_fn(|r, c| rows[r][c]),
            translation: Vector3::from_fn(|r, _| rows[r][3]),
        };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(AlignError::SingularTransform)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Millimetres.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 1000, inlier_threshold: 3.0, seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.iterations == 0 {
            return Err(AlignError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(AlignError::InvalidConfig("inlier_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: AffineTransform,
    /// Inlier flag per active pair, in the order of [`CorrespondenceSet::active_pairs`].
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Iteration whose sample produced the winning hypothesis.
    pub best_iteration: usize,
}

/// Draws the sample of iteration `iteration`: a ChaCha8 generator seeded
/// from `seed` on stream `iteration`, `MIN_SAMPLE` distinct indices drawn
/// uniformly from `0..n` with duplicates redrawn.
pub fn ransac_sample(seed: u64, iteration: usize, n: usize) -> [usize; MIN_SAMPLE] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let mut out = [0; MIN_SAMPLE];
    let mut k = 0;
    while k < MIN_SAMPLE {
        let candidate = rng.random_range(0..n);
        if !out[..k].contains(&candidate) {
            out[k] = candidate;
            k += 1;
        }
    }
    out
}

/// Exact affine map through four point pairs, `None` when either
/// tetrahedron is flat.
fn minimal_fit(src: &[Point3<f64>; 4], dst: &[Point3<f64>; 4]) -> Option<AffineTransform> {
    let ps = Matrix3::from_columns(&[src[1] - src[0], src[2] - src[0], src[3] - src[0]]);
    let qs = Matrix3::from_columns(&[dst[1] - dst[0], dst[2] - dst[0], dst[3] - dst[0]]);
    if is_flat(&ps) || is_flat(&qs) {
        return None;
    }
    let linear = qs * ps.try_inverse()?;
    let t = AffineTransform { linear, translation: dst[0].coords - linear * src[0].coords };
    t.is_valid().then_some(t)
}

fn is_flat(edges: &Matrix3<f64>) -> bool {
    let scale: f64 = edges.column_iter().map(|c| c.norm()).product();
    !(scale > 0.0) || edges.determinant().abs() <= COPLANAR_TOLERANCE * scale
}

/// Least-squares affine map over point pairs via damped normal equations
/// on homogeneous coordinates.
pub fn fit_affine_lsq<'a>(pairs: impl Iterator<Item = (&'a Point3<f64>, &'a Point3<f64>)>) -> Option<AffineTransform> {
    let mut m = Matrix4::<f64>::zeros();
    let mut rhs = Matrix4x3::<f64>::zeros();
    for (p, q) in pairs {
        let h = Vector4::new(p.x, p.y, p.z, 1.0);
        m += h * h.transpose();
        rhs += h * q.coords.transpose();
    }
    m += Matrix4::identity() * REFIT_DAMPING;
    let x = m.cholesky()?.solve(&rhs);
    let t = AffineTransform {
        linear: x.fixed_view::<3, 3>(0, 0).transpose(),
        translation: x.fixed_view::<1, 3>(3, 0).transpose(),
    };
    t.is_valid().then_some(t)
}

#[derive(Debug, Clone, Copy)]
struct Score {
    count: usize,
    sse: f64,
    iteration: usize,
}

/// Total order: more inliers, then smaller inlier SSE, then earlier iteration.
fn better(a: &Score, b: &Score) -> Ordering {
    b.count
        .cmp(&a.count)
        .then(a.sse.total_cmp(&b.sse))
        .then(a.iteration.cmp(&b.iteration))
}

fn score(t: &AffineTransform, src: &[Point3<f64>], dst: &[Point3<f64>], threshold: f64) -> (usize, f64) {
    let mut count = 0;
    let mut sse = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let r2 = (t.apply(p) - q).norm_squared();
        if r2 <= threshold * threshold {
            count += 1;
            sse += r2;
        }
    }
    (count, sse)
}

/// RANSAC over the active pairs: template position to target position.
/// The consensus set of the best hypothesis is refit by least squares and
/// re-thresholded until it stops changing.
pub fn estimate_affine_ransac(
    pairs: &CorrespondenceSet,
    template: &TemplateMesh,
    target: &TargetMesh,
    cfg: &RansacConfig,
) -> Result<RansacResult, AlignError> {
    cfg.validate()?;
    let tv = template.mesh.vertices();
    let cv = target.mesh.vertices();
    let (src, dst): (Vec<Point3<f64>>, Vec<Point3<f64>>) = pairs.active_pairs().map(|(i, j)| (tv[i], cv[j])).unzip();
    let n = src.len();
    if n < MIN_SAMPLE {
        return Err(AlignError::TooFewPairs { found: n });
    }
    let threshold = cfg.inlier_threshold;

    let best = (0..cfg.iterations)
        .into_par_iter()
        .filter_map(|iteration| {
            let idx = ransac_sample(cfg.seed, iteration, n);
            let model = minimal_fit(&idx.map(|k| src[k]), &idx.map(|k| dst[k]))?;
            let (count, sse) = score(&model, &src, &dst, threshold);
            Some((Score { count, sse, iteration }, model))
        })
        .min_by(|a, b| better(&a.0, &b.0))
        .ok_or(AlignError::DegenerateSample { iterations: cfg.iterations })?;

    let (best_score, mut model) = best;
    let mut inliers = inlier_flags(&model, &src, &dst, threshold);
    for _ in 0..MAX_REFITS {
        let refit = fit_affine_lsq(src.iter().zip(&dst).zip(&inliers).filter(|(_, &f)| f).map(|(pq, _)| (pq.0, pq.1)));
        let Some(refit) = refit else { break };
        let next = inlier_flags(&refit, &src, &dst, threshold);
        if next.iter().filter(|&&f| f).count() < MIN_SAMPLE {
            break;
        }
        model = refit;
        let stable = next == inliers;
        inliers = next;
        if stable {
            break;
        }
    }
    let inlier_count = inliers.iter().filter(|&&f| f).count();
    Ok(RansacResult { transform: model, inliers, inlier_count, best_iteration: best_score.iteration })
}

fn inlier_flags(t: &AffineTransform, src: &[Point3<f64>], dst: &[Point3<f64>], threshold: f64) -> Vec<bool> {
    src.iter().zip(dst).map(|(p, q)| (t.apply(p) - q).norm_squared() <= threshold * threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fit_rejects_coplanar() {
        let flat = [Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(1.0, 1.0, 0.0)];
        let solid = [Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0)];
        assert!(minimal_fit(&flat, &solid).is_none());
        assert!(minimal_fit(&solid, &flat).is_none());
        let t = minimal_fit(&solid, &solid).unwrap();
        assert!((t.linear - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn samples_are_reproducible_and_distinct() {
        for it in 0..50 {
            let s = ransac_sample(42, it, 5);
            assert_eq!(s, ransac_sample(42, it, 5));
            let mut sorted = s;
            sorted.sort();
            assert!(sorted.windows(2).all(|w| w[0] < w[1]));
        }
        assert_ne!(ransac_sample(42, 0, 1000), ransac_sample(42, 1, 1000));
    }

    #[test]
    fn json_is_three_rows() {
        let t = AffineTransform { linear: Matrix3::new(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0), translation: Vector3::new(1.0, 2.0, 3.0) };
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "[[2.0,0.0,0.0,1.0],[0.0,1.0,0.0,2.0],[0.0,0.0,1.0,3.0]]");
        assert_eq!(serde_json::from_str::<AffineTransform>(&json).unwrap(), t);
        assert!(serde_json::from_str::<AffineTransform>("[[0,0,0,0],[0,1,0,0],[0,0,1,0]]").is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let t = AffineTransform { linear: Matrix3::new(1.0, 0.2, 0.0, 0.0, 2.0, 0.1, 0.3, 0.0, 1.5), translation: Vector3::new(-4.0, 2.0, 9.0) };
        let p = Point3::new(1.0, -2.0, 3.0);
        let back = t.inverse().unwrap().apply(&t.apply(&p));
        assert!((back - p).norm() < 1e-12);
    }
}
