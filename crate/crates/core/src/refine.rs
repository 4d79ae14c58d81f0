//! Mesoscopic detail: intensity high-pass filtering and normal displacements.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    cotangent_laplacian, mixed_vertex_areas, solve_spd_vec, subdivide_midpoint, vertex_normals, GeomError, SolveError,
    TriangleMesh,
};
use crate::maps::MapStack;

/// Search radius (pixels) for the nearest valid pixel.
pub const SAMPLE_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("the map stack has no valid pixel to sample")]
    NoValidPixels,
    #[error("vertices {a} and {b} coincide")]
    ZeroLengthEdge { a: usize, b: usize },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid refine configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Heat diffusion time of the low-pass filter.
    pub dt: f64,
    /// Blend between the data-driven and the fairing displacement.
    pub eta: f64,
    /// Scale applied to the data-driven displacement (mm per intensity unit).
    pub gain: f64,
    /// Step of the explicit mean-curvature fairing (mm²).
    pub fairing_step: f64,
    pub subdivision_levels: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { dt: 0.2, eta: 0.2, gain: 1.0, fairing_step: 0.5, subdivision_levels: 1 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(RefineError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(RefineError::InvalidConfig(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !self.gain.is_finite() || !(self.fairing_step >= 0.0 && self.fairing_step.is_finite()) {
            return Err(RefineError::InvalidConfig("gain must be finite and fairing_step >= 0".into()));
        }
        if self.subdivision_levels > 3 {
            return Err(RefineError::InvalidConfig("subdivision_levels must be at most 3".into()));
        }
        Ok(())
    }
}

/// Per-vertex intensity and its high-pass part.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexTexture {
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    /// Vertices with no valid pixel in reach; their `tau` is a local mean.
    pub fallback: Vec<bool>,
}

/// Image position `(col, row)` of a camera-frame point under the stack's
/// orthographic camera.
pub fn project(stack: &MapStack, p: &Point3<f64>) -> (f64, f64) {
    let s = stack.meta().camera_scale;
    let [cx, cy] = stack.meta().principal_point();
    (p.x / s + cx, cy - p.y / s)
}

fn nearest_valid_pixel(stack: &MapStack, col: f64, row: f64) -> Option<(usize, usize)> {
    if !(col.is_finite() && row.is_finite()) {
        return None;
    }
    let (w, h) = (stack.width() as i64, stack.height() as i64);
    let r = SAMPLE_RADIUS as i64;
    let (c0, r0) = (col.round() as i64, row.round() as i64);
    let mut best: Option<(f64, usize, usize)> = None;
    for rr in (r0 - r - 1).max(0)..=(r0 + r + 1).min(h - 1) {
        for cc in (c0 - r - 1).max(0)..=(c0 + r + 1).min(w - 1) {
            let (ru, cu) = (rr as usize, cc as usize);
            if !stack.is_valid(ru, cu) {
                continue;
            }
            let d2 = (cc as f64 - col).powi(2) + (rr as f64 - row).powi(2);
            if d2 > SAMPLE_RADIUS * SAMPLE_RADIUS {
                continue;
            }
            // Row-major scan order settles ties.
            if best.is_none_or(|(b, _, _)| d2 < b) {
                best = Some((d2, ru, cu));
            }
        }
    }
    best.map(|(_, r, c)| (r, c))
}

/// Intensity of the nearest valid pixel to each vertex's projection. Vertices
/// with nothing valid within [`SAMPLE_RADIUS`] pixels take the mean of their
/// sampled neighbours (spreading ring by ring), or the global mean of all
/// sampled vertices when their component has none.
pub fn sample_intensity(mesh: &TriangleMesh, stack: &MapStack) -> Result<VertexTexture, RefineError> {
    if stack.valid_count() == 0 {
        return Err(RefineError::NoValidPixels);
    }
    let sampled: Vec<Option<f64>> = mesh
        .vertices()
        .par_iter()
        .map(|p| {
            let (col, row) = project(stack, p);
            nearest_valid_pixel(stack, col, row).map(|(r, c)| stack.intensity.get(r, c, 0))
        })
        .collect();
    let fallback: Vec<bool> = sampled.iter().map(Option::is_none).collect();
    let known: Vec<f64> = sampled.iter().flatten().copied().collect();
    if known.is_empty() {
        return Err(RefineError::NoValidPixels);
    }
    let global = known.iter().sum::<f64>() / known.len() as f64;

    let neighbors = mesh.vertex_neighbors();
    let mut tau = sampled;
    loop {
        let next: Vec<Option<f64>> = (0..tau.len())
            .map(|i| {
                tau[i].or_else(|| {
                    let vals: Vec<f64> = neighbors[i].iter().filter_map(|&j| tau[j]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
            })
            .collect();
        let progressed = next.iter().zip(&tau).any(|(a, b)| a.is_some() && b.is_none());
        tau = next;
        if !progressed {
            break;
        }
    }
    let tau = tau.into_iter().map(|t| t.unwrap_or(global)).collect();
    Ok(VertexTexture { tau, mu: Vec::new(), fallback })
}

/// High frequencies of `tau`: `tau - (I - dt L)⁻¹ tau` with `L` the
/// cotangent Laplacian.
pub fn highpass_texture(mesh: &TriangleMesh, tau: &[f64], cfg: &RefineConfig) -> Result<Vec<f64>, RefineError> {
    if tau.len() != mesh.vertex_count() {
        return Err(RefineError::LengthMismatch { expected: mesh.vertex_count(), actual: tau.len() });
    }
    let heat = cotangent_laplacian(mesh)?.shifted(1.0, -cfg.dt);
    let low = solve_spd_vec(&heat, tau)?;
    Ok(tau.iter().zip(&low).map(|(t, l)| t - l).collect())
}

/// Data-driven displacement: for each vertex the `exp(-|v - vᵢ|)`-weighted
/// mean over its 1-ring of `(μ(v) - μ(vᵢ))`, each term attenuated by
/// `1 - |⟨v - vᵢ, n(v)⟩| / |v - vᵢ|`, times `gain`. Isolated vertices get 0.
pub fn data_driven_displacement(mesh: &TriangleMesh, mu: &[f64], cfg: &RefineConfig) -> Result<Vec<f64>, RefineError> {
    if mu.len() != mesh.vertex_count() {
        return Err(RefineError::LengthMismatch { expected: mesh.vertex_count(), actual: mu.len() });
    }
    let v = mesh.vertices();
    let normals = vertex_normals(mesh);
    let neighbors = mesh.vertex_neighbors();
    (0..v.len())
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for &j in &neighbors[i] {
                let d = v[i] - v[j];
                let len = d.norm();
                if len == 0.0 {
                    return Err(RefineError::ZeroLengthEdge { a: i.min(j), b: i.max(j) });
                }
                let alpha = (-len).exp();
                num += alpha * (mu[i] - mu[j]) * (1.0 - d.dot(&normals[i]).abs() / len);
                den += alpha;
            }
            Ok(if den > 0.0 { cfg.gain * num / den } else { 0.0 })
        })
        .collect()
}

/// One explicit mean-curvature flow step projected on the vertex normal:
/// `fairing_step * ⟨(L v) / A, n⟩` with mixed Voronoi areas `A`. Negative
/// values point inward on convex regions.
pub fn fairing_displacement(mesh: &TriangleMesh, cfg: &RefineConfig) -> Result<Vec<f64>, RefineError> {
    let lap = cotangent_laplacian(mesh)?;
    let areas = mixed_vertex_areas(mesh);
    let normals = vertex_normals(mesh);
    let coord = |k: usize| lap.apply(&mesh.vertices().iter().map(|p| p[k]).collect::<Vec<_>>());
    let (lx, ly, lz) = (coord(0), coord(1), coord(2));
    Ok((0..mesh.vertex_count())
        .map(|i| {
            if areas[i] <= 0.0 {
                return 0.0;
            }
            let hn = Vector3::new(lx[i], ly[i], lz[i]) / areas[i];
            cfg.fairing_step * hn.dot(&normals[i])
        })
        .collect())
}

/// Moves each vertex along its normal by `eta δμ + (1 - eta) δs`.
pub fn apply_detail_displacement(
    mesh: &TriangleMesh,
    delta_mu: &[f64],
    delta_s: &[f64],
    cfg: &RefineConfig,
) -> Result<TriangleMesh, RefineError> {
    let n = mesh.vertex_count();
    for len in [delta_mu.len(), delta_s.len()] {
        if len != n {
            return Err(RefineError::LengthMismatch { expected: n, actual: len });
        }
    }
    let normals = vertex_normals(mesh);
    let moved = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| p + normals[i] * (cfg.eta * delta_mu[i] + (1.0 - cfg.eta) * delta_s[i]))
        .collect();
    Ok(mesh.with_vertices(moved)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub mesh: TriangleMesh,
    /// Texture on the subdivided mesh, before displacement.
    pub texture: VertexTexture,
}

/// Subdivides, samples the intensity, high-passes it and displaces the
/// vertices along their normals.
pub fn refine_mesh(deformed: &TriangleMesh, stack: &MapStack, cfg: &RefineConfig) -> Result<Refinement, RefineError> {
    cfg.validate()?;
    let fine = subdivide_midpoint(deformed, cfg.subdivision_levels)?;
    let mut texture = sample_intensity(&fine, stack)?;
    texture.mu = highpass_texture(&fine, &texture.tau, cfg)?;
    let delta_mu = data_driven_displacement(&fine, &texture.mu, cfg)?;
    let delta_s = fairing_displacement(&fine, cfg)?;
    let mesh = apply_detail_displacement(&fine, &delta_mu, &delta_s, cfg)?;
    Ok(Refinement { mesh, texture })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{grid_mesh, icosphere};
    use crate::maps::{MapMeta, Raster};

    fn flat_stack(w: usize, h: usize, intensity: impl Fn(usize, usize) -> f64) -> MapStack {
        let mut img = Raster::filled(w, h, 1, 0.0);
        for r in 0..h {
            for c in 0..w {
                img.set(r, c, 0, intensity(r, c));
            }
        }
        let meta = MapMeta::canonical(w, h, 1.0);
        let [cx, cy] = meta.principal_point();
        let xyz = (0..w * h).flat_map(|i| [(i % w) as f64 - cx, cy - (i / w) as f64, 0.0]).collect();
        MapStack::new(
            img,
            Raster::filled(w, h, 1, 0.0),
            Raster::new(w, h, 3, xyz),
            Raster::filled(w, h, 3, 0.0),
            None,
            meta,
        )
        .unwrap()
    }

    #[test]
    fn vertex_on_pixel_centre_reads_that_pixel() {
        let stack = flat_stack(10, 10, |r, c| (r * 10 + c) as f64 / 100.0);
        let [cx, cy] = stack.meta().principal_point();
        let (r, c) = (3, 7);
        let p = Point3::new(c as f64 - cx, cy - r as f64, 0.0);
        let mesh = TriangleMesh::new(vec![p, p + Vector3::x(), p + Vector3::y()], vec![[0, 1, 2]]).unwrap();
        let tex = sample_intensity(&mesh, &stack).unwrap();
        assert_eq!(tex.tau[0], 0.37);
        assert!(tex.fallback.iter().all(|&f| !f));
    }

    #[test]
    fn far_vertices_fall_back_to_neighbours() {
        let stack = flat_stack(10, 10, |_, _| 0.25);
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(100.0, 0.0, 0.0), Point3::new(100.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let tex = sample_intensity(&mesh, &stack).unwrap();
        assert_eq!(tex.fallback, vec![false, true, true]);
        assert_eq!(tex.tau, vec![0.25; 3]);
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let meta = MapMeta::canonical(4, 4, 1.0);
        let nan = |c| Raster::filled(4, 4, c, f64::NAN);
        let stack = MapStack::new(Raster::filled(4, 4, 1, 0.0), nan(1), nan(3), nan(3), None, meta).unwrap();
        let mesh = grid_mesh(2, 2, 1.0);
        assert_eq!(sample_intensity(&mesh, &stack), Err(RefineError::NoValidPixels));
    }

    #[test]
    fn constant_texture_has_no_high_frequencies() {
        let mesh = icosphere(10.0, 2);
        let mu = highpass_texture(&mesh, &vec![0.6; mesh.vertex_count()], &RefineConfig::default()).unwrap();
        assert!(mu.iter().all(|m| m.abs() < 1e-10));
        let d = data_driven_displacement(&mesh, &vec![0.3; mesh.vertex_count()], &RefineConfig::default()).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tiny_heat_time_passes_nothing() {
        let mesh = icosphere(10.0, 2);
        let tau: Vec<f64> = mesh.vertices().iter().map(|p| (p.x * 0.3).sin()).collect();
        let cfg = RefineConfig { dt: 1e-12, ..Default::default() };
        assert!(highpass_texture(&mesh, &tau, &cfg).unwrap().iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn tangent_neighbour_hand_value() {
        // Vertex 0 has vertex 1 at distance 1 in its tangent plane.
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cfg = RefineConfig { gain: 2.5, ..Default::default() };
        let d = data_driven_displacement(&mesh, &[0.1, 0.0, 0.1], &cfg).unwrap();
        let (a1, a2) = ((-1.0f64).exp(), (-1.0f64).exp());
        assert!((d[0] - 2.5 * a1 * 0.1 / (a1 + a2)).abs() < 1e-15);
        let pair = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(5.0, 5.0, 0.0), Point3::new(9.0, 5.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let d = data_driven_displacement(&pair, &[0.1, 0.0, 0.0, 7.0], &RefineConfig { gain: 1.0, ..Default::default() });
        assert_eq!(d.unwrap()[3], 0.0);
    }

    #[test]
    fn coincident_vertices_are_rejected() {
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::origin(), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let err = data_driven_displacement(&mesh, &[0.0; 3], &RefineConfig::default()).unwrap_err();
        assert_eq!(err, RefineError::ZeroLengthEdge { a: 0, b: 1 });
    }

    #[test]
    fn fairing_is_zero_on_a_plane_and_inward_on_a_sphere() {
        let plane = grid_mesh(6, 6, 1.5);
        assert!(fairing_displacement(&plane, &RefineConfig::default()).unwrap().iter().all(|d| d.abs() < 1e-9));
        let sphere = icosphere(10.0, 4);
        let cfg = RefineConfig::default();
        for d in fairing_displacement(&sphere, &cfg).unwrap() {
            let curvature = d / cfg.fairing_step;
            assert!(curvature < 0.0 && (curvature.abs() - 0.2).abs() < 0.02, "{curvature}");
        }
        let off = RefineConfig { fairing_step: 0.0, ..Default::default() };
        assert!(fairing_displacement(&sphere, &off).unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn zero_displacement_is_identity() {
        let mesh = icosphere(5.0, 1);
        let zero = vec![0.0; mesh.vertex_count()];
        let out = apply_detail_displacement(&mesh, &zero, &zero, &RefineConfig::default()).unwrap();
        assert_eq!(out, mesh);
    }

    #[test]
    fn trivial_refine_is_identity() {
        let stack = flat_stack(16, 16, |r, c| ((r + c) % 2) as f64);
        let mesh = grid_mesh(5, 5, 1.0).with_vertices(
            grid_mesh(5, 5, 1.0).vertices().iter().map(|p| p - Vector3::new(2.0, 2.0, 0.0)).collect(),
        );
        let mesh = mesh.unwrap();
        let cfg = RefineConfig { subdivision_levels: 0, eta: 0.0, fairing_step: 0.0, ..Default::default() };
        assert_eq!(refine_mesh(&mesh, &stack, &cfg).unwrap().mesh, mesh);
    }
}
