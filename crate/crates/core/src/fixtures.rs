//! Analytic scenes with exact ground truth: a sphere, a paraboloid cap and a
//! plane with embossed intensity stripes, all seen by an orthographic camera
//! looking down -z.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AffineTransform;
use crate::geom::{icosphere, GeomError, TemplateMesh, TriangleMesh};
use crate::io::{write_mesh, MeshData, MeshIoError};
use crate::maps::{save_map_stack, MapError, MapMeta, MapPaths, MapStack, Raster};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Mesh(#[from] MeshIoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Sphere,
    Paraboloid,
    EmbossedPlane,
}

/// Smooth normal displacement centred on the surface point facing the
/// camera: `amplitude * exp(-d² / (2 width²))` with `d` the distance from
/// that point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    /// Millimetres.
    pub amplitude: f64,
    /// Millimetres.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    /// Raster width and height in pixels.
    pub resolution: usize,
    /// Sphere radius; aperture radius of the paraboloid; half side of the plane (mm).
    pub radius: f64,
    /// Paraboloid `z = curvature * (radius² - x² - y²)` (1/mm).
    pub curvature: f64,
    /// Template refinement: icosphere subdivisions for the sphere, grid
    /// vertices per side otherwise.
    pub template_detail: usize,
    /// Sphere only: keep template faces within this angle (degrees) of the
    /// view axis. 180 keeps the whole sphere.
    pub template_cap_deg: f64,
    /// Bump baked into the template (the target stays analytic).
    pub deformation: Option<Bump>,
    /// Whether the template is additionally moved by a seeded affine map.
    pub planted_affine: bool,
    /// Gaussian depth noise sigma (mm).
    pub noise: f64,
    /// Fraction of valid pixels whose correspondence is replaced by uniform
    /// values in `[-1, 1]³`.
    pub outlier_fraction: f64,
    /// Stripe period (mm) for the embossed plane.
    pub stripe_period: f64,
    /// Intensity stripe amplitude around 0.5.
    pub stripe_amplitude: f64,
    /// Geometric relief of the stripes (mm); 0 keeps the plane flat.
    pub emboss_depth: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            kind: FixtureKind::Sphere,
            resolution: 128,
            radius: 50.0,
            curvature: 0.01,
            template_detail: 4,
            template_cap_deg: 180.0,
            deformation: None,
            planted_affine: false,
            noise: 0.0,
            outlier_fraction: 0.0,
            stripe_period: 8.0,
            stripe_amplitude: 0.3,
            emboss_depth: 0.0,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn sphere(resolution: usize, seed: u64) -> Self {
        Self { resolution, seed, ..Default::default() }
    }

    pub fn paraboloid(resolution: usize, seed: u64) -> Self {
        Self { kind: FixtureKind::Paraboloid, radius: 40.0, template_detail: 41, resolution, seed, ..Default::default() }
    }

    pub fn embossed_plane(resolution: usize, seed: u64) -> Self {
        Self { kind: FixtureKind::EmbossedPlane, radius: 20.0, template_detail: 41, resolution, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |msg: String| Err(FixtureError::InvalidSpec(msg));
        if self.resolution < 16 {
            return bad(format!("resolution must be at least 16, got {}", self.resolution));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(0.0..=0.5).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction must lie in [0, 0.5], got {}", self.outlier_fraction));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        match self.kind {
            FixtureKind::Sphere if self.template_detail > 6 => {
                return bad("sphere template_detail (subdivisions) must be at most 6".into())
            }
            FixtureKind::Paraboloid | FixtureKind::EmbossedPlane if self.template_detail < 3 => {
                return bad("grid template_detail must be at least 3".into())
            }
            FixtureKind::Paraboloid if !(self.curvature > 0.0 && self.curvature.is_finite()) => {
                return bad("curvature must be positive".into())
            }
            FixtureKind::EmbossedPlane
                if !(self.stripe_period > 0.0)
                    || !(0.0..=0.5).contains(&self.stripe_amplitude)
                    || !self.emboss_depth.is_finite() =>
            {
                return bad("stripes need period > 0, amplitude in [0, 0.5] and finite depth".into())
            }
            _ => {}
        }
        if !(self.template_cap_deg > 0.0 && self.template_cap_deg <= 180.0) {
            return bad(format!("template_cap_deg must lie in (0, 180], got {}", self.template_cap_deg));
        }
        if let Some(b) = self.deformation {
            if !(b.amplitude.is_finite() && b.width > 0.0 && b.width.is_finite()) {
                return bad("bump needs finite amplitude and positive width".into());
            }
        }
        Ok(())
    }

    /// Millimetres per pixel.
    pub fn pixel_size(&self) -> f64 {
        match self.kind {
            FixtureKind::Sphere | FixtureKind::Paraboloid => 2.4 * self.radius / self.resolution as f64,
            FixtureKind::EmbossedPlane => 2.0 * self.radius / self.resolution as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub stack: MapStack,
    pub template: TemplateMesh,
    /// Template triangulation placed on the analytic target surface.
    pub ground_truth: TriangleMesh,
    /// Maps the template frame onto the target frame.
    pub transform: AffineTransform,
}

struct Surface<'a> {
    spec: &'a FixtureSpec,
}

impl Surface<'_> {
    /// Height at `(x, y)`, `None` outside the visible region.
    fn height(&self, x: f64, y: f64) -> Option<f64> {
        let s = self.spec;
        let rho2 = x * x + y * y;
        match s.kind {
            FixtureKind::Sphere => (rho2 < s.radius * s.radius).then(|| (s.radius * s.radius - rho2).sqrt()),
            FixtureKind::Paraboloid => (rho2 <= s.radius * s.radius).then(|| s.curvature * (s.radius * s.radius - rho2)),
            FixtureKind::EmbossedPlane => (x.abs() <= s.radius && y.abs() <= s.radius)
                .then(|| s.emboss_depth * (2.0 * PI * x / s.stripe_period).sin()),
        }
    }

    /// Canonical coordinates of a surface point, within `[-1, 1]`.
    fn embed(&self, p: &Point3<f64>) -> Vector3<f64> {
        let s = self.spec;
        match s.kind {
            FixtureKind::Sphere => p.coords / s.radius,
            FixtureKind::Paraboloid => {
                Vector3::new(p.x / s.radius, p.y / s.radius, p.z / (s.curvature * s.radius * s.radius))
            }
            FixtureKind::EmbossedPlane => Vector3::new(p.x / s.radius, p.y / s.radius, 0.0),
        }
    }

    fn normal(&self, p: &Point3<f64>) -> Vector3<f64> {
        let s = self.spec;
        match s.kind {
            FixtureKind::Sphere => p.coords.normalize(),
            FixtureKind::Paraboloid => Vector3::new(2.0 * s.curvature * p.x, 2.0 * s.curvature * p.y, 1.0).normalize(),
            FixtureKind::EmbossedPlane => {
                let k = 2.0 * PI / s.stripe_period;
                Vector3::new(-s.emboss_depth * k * (k * p.x).cos(), 0.0, 1.0).normalize()
            }
        }
    }

    /// Point facing the camera, the centre of the planted bump.
    fn apex(&self) -> Point3<f64> {
        Point3::new(0.0, 0.0, self.height(0.0, 0.0).unwrap_or(0.0))
    }

    fn intensity(&self, p: &Point3<f64>) -> f64 {
        let s = self.spec;
        match s.kind {
            FixtureKind::EmbossedPlane => 0.5 + s.stripe_amplitude * (2.0 * PI * p.x / s.stripe_period).sin(),
            _ => 0.2 + 0.6 * self.normal(p).z.max(0.0),
        }
    }

    fn ground_truth(&self) -> TriangleMesh {
        let s = self.spec;
        match s.kind {
            FixtureKind::Sphere if s.template_cap_deg >= 180.0 => icosphere(s.radius, s.template_detail),
            FixtureKind::Sphere => {
                let full = icosphere(s.radius, s.template_detail);
                let min_z = s.radius * s.template_cap_deg.to_radians().cos() - 1e-9;
                let keep: Vec<[usize; 3]> = full
                    .faces()
                    .iter()
                    .filter(|f| f.iter().all(|&v| full.vertices()[v].z >= min_z))
                    .copied()
                    .collect();
                let mut index = vec![usize::MAX; full.vertex_count()];
                let mut vertices = Vec::new();
                let faces = keep
                    .iter()
                    .map(|f| {
                        f.map(|v| {
                            if index[v] == usize::MAX {
                                index[v] = vertices.len();
                                vertices.push(full.vertices()[v]);
                            }
                            index[v]
                        })
                    })
                    .collect();
                TriangleMesh::new(vertices, faces).expect("cap of a valid sphere is valid")
            }
            FixtureKind::Paraboloid | FixtureKind::EmbossedPlane => {
                let n = s.template_detail;
                let h = 2.0 * s.radius / (n - 1) as f64;
                let mut index = vec![usize::MAX; n * n];
                let mut vertices = Vec::new();
                for j in 0..n {
                    for i in 0..n {
                        let x = -s.radius + i as f64 * h;
                        let y = -s.radius + j as f64 * h;
                        if let Some(z) = self.height(x, y) {
                            index[j * n + i] = vertices.len();
                            vertices.push(Point3::new(x, y, z));
                        }
                    }
                }
                let mut faces = Vec::new();
                for j in 0..n - 1 {
                    for i in 0..n - 1 {
                        let a = index[j * n + i];
                        let b = index[j * n + i + 1];
                        let c = index[(j + 1) * n + i];
                        let d = index[(j + 1) * n + i + 1];
                        if a != usize::MAX && b != usize::MAX && d != usize::MAX {
                            faces.push([a, b, d]);
                        }
                        if a != usize::MAX && d != usize::MAX && c != usize::MAX {
                            faces.push([a, d, c]);
                        }
                    }
                }
                TriangleMesh::new(vertices, faces).expect("analytic grid is valid")
            }
        }
    }
}

/// Seeded affine map: rotation up to 8 degrees per axis, per-axis scale in
/// [0.92, 1.08], small shear and translation up to 8 mm per axis.
fn planted_transform(rng: &mut ChaCha8Rng) -> AffineTransform {
    let mut angle = || rng.random_range(-8.0f64..8.0).to_radians();
    let rotation = Rotation3::from_euler_angles(angle(), angle(), angle());
    let scale = Matrix3::from_diagonal(&Vector3::new(
        rng.random_range(0.92..1.08),
        rng.random_range(0.92..1.08),
        rng.random_range(0.92..1.08),
    ));
    let mut shear = Matrix3::identity();
    shear[(0, 1)] = rng.random_range(-0.05..0.05);
    shear[(1, 2)] = rng.random_range(-0.05..0.05);
    let translation = Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
    AffineTransform { linear: rotation.matrix() * scale * shear, translation }
}

/// Builds the scene. Identical specs give bit-identical fixtures.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let surface = Surface { spec };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let res = spec.resolution;
    let size = spec.pixel_size();
    let meta = MapMeta::canonical(res, res, size);
    let [cx, cy] = meta.principal_point();

    let mut intensity = Raster::filled(res, res, 1, 0.0);
    let mut depth = Raster::filled(res, res, 1, f64::NAN);
    let mut xyz = Raster::filled(res, res, 3, f64::NAN);
    let mut corr = Raster::filled(res, res, 3, f64::NAN);
    let mut valid_pixels = Vec::new();
    for row in 0..res {
        for col in 0..res {
            let x = (col as f64 - cx) * size;
            let y = (cy - row as f64) * size;
            let Some(z) = surface.height(x, y) else { continue };
            let p = Point3::new(x, y, z);
            depth.set(row, col, 0, z);
            xyz.pixel_mut(row, col).copy_from_slice(&[x, y, z]);
            corr.pixel_mut(row, col).copy_from_slice(surface.embed(&p).as_slice());
            intensity.set(row, col, 0, surface.intensity(&p));
            valid_pixels.push((row, col));
        }
    }

    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("noise sigma is finite and positive");
        for &(row, col) in &valid_pixels {
            let dz = normal.sample(&mut rng);
            depth.set(row, col, 0, depth.get(row, col, 0) + dz);
            xyz.set(row, col, 2, xyz.get(row, col, 2) + dz);
        }
    }
    let outliers = (spec.outlier_fraction * valid_pixels.len() as f64).floor() as usize;
    if outliers > 0 {
        let picked = rand::seq::index::sample(&mut rng, valid_pixels.len(), outliers);
        for k in picked.iter() {
            let (row, col) = valid_pixels[k];
            let e: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            corr.pixel_mut(row, col).copy_from_slice(&e);
        }
    }
    let stack = MapStack::new(intensity, depth, xyz, corr, None, meta)?;

    let ground_truth = surface.ground_truth();
    let embedding: Vec<Vector3<f64>> = ground_truth.vertices().iter().map(|p| surface.embed(p)).collect();
    let transform = if spec.planted_affine { planted_transform(&mut rng) } else { AffineTransform::identity() };
    let inverse = transform.inverse().expect("planted transforms are invertible");
    let apex = surface.apex();
    let placed: Vec<Point3<f64>> = ground_truth
        .vertices()
        .iter()
        .map(|p| {
            let offset = spec.deformation.map_or(0.0, |b| {
                b.amplitude * (-(p - apex).norm_squared() / (2.0 * b.width * b.width)).exp()
            });
            inverse.apply(&(p + surface.normal(p) * offset))
        })
        .collect();
    let template = TemplateMesh::new(ground_truth.with_vertices(placed)?, embedding)?;
    Ok(Fixture { spec: spec.clone(), stack, template, ground_truth, transform })
}

/// Stem of the map files written by [`write_fixture`].
pub const FIXTURE_STEM: &str = "scene";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub maps: MapPaths,
    pub template: PathBuf,
    pub ground_truth: PathBuf,
    pub transform: PathBuf,
    pub spec: PathBuf,
}

/// Writes the maps (`scene.*`, with mask), `template.ply`,
/// `ground_truth.ply`, `transform.json` and `spec.json` into `dir`.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<FixturePaths, FixtureError> {
    let maps = save_map_stack(&fixture.stack, dir, FIXTURE_STEM, true)?;
    let paths = FixturePaths {
        maps,
        template: dir.join("template.ply"),
        ground_truth: dir.join("ground_truth.ply"),
        transform: dir.join("transform.json"),
        spec: dir.join("spec.json"),
    };
    write_mesh(&paths.template, &MeshData::from_template(&fixture.template))?;
    write_mesh(&paths.ground_truth, &MeshData::from_mesh(fixture.ground_truth.clone()))?;
    let write_json = |path: &Path, text: String| {
        std::fs::write(path, text + "\n").map_err(|source| FixtureError::Io { path: path.to_path_buf(), source })
    };
    write_json(&paths.transform, serde_json::to_string_pretty(&fixture.transform).expect("transform serialises"))?;
    write_json(&paths.spec, serde_json::to_string_pretty(&fixture.spec).expect("spec serialises"))?;
    Ok(paths)
}

/// Analytic unit normal of the fixture surface at a surface point.
pub fn analytic_normal(spec: &FixtureSpec, p: &Point3<f64>) -> Vector3<f64> {
    Surface { spec }.normal(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_centre_depth_is_radius() {
        let f = generate_fixture(&FixtureSpec::sphere(128, 0)).unwrap();
        assert_eq!(f.stack.depth.get(64, 64, 0), 50.0);
        assert_eq!(f.template.vertex_count(), 2562);
        let corner = f.stack.is_valid(0, 0);
        assert!(!corner);
    }

    #[test]
    fn same_seed_same_fixture() {
        let spec = FixtureSpec {
            noise: 0.2,
            outlier_fraction: 0.3,
            planted_affine: true,
            deformation: Some(Bump { amplitude: 5.0, width: 20.0 }),
            ..FixtureSpec::sphere(64, 9)
        };
        let bits = |f: &Fixture| -> Vec<u64> {
            let s = &f.stack;
            [&s.intensity, &s.depth, &s.xyz, &s.correspondence]
                .iter()
                .flat_map(|r| r.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        let a = generate_fixture(&spec).unwrap();
        let b = generate_fixture(&spec).unwrap();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.template, b.template);
        assert_eq!(a.transform, b.transform);
        let c = generate_fixture(&FixtureSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn transform_maps_template_to_ground_truth() {
        let spec = FixtureSpec { planted_affine: true, ..FixtureSpec::paraboloid(32, 3) };
        let f = generate_fixture(&spec).unwrap();
        for (p, q) in f.template.mesh.vertices().iter().zip(f.ground_truth.vertices()) {
            assert!((f.transform.apply(p) - q).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_fixture(&FixtureSpec::sphere(8, 0)).is_err());
        let spec = FixtureSpec { outlier_fraction: 0.6, ..FixtureSpec::sphere(32, 0) };
        assert!(generate_fixture(&spec).is_err());
    }
}
