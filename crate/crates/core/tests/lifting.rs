use std::collections::HashSet;

use facegeom_core::fixtures::{generate_fixture, FixtureSpec};
use facegeom_core::lifting::LiftError;
use facegeom_core::maps::{MapMeta, Raster};
use facegeom_core::{lift_maps_to_mesh, MapStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masked_stack(w: usize, h: usize, valid: &[bool]) -> MapStack {
    let v = |i: usize, x: f64| if valid[i] { x } else { f64::NAN };
    let depth: Vec<f64> = (0..w * h).map(|i| v(i, 1.0)).collect();
    let xyz: Vec<f64> = (0..w * h).flat_map(|i| [v(i, (i % w) as f64), v(i, -((i / w) as f64)), v(i, 1.0)]).collect();
    let corr: Vec<f64> = (0..w * h).flat_map(|i| [v(i, 0.1); 3]).collect();
    MapStack::new(
        Raster::filled(w, h, 1, 0.5),
        Raster::new(w, h, 1, depth),
        Raster::new(w, h, 3, xyz),
        Raster::new(w, h, 3, corr),
        None,
        MapMeta::canonical(w, h, 1.0),
    )
    .unwrap()
}

#[test]
fn face_count_law_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..1000 {
        let (w, h) = (rng.random_range(2..24), rng.random_range(2..24));
        let density = rng.random_range(0.3..1.0);
        let valid: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let stack = masked_stack(w, h, &valid);
        let count = valid.iter().filter(|&&b| b).count();
        let target = match lift_maps_to_mesh(&stack) {
            Ok(t) => t,
            Err(LiftError::EmptyFace { valid }) => {
                assert!(valid < 3, "trial {trial}");
                continue;
            }
        };
        let full_quads = (0..h - 1)
            .flat_map(|r| (0..w - 1).map(move |c| (r, c)))
            .filter(|&(r, c)| valid[r * w + c] && valid[r * w + c + 1] && valid[(r + 1) * w + c] && valid[(r + 1) * w + c + 1])
            .count();
        assert_eq!(target.mesh.vertex_count(), count, "trial {trial}");
        assert_eq!(target.mesh.face_count(), 2 * full_quads, "trial {trial}");
        let seen: HashSet<_> = target.pixel_of_vertex.iter().copied().collect();
        assert_eq!(seen.len(), count);
        assert!(target.pixel_of_vertex.iter().all(|&(r, c)| valid[r * w + c]));
    }
}

#[test]
fn fixture_vertices_sit_on_the_sphere() {
    let spec = FixtureSpec::sphere(96, 2);
    let f = generate_fixture(&spec).unwrap();
    let target = lift_maps_to_mesh(&f.stack).unwrap();
    let size = spec.pixel_size();
    let [cx, cy] = f.stack.meta().principal_point();
    for (p, &(row, col)) in target.mesh.vertices().iter().zip(&target.pixel_of_vertex) {
        let (x, y) = ((col as f64 - cx) * size, (cy - row as f64) * size);
        let z = (spec.radius * spec.radius - x * x - y * y).sqrt();
        assert!((p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9 && (p.z - z).abs() < 1e-9);
    }
    for face in 0..target.mesh.face_count() {
        assert!(target.mesh.face_cross(face).z > 0.0, "face {face} faces away from the camera");
    }
}

#[test]
fn two_valid_pixels_cannot_form_a_face() {
    let stack = masked_stack(2, 2, &[true, false, false, true]);
    assert_eq!(lift_maps_to_mesh(&stack), Err(LiftError::EmptyFace { valid: 2 }));
}
