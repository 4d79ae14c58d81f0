use std::io::Write;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{DeformationModel, NonrigidError, RegistrationConfig};
use crate::align::AffineTransform;
use crate::correspondence::{match_embedding_nn, match_euclidean, CorrespondenceSet, MatchSpace};
use crate::geom::{membrane_weights, vertex_normals, TemplateMesh, TriangleMesh};
use crate::lifting::TargetMesh;

/// Deactivates pairs that are farther apart than `max_distance` or whose
/// normals differ by more than `max_angle_deg`. Pairs where either normal
/// is undefined (zero) are deactivated too. Already inactive pairs stay
/// inactive.
pub fn prune_pairs(
    pairs: &CorrespondenceSet,
    positions: &[Point3<f64>],
    template_normals: &[Vector3<f64>],
    target: &TargetMesh,
    target_normals: &[Vector3<f64>],
    max_distance: f64,
    max_angle_deg: f64,
) -> CorrespondenceSet {
    let c = target.mesh.vertices();
    let active = pairs
        .pairs
        .iter()
        .zip(&pairs.active)
        .map(|(&(i, j), &was_active)| {
            if !was_active {
                return false;
            }
            let (nv, nc) = (template_normals[i], target_normals[j]);
            if nv == Vector3::zeros() || nc == Vector3::zeros() {
                return false;
            }
            let close = (positions[i] - c[j]).norm() <= max_distance;
            let aligned = nv.angle(&nc).to_degrees() <= max_angle_deg;
            close && aligned
        })
        .collect();
    CorrespondenceSet { pairs: pairs.pairs.clone(), active, match_space: pairs.match_space }
}

/// One solve of the inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerStep {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Frobenius norm of the position change (mm).
    pub delta_norm: f64,
    pub active_pairs: usize,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub alpha_memb: f64,
    pub match_space: MatchSpace,
    pub active_pairs: usize,
    pub energy: f64,
    /// Mean per-vertex displacement over the iteration (mm).
    pub mean_motion: f64,
    /// Whether `alpha_memb` was halved after this iteration.
    pub halved: bool,
    pub inner_steps: Vec<InnerStep>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistrationTrace {
    pub records: Vec<TraceRecord>,
}

impl RegistrationTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn halvings(&self) -> usize {
        self.records.iter().filter(|r| r.halved).count()
    }

    pub fn inner_steps(&self) -> impl Iterator<Item = &InnerStep> {
        self.records.iter().flat_map(|r| r.inner_steps.iter())
    }

    /// JSON lines, one record per outer iteration.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut writer, r)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Deformed template; the face list is the template's.
    pub mesh: TriangleMesh,
    pub trace: RegistrationTrace,
    pub pairs: CorrespondenceSet,
}

fn mean_motion(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

fn frobenius(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>().sqrt()
}

/// Deforms the template onto the target.
///
/// The template is first moved by `init`, which also becomes the membrane's
/// rest shape. Each outer iteration matches (embedding space until the
/// active pair count settles, spatial nearest neighbour afterwards), prunes,
/// and runs the inner loop of exact solves. `alpha_memb` is halved whenever
/// the mean vertex motion of an iteration drops below `outer_motion_tol`;
/// the loop ends once it falls below `alpha_memb_stop`.
pub fn register(
    template: &TemplateMesh,
    target: &TargetMesh,
    init: &AffineTransform,
    cfg: &RegistrationConfig,
) -> Result<Registration, NonrigidError> {
    cfg.validate()?;
    let start = init.apply_to_template(template)?;
    let rest: Vec<Point3<f64>> = start.mesh.vertices().to_vec();
    let faces = template.mesh.faces();
    let mut trace = RegistrationTrace::default();
    let mut alpha = cfg.alpha_memb_init;
    if alpha < cfg.alpha_memb_stop {
        let pairs = CorrespondenceSet::new(Vec::new(), MatchSpace::Embedding);
        return Ok(Registration { mesh: start.mesh, trace, pairs });
    }

    let weights = membrane_weights(&start.mesh, cfg.membrane_scheme)?;
    let target_normals = vertex_normals(&target.mesh);
    let model = DeformationModel::new(&rest, target, &target_normals, &weights, cfg)?;

    let mut positions = rest.clone();
    let mut space = MatchSpace::Embedding;
    let mut previous_active: Option<usize> = None;
    let mut pairs = CorrespondenceSet::new(Vec::new(), space);

    let mesh_at = |p: &[Point3<f64>]| TriangleMesh::new(p.to_vec(), faces.to_vec());
    let mut iteration = 0;
    while alpha >= cfg.alpha_memb_stop && iteration < cfg.max_outer_iterations {
        let factor = cfg.prune_factor(alpha);
        let (max_d, max_a) = (cfg.prune_distance * factor, cfg.prune_angle * factor);

        let matched = match space {
            MatchSpace::Embedding => match_embedding_nn(template, target),
            MatchSpace::Euclidean => match_euclidean(&positions, target),
        };
        let normals = vertex_normals(&mesh_at(&positions)?);
        pairs = prune_pairs(&matched, &positions, &normals, target, &target_normals, max_d, max_a);
        let active = pairs.active_count();
        if active == 0 {
            return Err(NonrigidError::NoActivePairs { iteration, trace: Box::new(trace) });
        }
        let record_space = space;
        if let Some(prev) = previous_active {
            if space == MatchSpace::Embedding && prev.abs_diff(active) < cfg.pair_diff_switch {
                space = MatchSpace::Euclidean;
            }
        }
        previous_active = Some(active);

        let outer_start = positions.clone();
        let mut inner_steps = Vec::new();
        for _ in 0..cfg.max_inner_iterations {
            let before = model.energy(&positions, &pairs, alpha)?;
            let next = model.solve(&pairs, alpha)?;
            let after = model.energy(&next, &pairs, alpha)?;
            let delta_norm = frobenius(&next, &positions);
            inner_steps.push(InnerStep {
                energy_before: before,
                energy_after: after,
                delta_norm,
                active_pairs: pairs.active_count(),
            });
            positions = next;
            if delta_norm < cfg.inner_tol {
                break;
            }
            // Same matches, pruning re-evaluated at the new positions.
            let normals = vertex_normals(&mesh_at(&positions)?);
            let repruned = prune_pairs(&matched, &positions, &normals, target, &target_normals, max_d, max_a);
            if repruned.active == pairs.active {
                break;
            }
            if repruned.active_count() == 0 {
                return Err(NonrigidError::NoActivePairs { iteration, trace: Box::new(trace) });
            }
            pairs = repruned;
        }

        let motion = mean_motion(&positions, &outer_start);
        let energy = model.energy(&positions, &pairs, alpha)?;
        let halved = motion < cfg.outer_motion_tol;
        trace.records.push(TraceRecord {
            iteration,
            alpha_memb: alpha,
            match_space: record_space,
            active_pairs: pairs.active_count(),
            energy,
            mean_motion: motion,
            halved,
            inner_steps,
        });
        log::debug!(
            "outer {iteration}: alpha {alpha:e}, {} active, motion {motion:.4} mm, energy {energy:.6e}",
            pairs.active_count()
        );
        if halved {
            alpha /= 2.0;
        }
        iteration += 1;
    }
    if alpha >= cfg.alpha_memb_stop {
        log::warn!("registration stopped at the iteration cap with alpha_memb {alpha:e}");
    }
    Ok(Registration { mesh: mesh_at(&positions)?, trace, pairs })
}
