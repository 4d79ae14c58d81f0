//! `reconstruct`, `register` and `refine`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use facegeom_core::align::{estimate_affine_ransac, AffineTransform, AlignError};
use facegeom_core::correspondence::match_embedding_nn;
use facegeom_core::io::{read_mesh, read_template, write_mesh, MeshData};
use facegeom_core::maps::{load_map_stack, MapPaths};
use facegeom_core::nonrigid::{register, NonrigidError, RegistrationTrace};
use facegeom_core::refine::{refine_mesh, RefineError};
use facegeom_core::{lift_maps_to_mesh, MapStack, TargetMesh, TemplateMesh, TriangleMesh};
use log::info;

use crate::config::{InitMode, PipelineConfig};
use crate::error::{CliError, CliResult};

pub const DEFORMED_FILE: &str = "deformed.ply";
pub const REFINED_FILE: &str = "refined.ply";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructOutputs {
    pub deformed: PathBuf,
    pub refined: Option<PathBuf>,
    pub trace: PathBuf,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::input("config", anyhow!("no {what} path given")))
}

fn output_dir(cfg: &PipelineConfig) -> CliResult<&Path> {
    let out = required(&cfg.paths.output, "output")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(|e| CliError::input("output", e))?;
    Ok(out)
}

fn load_stack(cfg: &PipelineConfig) -> CliResult<MapStack> {
    let dir = required(&cfg.paths.maps, "maps")?;
    let paths = MapPaths::from_stem(dir, &cfg.paths.stem);
    load_map_stack(&paths).map_err(|e| CliError::input("maps", e))
}

fn lift(stack: &MapStack) -> CliResult<TargetMesh> {
    let target = lift_maps_to_mesh(stack).map_err(|e| CliError::input("lift", e))?;
    info!("target: {} vertices, {} faces", target.vertex_count(), target.mesh.face_count());
    Ok(target)
}

fn align_error(e: AlignError) -> CliError {
    match e {
        AlignError::InvalidConfig(_) => CliError::input("init", e),
        _ => CliError::solver("init", e),
    }
}

fn initial_transform(cfg: &PipelineConfig, template: &TemplateMesh, target: &TargetMesh) -> CliResult<AffineTransform> {
    match &cfg.init {
        InitMode::Identity => Ok(AffineTransform::identity()),
        InitMode::File(path) => {
            let read = || -> anyhow::Result<AffineTransform> {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
            };
            read().map_err(|e| CliError::input("init", e))
        }
        InitMode::Ransac => {
            let pairs = match_embedding_nn(template, target);
            let fit = estimate_affine_ransac(&pairs, template, target, &cfg.ransac).map_err(align_error)?;
            info!("init: {} of {} pairs are RANSAC inliers", fit.inlier_count, pairs.active_count());
            Ok(fit.transform)
        }
    }
}

fn write_trace(path: &Path, trace: &RegistrationTrace) -> CliResult<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        trace.write_jsonl(&mut w)?;
        w.flush()
    };
    write().with_context(|| format!("writing {}", path.display())).map_err(|e| CliError::input("output", e))
}

fn write_ply(path: &Path, data: &MeshData) -> CliResult<()> {
    write_mesh(path, data).with_context(|| format!("writing {}", path.display())).map_err(|e| CliError::input("output", e))
}

/// Registers the template onto the lifted maps and writes `deformed.ply`
/// and `trace.jsonl`. When registration fails after it has started, the
/// partial trace is still written.
fn run_registration(cfg: &PipelineConfig, stack: &MapStack, out: &Path) -> CliResult<(TriangleMesh, PathBuf, PathBuf)> {
    let template_path = required(&cfg.paths.template, "template")?;
    let template = read_template(template_path)
        .with_context(|| format!("reading {}", template_path.display()))
        .map_err(|e| CliError::input("template", e))?;
    let target = lift(stack)?;
    let init = initial_transform(cfg, &template, &target)?;
    let trace_path = out.join(TRACE_FILE);
    let reg = match register(&template, &target, &init, &cfg.registration) {
        Ok(reg) => reg,
        Err(NonrigidError::InvalidConfig(msg)) => return Err(CliError::input("register", anyhow!(msg))),
        Err(NonrigidError::NoActivePairs { iteration, trace }) => {
            write_trace(&trace_path, &trace)?;
            return Err(CliError::solver("register", anyhow!("every pair was pruned at outer iteration {iteration}")));
        }
        Err(e) => return Err(CliError::solver("register", e)),
    };
    info!("register: {} outer iterations, {} halvings", reg.trace.records.len(), reg.trace.halvings());
    write_trace(&trace_path, &reg.trace)?;
    let deformed_path = out.join(DEFORMED_FILE);
    write_ply(&deformed_path, &MeshData::from_mesh(reg.mesh.clone()))?;
    Ok((reg.mesh, deformed_path, trace_path))
}

fn run_refine(cfg: &PipelineConfig, deformed: &TriangleMesh, stack: &MapStack, out: &Path) -> CliResult<PathBuf> {
    let refined = refine_mesh(deformed, stack, &cfg.refine).map_err(|e| match e {
        RefineError::InvalidConfig(_) => CliError::input("refine", e),
        _ => CliError::solver("refine", e),
    })?;
    info!("refine: {} vertices", refined.mesh.vertex_count());
    let data = MeshData::from_mesh(refined.mesh)
        .with_scalar("tau", refined.texture.tau)
        .with_scalar("mu", refined.texture.mu);
    let path = out.join(REFINED_FILE);
    write_ply(&path, &data)?;
    Ok(path)
}

/// Full pipeline: lift, initialise, register, refine.
pub fn cmd_reconstruct(cfg: &PipelineConfig, skip_refine: bool) -> CliResult<ReconstructOutputs> {
    let stack = load_stack(cfg)?;
    let out = output_dir(cfg)?;
    let (deformed_mesh, deformed, trace) = run_registration(cfg, &stack, out)?;
    let refined = if skip_refine { None } else { Some(run_refine(cfg, &deformed_mesh, &stack, out)?) };
    Ok(ReconstructOutputs { deformed, refined, trace })
}

/// Registration only: `deformed.ply` and `trace.jsonl`.
pub fn cmd_register(cfg: &PipelineConfig) -> CliResult<ReconstructOutputs> {
    cmd_reconstruct(cfg, true)
}

/// Refines an existing mesh against the maps' intensity: `refined.ply`.
pub fn cmd_refine(cfg: &PipelineConfig, mesh: &Path) -> CliResult<PathBuf> {
    let stack = load_stack(cfg)?;
    let out = output_dir(cfg)?;
    let data = read_mesh(mesh).with_context(|| format!("reading {}", mesh.display())).map_err(|e| CliError::input("mesh", e))?;
    run_refine(cfg, &data.mesh, &stack, out)
}
