//! `fixtures`: analytic scenes on disk.

use facegeom_core::fixtures::{generate_fixture, write_fixture, Bump, FixtureError, FixturePaths, FixtureKind, FixtureSpec};

use crate::args::FixtureArgs;
use crate::error::{CliError, CliResult};

pub fn fixture_spec(args: &FixtureArgs) -> FixtureSpec {
    let mut spec = match FixtureKind::from(args.kind) {
        FixtureKind::Sphere => FixtureSpec::sphere(args.res, args.seed),
        FixtureKind::Paraboloid => FixtureSpec::paraboloid(args.res, args.seed),
        FixtureKind::EmbossedPlane => FixtureSpec::embossed_plane(args.res, args.seed),
    };
    if let Some(v) = args.radius {
        spec.radius = v;
    }
    if let Some(v) = args.detail {
        spec.template_detail = v;
    }
    if let Some(v) = args.cap {
        spec.template_cap_deg = v;
    }
    if let Some(v) = args.noise {
        spec.noise = v;
    }
    if let Some(v) = args.outliers {
        spec.outlier_fraction = v;
    }
    if let Some(v) = args.emboss_depth {
        spec.emboss_depth = v;
    }
    if let (Some(amplitude), Some(width)) = (args.bump_amplitude, args.bump_width) {
        spec.deformation = Some(Bump { amplitude, width });
    }
    spec.planted_affine = args.planted_affine;
    spec
}

pub fn cmd_fixtures(spec: &FixtureSpec, out: &std::path::Path) -> CliResult<FixturePaths> {
    let fixture = generate_fixture(spec).map_err(|e| match e {
        FixtureError::InvalidSpec(_) => CliError::input("fixtures", e),
        _ => CliError::solver("fixtures", e),
    })?;
    std::fs::create_dir_all(out).map_err(|e| CliError::input("output", anyhow::anyhow!(e).context(format!("creating {}", out.display()))))?;
    write_fixture(&fixture, out).map_err(|e| CliError::input("output", e))
}
