use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use facegeom_core::fixtures::FixtureKind;

use crate::config::{InitMode, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "facegeom", version, about = "Template registration and detail refinement from per-pixel geometry maps")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register the template to the maps, then refine; writes deformed.ply, refined.ply and trace.jsonl.
    Reconstruct {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Stop after registration.
        #[arg(long)]
        skip_refine: bool,
    },
    /// Register only; writes deformed.ply and trace.jsonl.
    Register {
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Refine an existing mesh against the maps' intensity; writes refined.ply.
    Refine {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Mesh to refine (PLY or OBJ).
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Depth accuracy up to scale and shift; writes report.json and report.txt.
    Evaluate(EvaluateArgs),
    /// Write an analytic test scene.
    Fixtures(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// JSON configuration layered over the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Template mesh (PLY with ex, ey, ez vertex properties).
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Directory with the map files.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// File stem of the maps [default: scene].
    #[arg(long)]
    pub stem: Option<String>,
    /// Output directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// `ransac`, `identity`, or a JSON file with three rows [a b c t].
    #[arg(long)]
    pub init: Option<InitMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha_memb_init: Option<f64>,
    #[arg(long)]
    pub alpha_memb_stop: Option<f64>,
    #[arg(long)]
    pub membrane_scale: Option<f64>,
    #[arg(long)]
    pub pair_diff_switch: Option<usize>,
    #[arg(long)]
    pub max_outer_iterations: Option<usize>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    /// Millimetres.
    #[arg(long)]
    pub ransac_threshold: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub subdivision_levels: Option<usize>,
}

impl PipelineArgs {
    /// Flags over `cfg`.
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.template.is_some() {
            cfg.paths.template.clone_from(&self.template);
        }
        if self.maps.is_some() {
            cfg.paths.maps.clone_from(&self.maps);
        }
        if self.out.is_some() {
            cfg.paths.output.clone_from(&self.out);
        }
        set(&mut cfg.paths.stem, &self.stem);
        set(&mut cfg.init, &self.init);
        set(&mut cfg.seed, &self.seed);
        let r = &mut cfg.registration;
        set(&mut r.alpha_memb_init, &self.alpha_memb_init);
        set(&mut r.alpha_memb_stop, &self.alpha_memb_stop);
        set(&mut r.membrane_scale, &self.membrane_scale);
        set(&mut r.pair_diff_switch, &self.pair_diff_switch);
        set(&mut r.max_outer_iterations, &self.max_outer_iterations);
        set(&mut cfg.ransac.iterations, &self.ransac_iterations);
        set(&mut cfg.ransac.inlier_threshold, &self.ransac_threshold);
        set(&mut cfg.refine.dt, &self.dt);
        set(&mut cfg.refine.eta, &self.eta);
        set(&mut cfg.refine.gain, &self.gain);
        set(&mut cfg.refine.subdivision_levels, &self.subdivision_levels);
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Estimated depth (single-channel PFM).
    #[arg(long, requires = "gt", conflicts_with = "manifest")]
    pub est: Option<PathBuf>,
    /// Ground-truth depth (single-channel PFM).
    #[arg(long, requires = "est")]
    pub gt: Option<PathBuf>,
    /// Binary PGM mask; defaults to every pixel finite in both maps.
    #[arg(long, requires = "est")]
    pub mask: Option<PathBuf>,
    /// JSON list of {name, est, gt, mask?, label?}.
    #[arg(long, required_unless_present = "est")]
    pub manifest: Option<PathBuf>,
    /// JSON object mapping sample name to label.
    #[arg(long, requires = "manifest")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub group_by: Option<GroupBy>,
    /// Millimetres per pixel, for the normal discrepancy.
    #[arg(long, default_value_t = 1.0)]
    pub pixel_size: f64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Inlier threshold as a fraction of the ground-truth depth range.
    #[arg(long)]
    pub threshold_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Sphere,
    Paraboloid,
    EmbossedPlane,
}

impl From<KindArg> for FixtureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sphere => FixtureKind::Sphere,
            KindArg::Paraboloid => FixtureKind::Paraboloid,
            KindArg::EmbossedPlane => FixtureKind::EmbossedPlane,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    /// Raster width and height.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Sphere radius, paraboloid aperture or half side of the plane (mm).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Icosphere subdivisions (sphere) or grid vertices per side.
    #[arg(long)]
    pub detail: Option<usize>,
    /// Sphere template cap half-angle in degrees.
    #[arg(long)]
    pub cap: Option<f64>,
    /// Depth noise sigma (mm).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of correspondence pixels to scramble.
    #[arg(long)]
    pub outliers: Option<f64>,
    /// Apply a random affine to the template.
    #[arg(long)]
    pub planted_affine: bool,
    /// Gaussian bump baked into the template (mm).
    #[arg(long, requires = "bump_width")]
    pub bump_amplitude: Option<f64>,
    #[arg(long, requires = "bump_amplitude")]
    pub bump_width: Option<f64>,
    /// Embossed plane: relief depth of the stripes (mm).
    #[arg(long)]
    pub emboss_depth: Option<f64>,
}
