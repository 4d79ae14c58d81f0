//! Command-line front end: configuration layering, the pipeline stages and
//! error reporting with stable exit codes.

pub mod args;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fixtures;
pub mod pipeline;

use std::path::PathBuf;

use anyhow::anyhow;

use args::{Cli, Command, EvaluateArgs, GroupBy, PipelineArgs};
use config::PipelineConfig;
use error::{CliError, CliResult};
use evaluate::{cmd_evaluate, load_manifest, EvaluateOptions, Sample};

pub use evaluate::EvaluationReport;
pub use pipeline::{cmd_reconstruct, cmd_refine, cmd_register, ReconstructOutputs};

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "FACEGEOM_THREADS";

/// Defaults, then the config file, then flags.
pub fn pipeline_config(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(args.config.as_deref())?;
    args.apply(&mut cfg);
    cfg.finalize()
}

fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluationReport> {
    let mut cfg = PipelineConfig::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.iterations {
        cfg.evaluation.iterations = n;
    }
    if let Some(t) = args.threshold_fraction {
        cfg.evaluation.threshold_fraction = t;
    }
    let cfg = cfg.finalize()?;
    let samples = match (&args.manifest, &args.est, &args.gt) {
        (Some(manifest), _, _) => load_manifest(manifest, args.labels.as_deref())?,
        (None, Some(est), Some(gt)) => {
            vec![Sample { name: "sample".into(), est: est.clone(), gt: gt.clone(), mask: args.mask.clone(), label: None }]
        }
        _ => return Err(CliError::input("evaluate", anyhow!("give --manifest or both --est and --gt"))),
    };
    let opts = EvaluateOptions {
        samples,
        group_by_label: args.group_by == Some(GroupBy::Label),
        pixel_size: args.pixel_size,
        output: args.out.clone(),
    };
    cmd_evaluate(&opts, &cfg.evaluation)
}

/// Parses the thread cap.
pub fn thread_count(value: Option<&str>) -> CliResult<usize> {
    match value.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v.parse().map_err(|_| CliError::input("environment", anyhow!("{THREADS_ENV}={v} is not a thread count"))),
    }
}

/// Runs one parsed command. Returns the files written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match &cli.command {
        Command::Reconstruct { pipeline, skip_refine } => {
            let out = cmd_reconstruct(&pipeline_config(pipeline)?, *skip_refine)?;
            Ok([Some(out.deformed), out.refined, Some(out.trace)].into_iter().flatten().collect())
        }
        Command::Register { pipeline } => {
            let out = cmd_register(&pipeline_config(pipeline)?)?;
            Ok(vec![out.deformed, out.trace])
        }
        Command::Refine { pipeline, mesh } => Ok(vec![cmd_refine(&pipeline_config(pipeline)?, mesh)?]),
        Command::Evaluate(args) => {
            evaluate(args)?;
            Ok(vec![args.out.join(evaluate::REPORT_JSON), args.out.join(evaluate::REPORT_TXT)])
        }
        Command::Fixtures(args) => {
            let p = fixtures::cmd_fixtures(&fixtures::fixture_spec(args), &args.out)?;
            Ok(vec![p.template, p.ground_truth, p.transform, p.spec, p.maps.meta])
        }
    }
}
