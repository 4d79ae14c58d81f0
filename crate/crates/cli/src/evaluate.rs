//! `evaluate`: depth accuracy reports for one pair or a manifest of pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use facegeom_core::evaluation::{
    evaluate_depth, format_table, normal_discrepancy, summarize, DepthEvalReport, EvalConfig, EvalError, ReportSummary,
};
use facegeom_core::maps::{read_mask, read_raster, Raster};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// One estimated / ground-truth depth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub name: String,
    pub est: PathBuf,
    pub gt: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub name: String,
    pub label: Option<String>,
    pub report: DepthEvalReport,
    /// Mean L1 distance between unit normals.
    pub normal_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub summary: ReportSummary,
}

/// Contents of `report.json`. All errors are percentages of the
/// ground-truth depth range; `p90_err` is the mean of the worst 10%.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: Vec<SampleReport>,
    pub groups: Vec<GroupReport>,
    pub overall: ReportSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub samples: Vec<Sample>,
    pub group_by_label: bool,
    /// Millimetres per pixel, for the normals.
    pub pixel_size: f64,
    pub output: PathBuf,
}

/// Reads a JSON list of samples; relative paths are taken from the
/// manifest's directory. `labels` (name to label) overrides manifest labels.
pub fn load_manifest(path: &Path, labels: Option<&Path>) -> CliResult<Vec<Sample>> {
    let read = || -> anyhow::Result<Vec<Sample>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut samples: Vec<Sample> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for s in &mut samples {
            for p in [&mut s.est, &mut s.gt].into_iter().chain(s.mask.as_mut()) {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        if let Some(labels) = labels {
            let text = std::fs::read_to_string(labels).with_context(|| format!("reading {}", labels.display()))?;
            let map: BTreeMap<String, String> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", labels.display()))?;
            for s in &mut samples {
                if let Some(l) = map.get(&s.name) {
                    s.label = Some(l.clone());
                }
            }
        }
        Ok(samples)
    };
    read().map_err(|e| CliError::input("manifest", e))
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::DegenerateSample { .. } => CliError::solver("evaluate", e),
        _ => CliError::input("evaluate", e),
    }
}

fn evaluate_sample(sample: &Sample, cfg: &EvalConfig, pixel_size: f64) -> CliResult<SampleReport> {
    let ctx = |e: facegeom_core::maps::MapError| CliError::input("evaluate", anyhow!(e).context(format!("sample {}", sample.name)));
    let est = read_raster(&sample.est).map_err(ctx)?;
    let gt = read_raster(&sample.gt).map_err(ctx)?;
    let mask = match &sample.mask {
        Some(path) => {
            let (w, h, m) = read_mask(path).map_err(ctx)?;
            if (w, h) != (gt.width(), gt.height()) {
                return Err(CliError::input(
                    "evaluate",
                    anyhow!("sample {}: mask is {w}x{h}, depth {}x{}", sample.name, gt.width(), gt.height()),
                ));
            }
            m
        }
        None => vec![true; gt.width() * gt.height()],
    };
    let with_name = |e: EvalError| {
        let mut err = eval_error(e);
        err.source = err.source.context(format!("sample {}", sample.name));
        err
    };
    let report = evaluate_depth(&est, &gt, &mask, cfg).map_err(with_name)?;
    let normals = normal_discrepancy(&scaled(&est, report.ransac_scale, report.ransac_shift), &gt, &mask, pixel_size)
        .map_err(with_name)?;
    info!("{}: mean {:.3}%, scale {:.4}, shift {:.4}", sample.name, report.mean_err, report.ransac_scale, report.ransac_shift);
    Ok(SampleReport { name: sample.name.clone(), label: sample.label.clone(), report, normal_discrepancy: normals })
}

fn scaled(est: &Raster, a: f64, b: f64) -> Raster {
    let data = est.data().iter().map(|v| a * v + b).collect();
    Raster::new(est.width(), est.height(), 1, data)
}

pub fn cmd_evaluate(opts: &EvaluateOptions, cfg: &EvalConfig) -> CliResult<EvaluationReport> {
    cfg.validate().map_err(|e| CliError::input("config", e))?;
    if opts.samples.is_empty() {
        return Err(CliError::input("evaluate", anyhow!("no samples to evaluate")));
    }
    if !(opts.pixel_size > 0.0 && opts.pixel_size.is_finite()) {
        return Err(CliError::input("evaluate", anyhow!("pixel size must be positive")));
    }
    let samples = opts.samples.iter().map(|s| evaluate_sample(s, cfg, opts.pixel_size)).collect::<CliResult<Vec<_>>>()?;

    let mut groups = Vec::new();
    if opts.group_by_label {
        let mut by_label: BTreeMap<&str, Vec<DepthEvalReport>> = BTreeMap::new();
        for s in &samples {
            let label = s
                .label
                .as_deref()
                .ok_or_else(|| CliError::input("evaluate", anyhow!("sample {} has no label", s.name)))?;
            by_label.entry(label).or_default().push(s.report.clone());
        }
        for (label, reports) in by_label {
            groups.push(GroupReport { group: label.to_string(), summary: summarize(&reports).expect("group is nonempty") });
        }
    }
    let all: Vec<DepthEvalReport> = samples.iter().map(|s| s.report.clone()).collect();
    let report = EvaluationReport { samples, groups, overall: summarize(&all).expect("samples are nonempty") };

    let write = || -> anyhow::Result<()> {
        std::fs::create_dir_all(&opts.output).with_context(|| format!("creating {}", opts.output.display()))?;
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(opts.output.join(REPORT_JSON), json + "\n")?;
        let mut rows: Vec<(String, ReportSummary)> = report.groups.iter().map(|g| (g.group.clone(), g.summary.clone())).collect();
        rows.push(("all".to_string(), report.overall.clone()));
        std::fs::write(opts.output.join(REPORT_TXT), format_table(&rows))?;
        Ok(())
    };
    write().map_err(|e| CliError::input("output", e))?;
    Ok(report)
}
