//! Depth-map accuracy up to a global scale and shift along the depth axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{depth_to_normals, Raster};

const MAX_REFITS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{found} usable pixels, at least {needed} needed")]
    TooFewPixels { found: usize, needed: usize },
    #[error("all {iterations} samples were degenerate")]
    DegenerateSample { iterations: usize },
    #[error("ground-truth depth is constant over the mask")]
    FlatGroundTruth,
    #[error("raster size mismatch: {0}")]
    SizeMismatch(String),
    #[error("invalid evaluation configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iterations: usize,
    /// Inlier threshold as a fraction of the ground-truth depth range.
    pub threshold_fraction: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iterations: 1000, threshold_fraction: 0.03, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iterations == 0 {
            return Err(EvalError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction.is_finite()) {
            return Err(EvalError::InvalidConfig("threshold_fraction must be positive".into()));
        }
        Ok(())
    }
}

/// Model `z ≈ scale · ẑ + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFit {
    pub scale: f64,
    pub shift: f64,
    /// Per pixel, row-major; false outside the usable set.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub usable_count: usize,
}

/// Errors in percent of the ground-truth depth range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalReport {
    pub mean_err: f64,
    /// Population standard deviation.
    pub std_err: f64,
    pub median_err: f64,
    /// Mean of the largest 10% of errors.
    pub p90_err: f64,
    /// 90th percentile (linear interpolation), for comparison.
    pub percentile90_err: f64,
    /// Fraction of usable pixels that were RANSAC inliers, when known.
    pub inlier_fraction: Option<f64>,
    pub ransac_scale: f64,
    pub ransac_shift: f64,
    pub pixel_count: usize,
    /// Ground-truth depth range over the usable pixels (mm).
    pub depth_range: f64,
}

fn check_sizes(est: &Raster, gt: &Raster, mask: &[bool]) -> Result<(), EvalError> {
    if est.width() != gt.width() || est.height() != gt.height() || est.channels() != 1 || gt.channels() != 1 {
        return Err(EvalError::SizeMismatch(format!(
            "estimate {}x{}x{}, ground truth {}x{}x{}",
            est.width(),
            est.height(),
            est.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    if mask.len() != gt.data().len() {
        return Err(EvalError::SizeMismatch(format!("mask has {} entries, rasters {}", mask.len(), gt.data().len())));
    }
    Ok(())
}

/// Pixels inside the mask where both depths are finite.
fn usable(est: &Raster, gt: &Raster, mask: &[bool]) -> Vec<usize> {
    let (e, g) = (est.data(), gt.data());
    (0..mask.len()).filter(|&i| mask[i] && e[i].is_finite() && g[i].is_finite()).collect()
}

fn depth_range(gt: &Raster, pixels: &[usize]) -> f64 {
    let g = gt.data();
    let (lo, hi) = pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(g[i]), hi.max(g[i])));
    hi - lo
}

fn line_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

/// The two distinct sample positions of `iteration`: ChaCha8 seeded from
/// `seed`, stream `iteration`, duplicates redrawn.
pub fn depth_sample(seed: u64, iteration: usize, n: usize) -> [usize; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let a = rng.random_range(0..n);
    loop {
        let b = rng.random_range(0..n);
        if b != a {
            return [a, b];
        }
    }
}

/// RANSAC for `(scale, shift)` with `z ≈ scale · ẑ + shift`: two-pixel
/// hypotheses with positive scale, scored by inlier count then inlier SSE
/// then iteration, and refit by least squares on the inliers until stable.
pub fn normalize_depth_ransac(est: &Raster, gt: &Raster, mask: &[bool], cfg: &EvalConfig) -> Result<DepthFit, EvalError> {
    cfg.validate()?;
    check_sizes(est, gt, mask)?;
    let pixels = usable(est, gt, mask);
    if pixels.len() < 2 {
        return Err(EvalError::TooFewPixels { found: pixels.len(), needed: 2 });
    }
    let x: Vec<f64> = pixels.iter().map(|&i| est.data()[i]).collect();
    let y: Vec<f64> = pixels.iter().map(|&i| gt.data()[i]).collect();
    let range = depth_range(gt, &pixels);
    let threshold = cfg.threshold_fraction * if range > 0.0 { range } else { 1.0 };
    let n = x.len();

    let score = |a: f64, b: f64| {
        x.iter().zip(&y).fold((0usize, 0.0f64), |(c, s), (xi, yi)| {
            let r = (a * xi + b - yi).abs();
            if r <= threshold { (c + 1, s + r * r) } else { (c, s) }
        })
    };
    let best = (0..cfg.iterations)
        .into_par_iter()
        .filter_map(|it| {
            let [i, j] = depth_sample(cfg.seed, it, n);
            if x[i] == x[j] {
                return None;
            }
            let a = (y[j] - y[i]) / (x[j] - x[i]);
            if !(a > 0.0 && a.is_finite()) {
                return None;
            }
            let b = y[i] - a * x[i];
            let (count, sse) = score(a, b);
            Some((count, sse, it, a, b))
        })
        .min_by(|p, q| q.0.cmp(&p.0).then(p.1.total_cmp(&q.1)).then(p.2.cmp(&q.2)))
        .ok_or(EvalError::DegenerateSample { iterations: cfg.iterations })?;

    let (mut a, mut b) = (best.3, best.4);
    let flags = |a: f64, b: f64| -> Vec<bool> { x.iter().zip(&y).map(|(xi, yi)| (a * xi + b - yi).abs() <= threshold).collect() };
    let mut inliers = flags(a, b);
    for _ in 0..MAX_REFITS {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            x.iter().zip(&y).zip(&inliers).filter(|(_, &f)| f).map(|((xi, yi), _)| (*xi, *yi)).unzip();
        let Some((ra, rb)) = line_fit(&xs, &ys) else { break };
        if !(ra > 0.0) {
            break;
        }
        let next = flags(ra, rb);
        if next.iter().filter(|&&f| f).count() < 2 {
            break;
        }
        (a, b) = (ra, rb);
        let stable = next == inliers;
        inliers = next;
        if stable {
            break;
        }
    }
    let mut per_pixel = vec![false; mask.len()];
    for (k, &p) in pixels.iter().enumerate() {
        per_pixel[p] = inliers[k];
    }
    let inlier_count = inliers.iter().filter(|&&f| f).count();
    Ok(DepthFit { scale: a, shift: b, inliers: per_pixel, inlier_count, usable_count: n })
}

/// Statistics of `|scale · ẑ + shift - z|` over the usable pixels, in percent
/// of the ground-truth depth range there.
pub fn error_statistics(
    est: &Raster,
    gt: &Raster,
    mask: &[bool],
    scale: f64,
    shift: f64,
) -> Result<DepthEvalReport, EvalError> {
    check_sizes(est, gt, mask)?;
    let pixels = usable(est, gt, mask);
    if pixels.is_empty() {
        return Err(EvalError::TooFewPixels { found: 0, needed: 1 });
    }
    let range = depth_range(gt, &pixels);
    if !(range > 0.0) {
        return Err(EvalError::FlatGroundTruth);
    }
    let mut errors: Vec<f64> =
        pixels.iter().map(|&i| (scale * est.data()[i] + shift - gt.data()[i]).abs() / range * 100.0).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { errors[n / 2] } else { 0.5 * (errors[n / 2 - 1] + errors[n / 2]) };
    let worst = n.div_ceil(10);
    let p90 = errors[n - worst..].iter().sum::<f64>() / worst as f64;
    let pos = 0.9 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let percentile90 = errors[lo] + (pos - lo as f64) * (errors[hi] - errors[lo]);
    Ok(DepthEvalReport {
        mean_err: mean,
        std_err: var.sqrt(),
        median_err: median,
        p90_err: p90,
        percentile90_err: percentile90,
        inlier_fraction: None,
        ransac_scale: scale,
        ransac_shift: shift,
        pixel_count: n,
        depth_range: range,
    })
}

/// Normalisation followed by the error statistics.
pub fn evaluate_depth(est: &Raster, gt: &Raster, mask: &[bool], cfg: &EvalConfig) -> Result<DepthEvalReport, EvalError> {
    let fit = normalize_depth_ransac(est, gt, mask, cfg)?;
    let mut report = error_statistics(est, gt, mask, fit.scale, fit.shift)?;
    report.inlier_fraction = Some(fit.inlier_count as f64 / fit.usable_count as f64);
    Ok(report)
}

/// Mean L1 distance between the unit normals of the two depth maps over the
/// usable pixels.
pub fn normal_discrepancy(est: &Raster, gt: &Raster, mask: &[bool], pixel_size: f64) -> Result<f64, EvalError> {
    check_sizes(est, gt, mask)?;
    let pixels = usable(est, gt, mask);
    if pixels.is_empty() {
        return Err(EvalError::TooFewPixels { found: 0, needed: 1 });
    }
    let valid: Vec<bool> = (0..mask.len()).map(|i| pixels.binary_search(&i).is_ok()).collect();
    let (ne, ng) = (depth_to_normals(est, &valid, pixel_size), depth_to_normals(gt, &valid, pixel_size));
    let total: f64 = pixels
        .iter()
        .map(|&i| (0..3).map(|k| (ne.data()[3 * i + k] - ng.data()[3 * i + k]).abs()).sum::<f64>())
        .sum();
    Ok(total / pixels.len() as f64)
}

/// Column means over a group of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub count: usize,
    pub mean_err: f64,
    pub std_err: f64,
    pub median_err: f64,
    pub p90_err: f64,
}

pub fn summarize(reports: &[DepthEvalReport]) -> Option<ReportSummary> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&DepthEvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(ReportSummary {
        count: reports.len(),
        mean_err: avg(|r| r.mean_err),
        std_err: avg(|r| r.std_err),
        median_err: avg(|r| r.median_err),
        p90_err: avg(|r| r.p90_err),
    })
}

/// Aligned plain-text table: one row per group, columns Mean, Std, Median, 90%.
pub fn format_table(rows: &[(String, ReportSummary)]) -> String {
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>5}  {:>8}  {:>8}  {:>8}  {:>8}\n", "group", "n", "Mean", "Std", "Median", "90%");
    for (name, s) in rows {
        out += &format!(
            "{:<width$}  {:>5}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}\n",
            name, s.count, s.mean_err, s.std_err, s.median_err, s.p90_err
        );
    }
    out
}
