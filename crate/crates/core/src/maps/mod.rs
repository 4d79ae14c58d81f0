//! Per-pixel geometry maps: loading, validation, storage and normals.

mod normals;
mod raster;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normals::depth_to_normals;
pub use raster::Raster;

use raster::{read_pfm, read_pgm_mask, write_pfm, write_pgm_mask, DecodeError};

/// Correspondence coordinates may exceed the normalised `[-1, 1]` embedding
/// box by this margin.
pub const CORRESPONDENCE_LIMIT: f64 = 1.1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{what} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch { what: String, expected_w: usize, expected_h: usize, actual_w: usize, actual_h: usize },
    #[error("{what} has {actual} channels, expected {expected}")]
    ChannelCount { what: String, expected: usize, actual: usize },
    #[error("validity disagrees between channels or with the mask on {pixels} pixels")]
    MaskChannelConflict { pixels: usize },
    #[error("correspondence at pixel ({row}, {col}) lies outside [-{limit}, {limit}]", limit = CORRESPONDENCE_LIMIT)]
    CorrespondenceOutOfRange { row: usize, col: usize },
    #[error("intensity at pixel ({row}, {col}) is not in [0, 1]")]
    IntensityOutOfRange { row: usize, col: usize },
    #[error("metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnits {
    Mm,
    Cm,
    M,
}

impl DepthUnits {
    pub fn to_mm(self) -> f64 {
        match self {
            DepthUnits::Mm => 1.0,
            DepthUnits::Cm => 10.0,
            DepthUnits::M => 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSign {
    /// Larger z is nearer the camera (the internal convention).
    CloserIsLarger,
    CloserIsSmaller,
}

/// Sidecar metadata (`<stem>.meta.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapMeta {
    pub width: usize,
    pub height: usize,
    pub depth_units: DepthUnits,
    pub depth_sign: DepthSign,
    /// Pixel pitch in millimetres.
    pub camera_scale: f64,
    /// `(col, row)` of the optical axis; defaults to the raster centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point: Option<[f64; 2]>,
}

impl MapMeta {
    /// Canonical metadata: millimetres, closer is larger.
    pub fn canonical(width: usize, height: usize, camera_scale: f64) -> Self {
        Self {
            width,
            height,
            depth_units: DepthUnits::Mm,
            depth_sign: DepthSign::CloserIsLarger,
            camera_scale,
            principal_point: None,
        }
    }

    pub fn principal_point(&self) -> [f64; 2] {
        self.principal_point.unwrap_or([self.width as f64 / 2.0, self.height as f64 / 2.0])
    }
}

/// Aligned per-pixel rasters of one sample, in millimetres with larger depth
/// nearer the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub intensity: Raster,
    pub depth: Raster,
    pub xyz: Raster,
    pub correspondence: Raster,
    mask: Vec<bool>,
    meta: MapMeta,
}

impl MapStack {
    /// Validates the rasters. Without an explicit mask the valid pixels are
    /// those where depth, xyz and correspondence are all finite; any pixel
    /// where the channels disagree is a conflict. An explicit mask must agree
    /// with that pattern exactly.
    pub fn new(
        intensity: Raster,
        depth: Raster,
        xyz: Raster,
        correspondence: Raster,
        mask: Option<Vec<bool>>,
        meta: MapMeta,
    ) -> Result<Self, MapError> {
        let (w, h) = (depth.width(), depth.height());
        let check = |what: &str, r: &Raster, channels: usize| -> Result<(), MapError> {
            if r.width() != w || r.height() != h {
                return Err(MapError::DimensionMismatch {
                    what: what.into(),
                    expected_w: w,
                    expected_h: h,
                    actual_w: r.width(),
                    actual_h: r.height(),
                });
            }
            if r.channels() != channels {
                return Err(MapError::ChannelCount { what: what.into(), expected: channels, actual: r.channels() });
            }
            Ok(())
        };
        check("depth", &depth, 1)?;
        check("intensity", &intensity, 1)?;
        check("xyz", &xyz, 3)?;
        check("correspondence", &correspondence, 3)?;
        if meta.width != w || meta.height != h {
            return Err(MapError::DimensionMismatch {
                what: "metadata".into(),
                expected_w: w,
                expected_h: h,
                actual_w: meta.width,
                actual_h: meta.height,
            });
        }
        if !(meta.camera_scale.is_finite() && meta.camera_scale > 0.0) {
            return Err(MapError::Metadata(format!("camera_scale must be positive, got {}", meta.camera_scale)));
        }
        if let Some(m) = &mask {
            if m.len() != w * h {
                return Err(MapError::Metadata(format!("mask has {} pixels, expected {}", m.len(), w * h)));
            }
        }

        let mut derived = vec![false; w * h];
        let mut conflicts = 0;
        for row in 0..h {
            for col in 0..w {
                let finite = [
                    depth.pixel_is_finite(row, col),
                    xyz.pixel_is_finite(row, col),
                    correspondence.pixel_is_finite(row, col),
                ];
                let nan = [
                    depth.pixel_is_nan(row, col),
                    xyz.pixel_is_nan(row, col),
                    correspondence.pixel_is_nan(row, col),
                ];
                let valid = finite.iter().all(|&f| f);
                let invalid = nan.iter().all(|&n| n);
                let idx = row * w + col;
                derived[idx] = valid;
                if !valid && !invalid {
                    conflicts += 1;
                } else if let Some(m) = &mask {
                    if m[idx] != valid {
                        conflicts += 1;
                    }
                }
            }
        }
        if conflicts > 0 {
            return Err(MapError::MaskChannelConflict { pixels: conflicts });
        }
        for row in 0..h {
            for col in 0..w {
                if !derived[row * w + col] {
                    continue;
                }
                if correspondence.pixel(row, col).iter().any(|v| v.abs() > CORRESPONDENCE_LIMIT) {
                    return Err(MapError::CorrespondenceOutOfRange { row, col });
                }
                let i = intensity.get(row, col, 0);
                if !(0.0..=1.0).contains(&i) {
                    return Err(MapError::IntensityOutOfRange { row, col });
                }
            }
        }
        if !derived.iter().any(|&v| v) {
            log::warn!("map stack has no valid pixels; the lifted face will be empty");
        }
        Ok(Self { intensity, depth, xyz, correspondence, mask: derived, meta })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width() + col]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn meta(&self) -> &MapMeta {
        &self.meta
    }
}

/// File locations for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapPaths {
    pub intensity: PathBuf,
    pub depth: PathBuf,
    pub xyz: PathBuf,
    pub correspondence: PathBuf,
    pub mask: Option<PathBuf>,
    pub meta: PathBuf,
}

impl MapPaths {
    /// Standard layout `<dir>/<stem>.{intensity,depth,xyz,corr}.pfm`,
    /// `<stem>.meta.json` and, when present on disk, `<stem>.mask.pgm`.
    pub fn from_stem(dir: &Path, stem: &str) -> Self {
        let mut paths = Self::for_writing(dir, stem, false);
        let mask = dir.join(format!("{stem}.mask.pgm"));
        paths.mask = mask.exists().then_some(mask);
        paths
    }

    fn for_writing(dir: &Path, stem: &str, with_mask: bool) -> Self {
        let file = |suffix: &str| dir.join(format!("{stem}.{suffix}"));
        Self {
            intensity: file("intensity.pfm"),
            depth: file("depth.pfm"),
            xyz: file("xyz.pfm"),
            correspondence: file("corr.pfm"),
            mask: with_mask.then(|| file("mask.pgm")),
            meta: file("meta.json"),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, MapError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| MapError::Io { path: path.to_path_buf(), source })
}

fn load_pfm(path: &Path) -> Result<Raster, MapError> {
    read_pfm(open(path)?).map_err(|e| decode_error(path, e))
}

fn decode_error(path: &Path, e: DecodeError) -> MapError {
    match e {
        DecodeError::Io(source) => MapError::Io { path: path.to_path_buf(), source },
        DecodeError::Header(reason) => MapError::MalformedHeader { path: path.to_path_buf(), reason },
    }
}

pub fn load_meta(path: &Path) -> Result<MapMeta, MapError> {
    serde_json::from_reader(open(path)?).map_err(|e| MapError::Metadata(format!("{}: {e}", path.display())))
}

/// Loads and validates one sample, converting depth and xyz to millimetres
/// with larger depth nearer the camera.
pub fn load_map_stack(paths: &MapPaths) -> Result<MapStack, MapError> {
    let meta = load_meta(&paths.meta)?;
    let intensity = load_pfm(&paths.intensity)?;
    let mut depth = load_pfm(&paths.depth)?;
    let mut xyz = load_pfm(&paths.xyz)?;
    let correspondence = load_pfm(&paths.correspondence)?;
    let mask = match &paths.mask {
        Some(path) => {
            let (w, h, m) = read_pgm_mask(open(path)?).map_err(|e| decode_error(path, e))?;
            if w != depth.width() || h != depth.height() {
                return Err(MapError::DimensionMismatch {
                    what: "mask".into(),
                    expected_w: depth.width(),
                    expected_h: depth.height(),
                    actual_w: w,
                    actual_h: h,
                });
            }
            Some(m)
        }
        None => None,
    };

    let unit = meta.depth_units.to_mm();
    let flip = if meta.depth_sign == DepthSign::CloserIsSmaller { -1.0 } else { 1.0 };
    for v in depth.data_mut() {
        *v *= unit * flip;
    }
    if xyz.channels() == 3 {
        for px in xyz.data_mut().chunks_exact_mut(3) {
            px[0] *= unit;
            px[1] *= unit;
            px[2] *= unit * flip;
        }
    }
    let canonical = MapMeta { depth_units: DepthUnits::Mm, depth_sign: DepthSign::CloserIsLarger, ..meta };
    MapStack::new(intensity, depth, xyz, correspondence, mask, canonical)
}

/// Writes a sample in the standard layout (canonical units). The mask file
/// is written only when `with_mask` is set.
pub fn save_map_stack(stack: &MapStack, dir: &Path, stem: &str, with_mask: bool) -> Result<MapPaths, MapError> {
    let paths = MapPaths::for_writing(dir, stem, with_mask);
    let create = |path: &Path| {
        File::create(path)
            .map(BufWriter::new)
            .map_err(|source| MapError::Io { path: path.to_path_buf(), source })
    };
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MapError::Io { path, source }
    };
    for (path, raster) in [
        (&paths.intensity, &stack.intensity),
        (&paths.depth, &stack.depth),
        (&paths.xyz, &stack.xyz),
        (&paths.correspondence, &stack.correspondence),
    ] {
        write_pfm(create(path)?, raster).map_err(io_err(path))?;
    }
    if let Some(path) = &paths.mask {
        write_pgm_mask(create(path)?, stack.width(), stack.height(), &stack.mask).map_err(io_err(path))?;
    }
    let meta = serde_json::to_string_pretty(&stack.meta).map_err(|e| MapError::Metadata(e.to_string()))?;
    std::fs::write(&paths.meta, meta + "\n").map_err(io_err(&paths.meta))?;
    Ok(paths)
}

/// Reads a single PFM raster as stored, without unit conversion.
pub fn read_raster(path: &Path) -> Result<Raster, MapError> {
    load_pfm(path)
}

pub fn write_raster(path: &Path, raster: &Raster) -> Result<(), MapError> {
    let file = File::create(path).map_err(|source| MapError::Io { path: path.to_path_buf(), source })?;
    write_pfm(BufWriter::new(file), raster).map_err(|source| MapError::Io { path: path.to_path_buf(), source })
}

/// Reads a binary PGM mask; returns `(width, height, mask)`.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>), MapError> {
    read_pgm_mask(open(path)?).map_err(|e| decode_error(path, e))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), MapError> {
    let file = File::create(path).map_err(|source| MapError::Io { path: path.to_path_buf(), source })?;
    write_pgm_mask(BufWriter::new(file), width, height, mask)
        .map_err(|source| MapError::Io { path: path.to_path_buf(), source })
}
