//! Layered pipeline configuration: embedded defaults, then an optional JSON
//! file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use facegeom_core::evaluation::EvalConfig;
use facegeom_core::refine::RefineConfig;
use facegeom_core::{RansacConfig, RegistrationConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// The shipped defaults; every value the pipeline uses is listed here.
pub const DEFAULTS_JSON: &str = include_str!("../defaults.json");

/// How the template is placed before registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitMode {
    /// RANSAC affine fit on embedding-space matches.
    Ransac,
    Identity,
    /// JSON file with three rows `[a b c t]`.
    File(PathBuf),
}

impl FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "" => Err("empty init mode".into()),
            "ransac" => Ok(Self::Ransac),
            "identity" => Ok(Self::Identity),
            path => Ok(Self::File(PathBuf::from(path))),
        }
    }
}

impl TryFrom<String> for InitMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<InitMode> for String {
    fn from(m: InitMode) -> Self {
        m.to_string()
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ransac => f.write_str("ransac"),
            Self::Identity => f.write_str("identity"),
            Self::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Template mesh (PLY with `ex, ey, ez`).
    pub template: Option<PathBuf>,
    /// Directory holding the map files.
    pub maps: Option<PathBuf>,
    /// File stem of the maps inside `maps`.
    pub stem: String,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random stage.
    pub seed: u64,
    pub verbosity: u8,
    pub init: InitMode,
    pub paths: PathsConfig,
    pub registration: RegistrationConfig,
    pub refine: RefineConfig,
    pub ransac: RansacConfig,
    pub evaluation: EvalConfig,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn defaults() -> Self {
        serde_json::from_str(DEFAULTS_JSON).expect("embedded defaults parse")
    }

    /// Defaults overlaid with the JSON file at `path`. Relative paths in the
    /// file are taken relative to the file's directory.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut value: Value = serde_json::from_str(DEFAULTS_JSON).expect("embedded defaults parse");
        let Some(path) = path else {
            return Ok(Self::defaults());
        };
        let read = || -> anyhow::Result<Self> {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            for stage in ["ransac", "evaluation"] {
                if file.get(stage).and_then(|s| s.get("seed")).is_some() {
                    bail!("{}: `{stage}.seed` is not accepted; set the top-level `seed`", path.display());
                }
            }
            merge(&mut value, file);
            let mut cfg: Self = serde_json::from_value(value).with_context(|| format!("in {}", path.display()))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            resolve(dir, &mut cfg.paths.template);
            resolve(dir, &mut cfg.paths.maps);
            resolve(dir, &mut cfg.paths.output);
            if let InitMode::File(p) = &cfg.init {
                if p.is_relative() {
                    cfg.init = InitMode::File(dir.join(p));
                }
            }
            Ok(cfg)
        };
        read().map_err(|e| CliError::input("config", e))
    }

    /// Propagates the seed and checks every stage configuration.
    pub fn finalize(mut self) -> CliResult<Self> {
        self.ransac.seed = self.seed;
        self.evaluation.seed = self.seed;
        let check = || -> anyhow::Result<()> {
            self.registration.validate()?;
            self.refine.validate()?;
            self.ransac.validate()?;
            self.evaluation.validate()?;
            if self.paths.stem.is_empty() {
                return Err(anyhow!("paths.stem must not be empty"));
            }
            Ok(())
        };
        check().map_err(|e| CliError::input("config", e))?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_defaults_match_library_defaults() {
        let d = PipelineConfig::defaults();
        assert_eq!(d.registration, RegistrationConfig::default());
        assert_eq!(d.refine, RefineConfig::default());
        assert_eq!(d.ransac, RansacConfig::default());
        assert_eq!(d.evaluation, EvalConfig::default());
        assert_eq!(d.seed, 0);
        assert_eq!(d.init, InitMode::Ransac);
    }

    #[test]
    fn file_overrides_nested_keys_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 9, "registration": {"pair_diff_switch": 0}, "paths": {"maps": "in"}}"#).unwrap();
        let cfg = PipelineConfig::load(Some(&path)).unwrap().finalize().unwrap();
        assert_eq!(cfg.registration.pair_diff_switch, 0);
        assert_eq!(cfg.registration.alpha_memb_init, 1e8);
        assert_eq!(cfg.ransac.seed, 9);
        assert_eq!(cfg.paths.maps, Some(dir.path().join("in")));
        assert_eq!(cfg.paths.stem, "scene");
    }

    #[test]
    fn bad_files_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        for text in [r#"{"registration": {"alpha": 1}}"#, r#"{"ransac": {"seed": 1}}"#, "{", r#"{"refine": {"dt": -1}}"#] {
            std::fs::write(&path, text).unwrap();
            let err = PipelineConfig::load(Some(&path)).and_then(PipelineConfig::finalize).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
        assert_eq!(PipelineConfig::load(Some(&dir.path().join("missing.json"))).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn init_mode_strings() {
        assert_eq!("ransac".parse::<InitMode>().unwrap(), InitMode::Ransac);
        assert_eq!("identity".parse::<InitMode>().unwrap(), InitMode::Identity);
        assert_eq!("t.json".parse::<InitMode>().unwrap(), InitMode::File("t.json".into()));
        assert_eq!(InitMode::File("a/b.json".into()).to_string(), "a/b.json");
    }
}
