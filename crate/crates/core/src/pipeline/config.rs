//! Experiment configuration and its flat `key = value` file format.
//!
//! Blank lines and everything after `#` are ignored. Every key has a
//! default; unknown keys are rejected. Lists are comma separated.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{DEFAULT_ENSEMBLE_SIZE, DEFAULT_MC_PASSES};
use crate::error::{Error, Result};
use crate::metrics::{default_t_grid, validate_t_grid, DEFAULT_PATCH};
use crate::qipf::{Normalization, DEFAULT_MODES, MAX_HERMITE_ORDER};
use crate::toymodel::{SceneConfig, TrainConfig};

/// Which samples share one density field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One field per pixel location, built from that location across training frames.
    #[default]
    Pixel,
    /// One field per ground-truth class, built from all training pixels of that class.
    Class,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "class" => Ok(Self::Class),
            other => Err(Error::InvalidConfig(format!(
                "unknown granularity `{other}` (expected pixel or class)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QipfSettings {
    pub modes: usize,
    /// Multiplier on the Silverman bandwidth when cross-validation is off.
    pub silverman_factor: f64,
    pub silverman_cv: bool,
    pub silverman_grid: Vec<f64>,
    pub n_max: usize,
    pub normalization: Normalization,
    pub granularity: Granularity,
    pub whiten: bool,
}

impl Default for QipfSettings {
    fn default() -> Self {
        Self {
            modes: DEFAULT_MODES,
            silverman_factor: 1.0,
            silverman_cv: true,
            silverman_grid: vec![0.5, 1.0, 5.0, 10.0, 30.0, 50.0, 100.0],
            n_max: 256,
            normalization: Normalization::L2,
            granularity: Granularity::Pixel,
            whiten: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Scene parameters; the `ood` flag is overridden per split.
    pub scene: SceneConfig,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    pub ood_val: bool,
    pub ood_test: bool,
    pub classifier: TrainConfig,
    pub qipf: QipfSettings,
    pub mc_passes: usize,
    pub ensemble_size: usize,
    pub patch: usize,
    pub t_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scene: SceneConfig::default(),
            train_frames: 20,
            val_frames: 5,
            test_frames: 10,
            ood_val: true,
            ood_test: true,
            classifier: TrainConfig::default(),
            qipf: QipfSettings::default(),
            mc_passes: DEFAULT_MC_PASSES,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            patch: DEFAULT_PATCH,
            t_grid: default_t_grid(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "expected a boolean for `{key}`, got `{value}`"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn format_list(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "height" => self.scene.height = parse(key, value)?,
            "width" => self.scene.width = parse(key, value)?,
            "classes" => self.scene.classes = parse(key, value)?,
            "noise" => self.scene.noise = parse(key, value)?,
            "shapes" => self.scene.shapes = parse(key, value)?,
            "train_frames" => self.train_frames = parse(key, value)?,
            "val_frames" => self.val_frames = parse(key, value)?,
            "test_frames" => self.test_frames = parse(key, value)?,
            "ood_val" => self.ood_val = parse_bool(key, value)?,
            "ood_test" => self.ood_test = parse_bool(key, value)?,
            "hidden" => self.classifier.hidden = parse(key, value)?,
            "lr" => self.classifier.lr = parse(key, value)?,
            "epochs" => self.classifier.epochs = parse(key, value)?,
            "batch" => self.classifier.batch = parse(key, value)?,
            "dropout_rate" => self.classifier.dropout_rate = parse(key, value)?,
            "qipf_modes" => self.qipf.modes = parse(key, value)?,
            "silverman_factor" => self.qipf.silverman_factor = parse(key, value)?,
            "silverman_cv" => self.qipf.silverman_cv = parse_bool(key, value)?,
            "silverman_grid" => self.qipf.silverman_grid = parse_list(key, value)?,
            "n_max" => self.qipf.n_max = parse(key, value)?,
            "normalization" => self.qipf.normalization = value.parse()?,
            "granularity" => self.qipf.granularity = value.parse()?,
            "whiten" => self.qipf.whiten = parse_bool(key, value)?,
            "mc_passes" => self.mc_passes = parse(key, value)?,
            "ensemble_size" => self.ensemble_size = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "t_grid" => self.t_grid = parse_list(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        self.scene.validate()?;
        self.classifier.validate()?;
        if self.train_frames < 2 {
            return bad("train_frames must be at least 2");
        }
        if self.val_frames == 0 || self.test_frames == 0 {
            return bad("val_frames and test_frames must be at least 1");
        }
        let q = &self.qipf;
        if q.modes == 0 || q.modes > MAX_HERMITE_ORDER {
            return bad("qipf_modes must lie in 1..=32");
        }
        if !(q.silverman_factor.is_finite() && q.silverman_factor > 0.0) {
            return bad("silverman_factor must be positive");
        }
        if q.silverman_cv && q.silverman_grid.is_empty() {
            return bad("silverman_grid is empty");
        }
        if q.silverman_grid
            .iter()
            .any(|f| !(f.is_finite() && *f > 0.0))
        {
            return bad("silverman_grid factors must be positive");
        }
        if q.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        if self.mc_passes < 2 {
            return bad("mc_passes must be at least 2");
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size must be at least 2");
        }
        if self.patch == 0 {
            return bad("patch must be at least 1");
        }
        validate_t_grid(&self.t_grid)
    }

    /// Renders the configuration in the file format accepted by `parse`.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("write to string");
        kv("seed", self.seed.to_string());
        kv("height", self.scene.height.to_string());
        kv("width", self.scene.width.to_string());
        kv("classes", self.scene.classes.to_string());
        kv("noise", self.scene.noise.to_string());
        kv("shapes", self.scene.shapes.to_string());
        kv("train_frames", self.train_frames.to_string());
        kv("val_frames", self.val_frames.to_string());
        kv("test_frames", self.test_frames.to_string());
        kv("ood_val", self.ood_val.to_string());
        kv("ood_test", self.ood_test.to_string());
        kv("hidden", self.classifier.hidden.to_string());
        kv("lr", self.classifier.lr.to_string());
        kv("epochs", self.classifier.epochs.to_string());
        kv("batch", self.classifier.batch.to_string());
        kv("dropout_rate", self.classifier.dropout_rate.to_string());
        kv("qipf_modes", self.qipf.modes.to_string());
        kv("silverman_factor", self.qipf.silverman_factor.to_string());
        kv("silverman_cv", self.qipf.silverman_cv.to_string());
        kv("silverman_grid", format_list(&self.qipf.silverman_grid));
        kv("n_max", self.qipf.n_max.to_string());
        let norm = match self.qipf.normalization {
            Normalization::L2 => "l2",
            Normalization::Max => "max",
        };
        kv("normalization", norm.to_string());
        let gran = match self.qipf.granularity {
            Granularity::Pixel => "pixel",
            Granularity::Class => "class",
        };
        kv("granularity", gran.to_string());
        kv("whiten", self.qipf.whiten.to_string());
        kv("mc_passes", self.mc_passes.to_string());
        kv("ensemble_size", self.ensemble_size.to_string());
        kv("patch", self.patch.to_string());
        kv("t_grid", format_list(&self.t_grid));
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: ExperimentConfig = "# nothing here\n\n".parse().unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.qipf.modes, 12);
        assert_eq!(cfg.mc_passes, 100);
        assert_eq!(cfg.ensemble_size, 8);
        assert_eq!(cfg.classifier.dropout_rate, 0.1);
    }

    #[test]
    fn parses_values_and_comments() {
        let cfg: ExperimentConfig = "seed = 7  # master\nnoise=0\nsilverman_grid = 1, 2.5\nnormalization = max\ngranularity=class\nwhiten = yes\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.scene.noise, 0.0);
        assert_eq!(cfg.qipf.silverman_grid, vec![1.0, 2.5]);
        assert_eq!(cfg.qipf.normalization, Normalization::Max);
        assert_eq!(cfg.qipf.granularity, Granularity::Class);
        assert!(cfg.qipf.whiten);
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        for text in [
            "sed = 3",
            "seed",
            "seed = -1",
            "mc_passes = 1",
            "t_grid = 0.5, 0.2",
            "silverman_factor = 0",
            "normalization = l1",
            "train_frames = 1",
        ] {
            let err = text.parse::<ExperimentConfig>().unwrap_err();
            assert!(err.is_config_error(), "{text}: {err}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig {
            seed: 99,
            t_grid: vec![0.0, 0.1, 0.7],
            ..ExperimentConfig::default()
        };
        cfg.qipf.normalization = Normalization::Max;
        assert_eq!(
            cfg.to_config_text().parse::<ExperimentConfig>().unwrap(),
            cfg
        );
    }
}
