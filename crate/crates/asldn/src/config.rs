//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors. Command
//! line flags use the same names with `-` in place of `_` and are applied
//! after the file, so they win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asldn_core::optim::AdamConfig;
use asldn_core::phantom::{NoiseModel, TissueModel};
use asldn_core::trainer::TrainConfig;
use asldn_core::{seed, DwanSpec, InitScheme, LossKind};

use crate::error::{Error, IoContext, Result};

/// Which references the network is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Noisy segment means of the same subject (learning from noise).
    Lfn,
    /// The pseudo gold standard.
    Gold,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Lfn => "lfn",
            TrainMode::Gold => "gold",
        }
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lfn" => Ok(TrainMode::Lfn),
            "gold" => Ok(TrainMode::Gold),
            _ => Err("expected lfn or gold".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub dataset: PathBuf,
    pub run_dir: PathBuf,
    /// Weights for `eval`/`describe`; defaults to `<run_dir>/final.aslw`.
    pub weights: Option<PathBuf>,
    pub eval_dir: PathBuf,

    pub subjects: usize,
    pub split: (usize, usize, usize),
    pub height: usize,
    pub width: usize,
    pub gm_cbf: f64,
    pub wm_cbf: f64,
    pub sigma: f64,
    pub outlier_rate: f64,
    pub outlier_scale: f64,
    pub correlation_length: f64,
    pub fwhm_px: f64,

    pub base_channels: usize,
    pub expansion_channels: usize,
    pub blocks: usize,
    pub dilations: Vec<usize>,
    pub init: InitScheme,

    pub mode: TrainMode,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    pub checkpoint_every: usize,
    /// Images are divided by this before entering the network.
    pub intensity_scale: f64,

    /// Method label in evaluation output; defaults to `<mode>_<loss>`.
    pub method: Option<String>,
    pub display_max: f64,
    pub correlation_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = DwanSpec::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::default();
        let tissue = TissueModel::default();
        Self {
            seed: 0,
            dataset: "dataset".into(),
            run_dir: "run".into(),
            weights: None,
            eval_dir: "eval".into(),
            subjects: 35,
            split: (20, 5, 10),
            height: 64,
            width: 64,
            gm_cbf: tissue.gm_cbf,
            wm_cbf: tissue.wm_cbf,
            sigma: NoiseModel::CLINICAL_LIKE_SIGMA,
            outlier_rate: 0.0,
            outlier_scale: 10.0,
            correlation_length: 0.0,
            fwhm_px: 1.5,
            base_channels: spec.base_channels,
            expansion_channels: spec.expansion_channels,
            blocks: spec.blocks_per_pathway,
            dilations: spec.global_dilations,
            init: spec.init,
            mode: TrainMode::Lfn,
            loss: LossKind::L1,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            shuffle: train.shuffle,
            checkpoint_every: train.checkpoint_every,
            intensity_scale: 100.0,
            method: None,
            display_max: 120.0,
            correlation_threshold: asldn_core::metrics::CORRELATION_THRESHOLD,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|p| parse(key, p.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every recognised key, in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "dataset",
        "run_dir",
        "weights",
        "eval_dir",
        "subjects",
        "split",
        "height",
        "width",
        "gm_cbf",
        "wm_cbf",
        "sigma",
        "outlier_rate",
        "outlier_scale",
        "correlation_length",
        "fwhm_px",
        "base_channels",
        "expansion_channels",
        "blocks",
        "dilations",
        "init",
        "mode",
        "loss",
        "batch_size",
        "epochs",
        "learning_rate",
        "beta1",
        "beta2",
        "epsilon",
        "shuffle",
        "checkpoint_every",
        "intensity_scale",
        "method",
        "display_max",
        "correlation_threshold",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "dataset" => self.dataset = v.into(),
            "run_dir" => self.run_dir = v.into(),
            "weights" => self.weights = (!v.is_empty()).then(|| v.into()),
            "eval_dir" => self.eval_dir = v.into(),
            "subjects" => self.subjects = parse(key, v)?,
            "split" => {
                let p = parse_list(key, v)?;
                let [a, b, c] = p[..] else {
                    return Err(Error::BadValue {
                        key: key.into(),
                        value: v.into(),
                        reason: "expected train,val,test".into(),
                    });
                };
                self.split = (a, b, c);
            }
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "gm_cbf" => self.gm_cbf = parse(key, v)?,
            "wm_cbf" => self.wm_cbf = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "outlier_rate" => self.outlier_rate = parse(key, v)?,
            "outlier_scale" => self.outlier_scale = parse(key, v)?,
            "correlation_length" => self.correlation_length = parse(key, v)?,
            "fwhm_px" => self.fwhm_px = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "expansion_channels" => self.expansion_channels = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "dilations" => self.dilations = parse_list(key, v)?,
            "init" => self.init = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "loss" => self.loss = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "shuffle" => self.shuffle = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "intensity_scale" => self.intensity_scale = parse(key, v)?,
            "method" => self.method = (!v.is_empty()).then(|| v.into()),
            "display_max" => self.display_max = parse(key, v)?,
            "correlation_threshold" => self.correlation_threshold = parse(key, v)?,
            _ => {
                return Err(Error::UnknownKey {
                    line: 0,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Path| p.display().to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "dataset" => path(&self.dataset),
            "run_dir" => path(&self.run_dir),
            "weights" => self.weights.as_deref().map(path).unwrap_or_default(),
            "eval_dir" => path(&self.eval_dir),
            "subjects" => self.subjects.to_string(),
            "split" => join(&[self.split.0, self.split.1, self.split.2]),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "gm_cbf" => self.gm_cbf.to_string(),
            "wm_cbf" => self.wm_cbf.to_string(),
            "sigma" => self.sigma.to_string(),
            "outlier_rate" => self.outlier_rate.to_string(),
            "outlier_scale" => self.outlier_scale.to_string(),
            "correlation_length" => self.correlation_length.to_string(),
            "fwhm_px" => self.fwhm_px.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "expansion_channels" => self.expansion_channels.to_string(),
            "blocks" => self.blocks.to_string(),
            "dilations" => join(&self.dilations),
            "init" => self.init.name().into(),
            "mode" => self.mode.name().into(),
            "loss" => self.loss.name().into(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "shuffle" => self.shuffle.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "intensity_scale" => self.intensity_scale.to_string(),
            "method" => self.method.clone().unwrap_or_default(),
            "display_max" => self.display_max.to_string(),
            "correlation_threshold" => self.correlation_threshold.to_string(),
            _ => return None,
        })
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::ConfigSyntax { line: i + 1 });
            };
            self.set(k.trim(), v).map_err(|e| match e {
                Error::UnknownKey { key, .. } => Error::UnknownKey { line: i + 1, key },
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path).at(path)?)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn weights_path(&self) -> PathBuf {
        self.weights.clone().unwrap_or_else(|| self.run_dir.join("final.aslw"))
    }

    pub fn method_name(&self) -> String {
        self.method
            .clone()
            .unwrap_or_else(|| format!("{}_{}", self.mode.name(), self.loss.name()))
    }

    pub fn dwan_spec(&self) -> DwanSpec {
        DwanSpec {
            base_channels: self.base_channels,
            expansion_channels: self.expansion_channels,
            blocks_per_pathway: self.blocks,
            global_dilations: self.dilations.clone(),
            init: self.init,
            ..DwanSpec::default()
        }
    }

    pub fn tissue(&self) -> TissueModel {
        TissueModel {
            gm_cbf: self.gm_cbf,
            wm_cbf: self.wm_cbf,
            ..TissueModel::default()
        }
    }

    /// Noise model for the subject whose seed is `subject_seed`.
    pub fn noise(&self, subject_seed: u64) -> NoiseModel {
        NoiseModel {
            gaussian_sigma: self.sigma,
            outlier_rate: self.outlier_rate,
            outlier_scale: self.outlier_scale,
            correlation_length: self.correlation_length,
            seed: subject_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: seed::derive(self.seed, "train", 0),
            shuffle: self.shuffle,
            checkpoint_every: self.checkpoint_every,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
        }
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, "network", 0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::BadValue {
                key: key.into(),
                value: self.get(key).unwrap_or_default(),
                reason: reason.into(),
            })
        };
        let (tr, va, te) = self.split;
        if tr + va + te != self.subjects {
            return bad("split", "train + val + test must equal subjects");
        }
        if !(self.intensity_scale > 0.0) {
            return bad("intensity_scale", "must be positive");
        }
        if !(self.fwhm_px > 0.0) {
            return bad("fwhm_px", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        self.dwan_spec().validate()?;
        self.noise(0).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("split", "3,1,2").unwrap();
        c.set("subjects", "6").unwrap();
        c.set("weights", "w.aslw").unwrap();
        c.set("loss", "l2").unwrap();
        let back = RunConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = RunConfig::parse_text("# c\nseed = 3\nsigmaa = 4\n").unwrap_err();
        assert!(matches!(e, Error::UnknownKey { line: 3, ref key } if key == "sigmaa"));
        assert!(matches!(RunConfig::parse_text("seed 3"), Err(Error::ConfigSyntax { line: 1 })));
        assert!(matches!(RunConfig::parse_text("epochs = x"), Err(Error::BadValue { .. })));
    }

    #[test]
    fn every_key_is_settable_and_readable() {
        let c = RunConfig::default();
        for k in RunConfig::KEYS {
            let mut d = c.clone();
            d.set(k, &c.get(k).unwrap()).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }
}
