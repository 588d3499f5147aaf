//! Run configuration: one flat `key=value` namespace covering the model,
//! loss, data, optimizer, generator and path settings.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use forenlab::data::Resample;
use forenlab::{DatasetMode, DatasetSpec, Error, ModelConfig, Result, TrainConfig};
use forenlab::models::CONFIG_KEYS;

pub const SEED_ENV: &str = "FORENLAB_SEED";

/// Keys beyond the model ones, with their defaults and a one-line summary.
pub const RUN_KEYS: &[(&str, &str, &str)] = &[
    ("epochs", "300", "training epochs"),
    ("batch_size", "0", "samples per optimizer step, 0 = whole training set"),
    ("lr", "0.0001", "initial Adam learning rate"),
    ("min_lr", "0.000001", "final learning rate of the cosine schedule"),
    ("lambda1", "1", "weight of the pixel MSE term"),
    ("lambda2", "0.1", "weight of the spectral magnitude term"),
    ("wall_time", "false", "record elapsed seconds in the report"),
    ("mode", "full_image", "full_image or sub_image (eight tiles per field)"),
    ("val_fraction", "0.25", "share of fields held out for validation"),
    ("resample", "block_mean", "LR synthesis: block_mean or bilinear"),
    ("count", "16", "fields written by gen"),
    ("height", "64", "HR rows written by gen"),
    ("width", "64", "HR columns written by gen"),
    ("seed", "7", "seed for generation, splits, initialization and shuffling"),
    ("workers", "1", "parallel sweep cells"),
    ("data", "data/manifest.txt", "dataset manifest"),
    ("out", "run", "output directory"),
    ("checkpoint", "run/model.vfr1", "checkpoint to read"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub workers: usize,
    pub data: PathBuf,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            count: 0,
            height: 0,
            width: 0,
            workers: 0,
            data: PathBuf::new(),
            out: PathBuf::new(),
            checkpoint: PathBuf::new(),
        };
        for (k, v, _) in RUN_KEYS {
            cfg.set(k, v).expect("defaults parse");
        }
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Defaults, with the seed taken from `FORENLAB_SEED` when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.set("seed", &s)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if CONFIG_KEYS.contains(&key) {
            self.model.set(key, value)?;
            if key == "scale_factor" {
                self.dataset.scale = self.model.scale_factor;
            }
            return Ok(());
        }
        let v = value.trim();
        match key {
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.base_lr = parse(key, v)?,
            "min_lr" => self.train.min_lr = parse(key, v)?,
            "lambda1" => self.train.weights.lambda1 = parse(key, v)?,
            "lambda2" => self.train.weights.lambda2 = parse(key, v)?,
            "wall_time" => self.train.wall_time = parse(key, v)?,
            "mode" => {
                self.dataset.mode = match v {
                    "full_image" => DatasetMode::FullImage,
                    "sub_image" => DatasetMode::SubImage,
                    _ => return Err(Error::Config(format!("mode must be full_image or sub_image, got `{v}`"))),
                }
            }
            "val_fraction" => self.dataset.val_fraction = parse(key, v)?,
            "resample" => {
                self.dataset.resample = match v {
                    "block_mean" => Resample::BlockMean,
                    "bilinear" => Resample::Bilinear,
                    _ => return Err(Error::Config(format!("resample must be block_mean or bilinear, got `{v}`"))),
                }
            }
            "count" => self.count = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "seed" => {
                let s: u64 = parse(key, v)?;
                self.train.seed = s;
                self.dataset.seed = s;
            }
            "workers" => self.workers = parse(key, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.model.get(key) {
            return Some(v);
        }
        Some(match key {
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "lr" => self.train.base_lr.to_string(),
            "min_lr" => self.train.min_lr.to_string(),
            "lambda1" => self.train.weights.lambda1.to_string(),
            "lambda2" => self.train.weights.lambda2.to_string(),
            "wall_time" => self.train.wall_time.to_string(),
            "mode" => match self.dataset.mode {
                DatasetMode::FullImage => "full_image".into(),
                DatasetMode::SubImage => "sub_image".into(),
            },
            "val_fraction" => self.dataset.val_fraction.to_string(),
            "resample" => match self.dataset.resample {
                Resample::BlockMean => "block_mean".into(),
                Resample::Bilinear => "bilinear".into(),
            },
            "count" => self.count.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "seed" => self.train.seed.to_string(),
            "workers" => self.workers.to_string(),
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            "checkpoint" => self.checkpoint.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.weights.validate()?;
        if !(self.dataset.val_fraction > 0.0 && self.dataset.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must be in (0, 1), got {}", self.dataset.val_fraction)));
        }
        if self.count == 0 {
            return Err(Error::Config("count must be positive".into()));
        }
        Ok(())
    }

    pub fn all_keys() -> impl Iterator<Item = &'static str> {
        CONFIG_KEYS.iter().copied().chain(RUN_KEYS.iter().map(|(k, _, _)| *k))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in RunConfig::all_keys() {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("known key"));
        }
        s
    }

}
