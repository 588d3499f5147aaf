//! The standard spectral-bias benchmark: the synthetic ensemble, its split,
//! the shared training budget and the two scores every model is judged on.

use crate::data::{Dataset, DatasetSpec, EnsembleSpec};
use crate::error::Result;
use crate::metrics::high_band_psnr;
use crate::models::{Arch, Model, ModelConfig};
use crate::training::{evaluate, train, TrainConfig};

pub const EPOCHS: usize = 300;
/// Budget per cell of the cutoff ablation, which trains nine models.
pub const SWEEP_EPOCHS: usize = 100;
pub const SWEEP_SEEDS: [u64; 3] = [1, 2, 3];
pub const MODEL_SEED: u64 = 1;
/// Transformer patch size on the 16×16 low-resolution input. An 8×8 token
/// lattice; the default of 8 leaves only four tokens.
pub const PATCH_SIZE: usize = 2;

/// Radius of the low-resolution Nyquist corner, `1/(scale·√2)` in the
/// normalized radial units of the masks. Everything above it is detail the
/// input cannot carry.
pub fn high_band_cutoff(scale: usize) -> f64 {
    1.0 / (scale as f64 * std::f64::consts::SQRT_2)
}

pub fn dataset() -> Result<Dataset> {
    let fields = EnsembleSpec::standard().generate()?;
    Dataset::build(&fields, &DatasetSpec::default())
}

/// Default desk configuration of `arch`, sized for the standard dataset.
pub fn model_config(arch: Arch) -> ModelConfig {
    let mut cfg = ModelConfig::with_arch(arch);
    if arch.is_transformer() {
        cfg.patch_size = PATCH_SIZE;
    }
    cfg
}

/// One sample per step, cosine decay from 1e-4.
pub fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 1, ..TrainConfig::default() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub val_psnr: f64,
    /// PSNR of the validation error energy above [`high_band_cutoff`].
    pub high_band_psnr: f64,
    pub params: usize,
}

pub fn score(model: &Model, data: &Dataset) -> Result<Score> {
    let cfg = model.config();
    let (h, w) = cfg.hr_dims();
    let cutoff = high_band_cutoff(cfg.scale_factor);
    let val_psnr = evaluate(model, &data.val)?.map_or(f64::NAN, |m| m.psnr);
    let mut hb = 0.0;
    for s in &data.val {
        let pred = model.predict(&s.pair.lr.values)?;
        hb += high_band_psnr(&pred, &s.pair.hr.values, h, w, cutoff)?;
    }
    let high_band_psnr = if data.val.is_empty() { f64::NAN } else { hb / data.val.len() as f64 };
    Ok(Score { val_psnr, high_band_psnr, params: model.param_count() })
}

/// Trains `cfg` from `seed` with the benchmark budget and scores it.
pub fn run(cfg: ModelConfig, data: &Dataset, epochs: usize, seed: u64) -> Result<Score> {
    let mut model = Model::new(cfg, seed)?;
    let report = train(&mut model, data, &train_config(epochs))?;
    if let Some(msg) = report.aborted {
        return Err(crate::Error::Numerical { param: "loss".into(), message: msg });
    }
    score(&model, data)
}
