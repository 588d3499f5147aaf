//! Losses, Adam, the cosine schedule, the training loop and sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::MetricTriple;
use crate::models::{Model, ModelConfig};
use crate::ndtensor::{Graph, Tensor, Var};
use crate::spectral::{dft2, ComplexGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1 + self.lambda2 > 0.0) {
            return Err(Error::config(format!(
                "loss weights must be non-negative with a positive sum, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// `Σ_k | |P_k| − |T_k| | / (H·W)` over the unnormalized 2D spectra.
pub fn freq_loss(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("freq_loss", &[pred.len()], &[target.len()]));
    }
    let mag = |s: &ComplexGrid| s.magnitude();
    let p = mag(&dft2(pred, height, width)?);
    let t = mag(&dft2(target, height, width)?);
    Ok(p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / (height * width) as f64)
}

/// The three loss nodes of one prediction.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub mse: Var,
    pub freq: Var,
}

/// `λ₁·MSE + λ₂·FreqLoss` on the graph; `pred` holds `height·width` values.
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    target: &[f64],
    height: usize,
    width: usize,
    w: LossWeights,
) -> Result<LossParts> {
    let shape = g.shape(pred).to_vec();
    if g.value(pred).len() != target.len() || target.len() != height * width {
        return Err(Error::shape("total_loss", &shape, &[height, width]));
    }
    let t = g.constant(&shape, target.to_vec())?;
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let mse = g.mean(sq);
    let freq = g.spectral_l1(pred, target, height, width)?;
    let a = g.scale(mse, w.lambda1);
    let b = g.scale(freq, w.lambda2);
    let total = g.add(a, b)?;
    Ok(LossParts { total, mse, freq })
}

/// Cosine decay from `base_lr` at `t = 0` to `min_lr` at `t = total`;
/// steps past the end stay at `min_lr`.
pub fn cosine_lr(t: usize, total: usize, base_lr: f64, min_lr: f64) -> f64 {
    if total == 0 || t >= total {
        return min_lr;
    }
    if t == 0 {
        return base_lr;
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + phase.cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Adam::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam { beta1, beta2, eps, t: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected update. Non-finite gradients abort before any
    /// parameter is touched, naming the first offending parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], names: &[String], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract("adam: params, grads and state differ in number".into()));
        }
        for (i, (p, gr)) in params.iter().zip(grads).enumerate() {
            if p.len() != gr.len() {
                return Err(Error::shape("adam", p.shape(), &[gr.len()]));
            }
            if let Some(k) = gr.iter().position(|v| !v.is_finite()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::Numerical { param: name, message: format!("gradient entry {k} is {}", gr[k]) });
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                let gk = grads[i][k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *x -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per optimizer step; 0 means the whole training set.
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Record elapsed seconds; off keeps reports byte-reproducible.
    pub wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 0,
            base_lr: 1e-4,
            min_lr: 1e-6,
            weights: LossWeights::default(),
            seed: 7,
            wall_time: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub mse_term: f64,
    pub freq_term: f64,
    pub val_mse: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub const REPORT_HEADER: &str = "epoch,loss,mse_term,freq_term,val_mse,val_psnr,val_ssim,lr,seconds";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Set when training stopped on a numerical failure; `records` then
    /// ends at the last good epoch.
    pub aborted: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch, r.loss, r.mse_term, r.freq_term, r.val_mse, r.val_psnr, r.val_ssim, r.lr, r.seconds
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Mean metrics of `model` over `samples`. SSIM is NaN for HR grids smaller
/// than its window.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Option<MetricTriple>> {
    let mut all = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = model.predict(&s.pair.lr.values)?;
        let (h, w) = s.pair.hr.dims();
        all.push(MetricTriple::score(&pred, &s.pair.hr.values, h, w)?);
    }
    Ok(MetricTriple::mean(&all))
}

struct StepStats {
    loss: f64,
    mse: f64,
    freq: f64,
}

/// Forward + backward of one sample; gradients are added into `acc` scaled
/// by `weight`.
fn accumulate(model: &Model, sample: &Sample, w: LossWeights, weight: f64, acc: &mut [Vec<f64>]) -> Result<StepStats> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let pred = model.forward(&mut g, &vars, &sample.pair.lr.values)?;
    let (h, wd) = sample.pair.hr.dims();
    let parts = total_loss(&mut g, pred, &sample.pair.hr.values, h, wd, w)?;
    let stats = StepStats { loss: g.value(parts.total)[0], mse: g.value(parts.mse)[0], freq: g.value(parts.freq)[0] };
    if !stats.loss.is_finite() {
        return Ok(stats);
    }
    g.backward(parts.total)?;
    for (a, v) in acc.iter_mut().zip(&vars) {
        if let Some(gr) = g.grad(*v) {
            a.iter_mut().zip(gr).for_each(|(x, y)| *x += weight * y);
        }
    }
    Ok(stats)
}

/// Trains `model` in place. Deterministic given the model and `cfg.seed`.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.weights.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if !(cfg.base_lr > 0.0 && cfg.min_lr >= 0.0 && cfg.min_lr <= cfg.base_lr) {
        return Err(Error::config(format!("need 0 <= min_lr <= base_lr and base_lr > 0, got {} and {}", cfg.min_lr, cfg.base_lr)));
    }
    let n = data.train.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params());
    let mut report = TrainReport::default();
    let clock = Instant::now();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut mse, mut freq) = (0.0, 0.0, 0.0);
        let mut lr = cfg.base_lr;
        for chunk in order.chunks(batch) {
            let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = accumulate(model, &data.train[i], cfg.weights, inv, &mut grads)?;
                if !s.loss.is_finite() {
                    report.aborted = Some(format!("loss became {} at epoch {epoch}", s.loss));
                    return Ok(report);
                }
                loss += s.loss;
                mse += s.mse;
                freq += s.freq;
            }
            lr = cosine_lr(step, total_steps, cfg.base_lr, cfg.min_lr);
            let names = model.names().to_vec();
            if let Err(e) = adam.step(model.params_mut(), &grads, &names, lr) {
                if matches!(e, Error::Numerical { .. }) {
                    report.aborted = Some(e.to_string());
                    return Ok(report);
                }
                return Err(e);
            }
            if let Some(a) = model.param_mut("alpha") {
                a.data_mut()[0] = a.data()[0].clamp(0.0, 1.0);
            }
            step += 1;
        }
        let val = evaluate(model, &data.val)?;
        let nan = f64::NAN;
        let v = val.unwrap_or(MetricTriple { mse: nan, psnr: nan, ssim: nan });
        report.records.push(EpochRecord {
            epoch,
            loss: loss / n as f64,
            mse_term: mse / n as f64,
            freq_term: freq / n as f64,
            val_mse: v.mse,
            val_psnr: v.psnr,
            val_ssim: v.ssim,
            lr,
            seconds: if cfg.wall_time { clock.elapsed().as_secs_f64() } else { 0.0 },
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Omega0,
    /// Sets both branch cutoffs.
    Fc,
    /// Number of sine layers in the decoder heads and baselines.
    Layers,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Omega0 => "omega0",
            SweepParam::Fc => "fc",
            SweepParam::Layers => "layers",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "omega0" => Ok(SweepParam::Omega0),
            "fc" | "f_c" => Ok(SweepParam::Fc),
            "layers" => Ok(SweepParam::Layers),
            _ => Err(Error::config(format!("unknown sweep parameter `{s}` (omega0, fc or layers)"))),
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Omega0 => cfg.omega0 = value,
            SweepParam::Fc => {
                cfg.f_low = value;
                cfg.f_high = value;
            }
            SweepParam::Layers => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::config(format!("layers must be a positive integer, got {value}")));
                }
                cfg.siren_hidden_layers = value as usize;
            }
        }
        cfg.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

/// Trains one model per value and reports final validation PSNR. Failing
/// cells are recorded and the sweep moves on. `workers > 1` runs cells on
/// scoped threads; results are identical either way.
pub fn sweep(
    param: SweepParam,
    values: &[f64],
    base: &ModelConfig,
    data: &Dataset,
    train_cfg: &TrainConfig,
    model_seed: u64,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let cell = |value: f64| -> SweepRow {
        let run = || -> Result<f64> {
            let mut cfg = base.clone();
            param.apply(&mut cfg, value)?;
            let mut model = Model::new(cfg, model_seed)?;
            let report = train(&mut model, data, train_cfg)?;
            if let Some(msg) = report.aborted {
                return Err(Error::Numerical { param: param.name().into(), message: msg });
            }
            match report.last() {
                Some(r) => Ok(r.val_psnr),
                None => Ok(evaluate(&model, &data.val)?.map_or(f64::NAN, |m| m.psnr)),
            }
        };
        match run() {
            Ok(psnr) => SweepRow { value, psnr: Some(psnr), error: None },
            Err(e) => SweepRow { value, psnr: None, error: Some(e.to_string()) },
        }
    };
    let workers = workers.clamp(1, values.len());
    if workers == 1 {
        return Ok(values.iter().map(|&v| cell(v)).collect());
    }
    let mut rows: Vec<Option<SweepRow>> = vec![None; values.len()];
    std::thread::scope(|s| {
        let cell = &cell;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..values.len()).step_by(workers).map(|i| (i, cell(values[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                rows[i] = Some(row);
            }
        }
    });
    Ok(rows.into_iter().map(|r| r.expect("every cell ran")).collect())
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = format!("{},psnr\n", param.name());
    for r in rows {
        match r.psnr {
            Some(p) => {
                let _ = writeln!(s, "{},{p}", r.value);
            }
            None => {
                let _ = writeln!(s, "{},NaN", r.value);
            }
        }
    }
    s
}
