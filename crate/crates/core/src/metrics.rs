//! Reconstruction quality metrics: MSE, PSNR and SSIM.
//!
//! All fields are min-max normalized before modeling, so the dynamic range
//! defaults to 1.0 throughout.

use crate::error::{Error, Result};
use crate::spectral::{filter_channels, FreqMask};

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricTriple {
    pub fn evaluate(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<Self> {
        let mse = mse(pred, target)?;
        Ok(MetricTriple {
            mse,
            psnr: psnr_from_mse(mse, 1.0),
            ssim: ssim(pred, target, height, width)?,
        })
    }

    /// Like [`MetricTriple::evaluate`], but SSIM is NaN for grids smaller
    /// than its window instead of an error.
    pub fn score(pred: &[f64], target: &[f64], height: usize, width: usize) -> Result<Self> {
        if height >= SSIM_WINDOW && width >= SSIM_WINDOW {
            return MetricTriple::evaluate(pred, target, height, width);
        }
        let mse = mse(pred, target)?;
        Ok(MetricTriple { mse, psnr: psnr_from_mse(mse, 1.0), ssim: f64::NAN })
    }

    /// MSE in percent of the unit range, as tabulated in reports.
    pub fn mse_percent(&self) -> f64 {
        100.0 * self.mse
    }

    pub fn mean(items: &[MetricTriple]) -> Option<MetricTriple> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        Some(MetricTriple {
            mse: items.iter().map(|m| m.mse).sum::<f64>() / n,
            psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
        })
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("metric", &[a.len()], &[b.len()]));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        10.0 * (range * range / mse).log10()
    }
}

pub fn psnr(a: &[f64], b: &[f64], range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::config(format!("PSNR range must be positive, got {range}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, range))
}

/// PSNR of the error restricted to radial frequencies above `cutoff`.
pub fn high_band_psnr(pred: &[f64], target: &[f64], height: usize, width: usize, cutoff: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let mask = FreqMask::high_pass(cutoff, height, width)?;
    let err = filter_channels(&diff, 1, &mask)?;
    let energy = err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64;
    Ok(psnr_from_mse(energy, 1.0))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur over every fully-contained 11×11 window.
fn blur_valid(x: &[f64], height: usize, width: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (height - n + 1, width - n + 1);
    let mut horiz = vec![0.0; height * ow];
    for r in 0..height {
        for c in 0..ow {
            horiz[r * ow + c] = (0..n).map(|j| k[j] * x[r * width + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|j| k[j] * horiz[(r + j) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over an 11×11 Gaussian window (σ = 1.5), dynamic range 1.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    check_pair(a, b)?;
    if a.len() != height * width {
        return Err(Error::shape("ssim", &[a.len()], &[height, width]));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::config(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {height}x{width}"
        )));
    }
    let k = gaussian_window();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = blur_valid(a, height, width, &k);
    let mu_b = blur_valid(b, height, width, &k);
    let e_aa = blur_valid(&sq(a), height, width, &k);
    let e_bb = blur_valid(&sq(b), height, width, &k);
    let e_ab = blur_valid(&ab, height, width, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_sum = (e_aa[i] - ma * ma) + (e_bb[i] - mb * mb);
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_sum + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}
