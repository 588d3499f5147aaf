//! Synthetic stand-ins for climate fields with controlled spectral content.
//!
//! Sinusoid frequencies are snapped to DFT bins, so every tone is periodic on
//! the grid and its energy lands in exactly one conjugate pair of bins.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GridField, VariableTag};
use crate::error::{Error, Result};
use crate::spectral::radial_frequency;

const LOW_BAND: (f64, f64) = (0.02, 0.2);
const HIGH_BAND: (f64, f64) = (0.5, 0.95);
const BUMPS: usize = 3;
const BUMP_SIGMA: (f64, f64) = (3.0, 6.0);

#[derive(Debug, Clone, Copy)]
struct Tone {
    ku: i64,
    kv: i64,
    phase: f64,
    amp: f64,
}

fn bin_radius(ku: i64, kv: i64, h: usize, w: usize) -> f64 {
    radial_frequency(kv.rem_euclid(h as i64) as usize, ku.rem_euclid(w as i64) as usize, h, w)
}

fn draw_tone(rng: &mut ChaCha8Rng, h: usize, w: usize, band: (f64, f64), amp: f64) -> Result<Tone> {
    for _ in 0..10_000 {
        let r = rng.gen_range(band.0..=band.1);
        let theta = rng.gen_range(0.0..PI);
        let f = r * FRAC_1_SQRT_2;
        let ku = (f * theta.cos() * w as f64).round() as i64;
        let kv = (f * theta.sin() * h as f64).round() as i64;
        let actual = bin_radius(ku, kv, h, w);
        if (ku, kv) != (0, 0) && actual >= band.0 && actual <= band.1 {
            let phase = rng.gen_range(0.0..TAU);
            let amp = amp * rng.gen_range(0.5..1.0);
            return Ok(Tone { ku, kv, phase, amp });
        }
    }
    Err(Error::config(format!("no DFT bin of a {h}x{w} grid lies in radial band {band:?}")))
}

fn add_tones(buf: &mut [f64], h: usize, w: usize, tones: &[Tone], gain: f64) {
    for t in tones {
        for r in 0..h {
            for c in 0..w {
                let arg = TAU * (t.ku as f64 * c as f64 / w as f64 + t.kv as f64 * r as f64 / h as f64);
                buf[r * w + c] += gain * t.amp * (arg + t.phase).cos();
            }
        }
    }
}

/// Distance on a periodic axis, which keeps bumps seamless across edges.
fn wrapped(d: f64, n: usize) -> f64 {
    let d = d.abs() % n as f64;
    d.min(n as f64 - d)
}

fn add_bumps(buf: &mut [f64], h: usize, w: usize, n: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..n {
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let sigma = rng.gen_range(BUMP_SIGMA.0..BUMP_SIGMA.1);
        let amp = rng.gen_range(0.3..0.8) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for r in 0..h {
            for c in 0..w {
                let d2 = wrapped(r as f64 - cy, h).powi(2) + wrapped(c as f64 - cx, w).powi(2);
                buf[r * w + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < 16 || w < 16 {
        return Err(Error::config(format!("synthetic fields need at least 16x16, got {h}x{w}")));
    }
    Ok(())
}

/// Low-band tones (r ≤ 0.2) plus `amp_high`-scaled high-band tones (r ≥ 0.5)
/// plus a few broad Gaussian bumps, min-max normalized.
pub fn synth_field(
    height: usize,
    width: usize,
    n_low: usize,
    n_high: usize,
    amp_high: f64,
    seed: u64,
) -> Result<GridField> {
    check_dims(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = (0..n_low)
        .map(|_| draw_tone(&mut rng, height, width, LOW_BAND, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let high = (0..n_high)
        .map(|_| draw_tone(&mut rng, height, width, HIGH_BAND, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = vec![0.0; height * width];
    add_tones(&mut buf, height, width, &low, 1.0);
    add_tones(&mut buf, height, width, &high, amp_high);
    add_bumps(&mut buf, height, width, BUMPS, &mut rng);
    GridField::normalized(height, width, &buf, VariableTag::Synthetic)
}

/// A family of related fields: each has its own low-band content and bumps,
/// and all share one high-band "terrain" pattern whose amplitude is jittered
/// per field. The shared part is what coordinate networks can learn; the
/// per-field part is only recoverable from the low-resolution input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub n_low: usize,
    pub low_band: (f64, f64),
    pub n_bumps: usize,
    pub n_terrain: usize,
    pub terrain_band: (f64, f64),
    pub terrain_amp: f64,
    pub terrain_jitter: f64,
}

impl EnsembleSpec {
    /// The standard benchmark: 16 fields of 64×64, seed 7. The terrain sits
    /// above the Nyquist limit of the 4× downsampled input, where only a
    /// learned prior can restore it, and within reach of ω₀ = 30 sine layers.
    pub fn standard() -> Self {
        EnsembleSpec {
            count: 16,
            height: 64,
            width: 64,
            seed: 7,
            n_low: 4,
            low_band: (0.02, 0.12),
            n_bumps: 2,
            n_terrain: 6,
            terrain_band: (0.18, 0.30),
            terrain_amp: 0.5,
            terrain_jitter: 0.1,
        }
    }

    pub fn generate(&self) -> Result<Vec<GridField>> {
        check_dims(self.height, self.width)?;
        if self.count == 0 {
            return Err(Error::config("ensemble count must be positive"));
        }
        let (h, w) = (self.height, self.width);
        let mut trng = ChaCha8Rng::seed_from_u64(self.seed);
        trng.set_stream(u64::MAX);
        let terrain = (0..self.n_terrain)
            .map(|_| draw_tone(&mut trng, h, w, self.terrain_band, 1.0))
            .collect::<Result<Vec<_>>>()?;
        (0..self.count)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(j as u64);
                let low = (0..self.n_low)
                    .map(|_| draw_tone(&mut rng, h, w, self.low_band, 1.0))
                    .collect::<Result<Vec<_>>>()?;
                let gain = self.terrain_amp * (1.0 + self.terrain_jitter * rng.gen_range(-1.0..=1.0));
                let mut buf = vec![0.0; h * w];
                add_tones(&mut buf, h, w, &low, 1.0);
                add_bumps(&mut buf, h, w, self.n_bumps, &mut rng);
                add_tones(&mut buf, h, w, &terrain, gain);
                GridField::normalized(h, w, &buf, VariableTag::Synthetic)
            })
            .collect()
    }
}
