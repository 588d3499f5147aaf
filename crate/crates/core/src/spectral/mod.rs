//! Two-dimensional Fourier transforms, ideal radial masks and the Fourier
//! filtering activation.
//!
//! Frequencies are measured radially and normalized so that the corner
//! Nyquist pair `(0.5, 0.5)` cycles/sample sits at `r = 1`:
//!
//! ```text
//! r(u, v) = |(fu, fv)| / |(0.5, 0.5)|,   fu, fv in [-0.5, 0.5]
//! ```
//!
//! so every bin has `r` in `[0, 1]`, a cutoff of `1.0` low-passes everything,
//! and a low-pass/high-pass pair with equal cutoff partitions the spectrum.

mod fft;

use crate::error::{Error, Result};
use fft::Kernel;

/// Largest imaginary residue tolerated when converting an inverse transform
/// back to a real grid.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

const CORNER_NYQUIST: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexGrid {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    pub fn power(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r * r + i * i).collect()
    }
}

/// Separable 2D transform plan for one grid size.
#[derive(Debug, Clone)]
pub struct Plan2d {
    height: usize,
    width: usize,
    rows: Kernel,
    cols: Kernel,
}

impl Plan2d {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "grid dims must be positive");
        Plan2d {
            height,
            width,
            rows: Kernel::new(width),
            cols: Kernel::new(height),
        }
    }

    /// Unnormalized in-place transform of a complex grid.
    pub fn process(&self, grid: &mut ComplexGrid, inverse: bool) {
        assert_eq!((grid.height, grid.width), (self.height, self.width));
        let (h, w) = (self.height, self.width);
        let mut scratch = Vec::new();
        for r in 0..h {
            let span = r * w..(r + 1) * w;
            self.rows.run(
                &mut grid.re[span.clone()],
                &mut grid.im[span],
                &mut scratch,
                inverse,
            );
        }
        if h == 1 {
            return;
        }
        let mut col_re = vec![0.0; h];
        let mut col_im = vec![0.0; h];
        for c in 0..w {
            for r in 0..h {
                col_re[r] = grid.re[r * w + c];
                col_im[r] = grid.im[r * w + c];
            }
            self.cols.run(&mut col_re, &mut col_im, &mut scratch, inverse);
            for r in 0..h {
                grid.re[r * w + c] = col_re[r];
                grid.im[r * w + c] = col_im[r];
            }
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> ComplexGrid {
        assert_eq!(x.len(), self.height * self.width);
        let mut grid = ComplexGrid {
            height: self.height,
            width: self.width,
            re: x.to_vec(),
            im: vec![0.0; x.len()],
        };
        self.process(&mut grid, false);
        grid
    }

    /// Normalized inverse, returning the real part and the largest
    /// imaginary magnitude that was dropped.
    pub fn inverse_real(&self, mut spectrum: ComplexGrid) -> (Vec<f64>, f64) {
        self.process(&mut spectrum, true);
        let scale = 1.0 / (self.height * self.width) as f64;
        let residue = spectrum
            .im
            .iter()
            .fold(0.0f64, |acc, v| acc.max((v * scale).abs()));
        spectrum.re.iter_mut().for_each(|v| *v *= scale);
        (spectrum.re, residue)
    }
}

/// Unnormalized forward 2D DFT of a real row-major grid.
pub fn dft2(x: &[f64], height: usize, width: usize) -> Result<ComplexGrid> {
    check_grid(x.len(), height, width)?;
    Ok(Plan2d::new(height, width).forward_real(x))
}

/// Inverse 2D DFT with `1/(HW)` normalization. Fails if the result is not
/// real to within [`IMAG_RESIDUE_LIMIT`].
pub fn idft2(spectrum: &ComplexGrid) -> Result<Vec<f64>> {
    check_grid(spectrum.re.len(), spectrum.height, spectrum.width)?;
    if spectrum.im.len() != spectrum.re.len() {
        return Err(Error::shape("idft2", &[spectrum.re.len()], &[spectrum.im.len()]));
    }
    let plan = Plan2d::new(spectrum.height, spectrum.width);
    let (out, residue) = plan.inverse_real(spectrum.clone());
    if residue > IMAG_RESIDUE_LIMIT {
        return Err(Error::SymmetryViolation { residue });
    }
    Ok(out)
}

fn check_grid(len: usize, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!("grid dims must be positive, got {height}x{width}")));
    }
    if len != height * width {
        return Err(Error::shape("grid", &[len], &[height, width]));
    }
    Ok(())
}

/// Signed frequency in cycles/sample of DFT bin `k` on an axis of length `n`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Normalized radial frequency of bin `(u, v)`; see the module docs.
pub fn radial_frequency(u: usize, v: usize, height: usize, width: usize) -> f64 {
    let fu = bin_frequency(u, height);
    let fv = bin_frequency(v, width);
    fu.hypot(fv) / CORNER_NYQUIST
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    LowPass,
    HighPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask {
    pub kind: MaskKind,
    pub cutoff: f64,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<f64>,
}

impl FreqMask {
    pub fn low_pass(cutoff: f64, height: usize, width: usize) -> Result<Self> {
        make_mask(MaskKind::LowPass, cutoff, height, width)
    }

    pub fn high_pass(cutoff: f64, height: usize, width: usize) -> Result<Self> {
        make_mask(MaskKind::HighPass, cutoff, height, width)
    }

    pub fn is_all_pass(&self) -> bool {
        self.mask.iter().all(|&m| m == 1.0)
    }

    pub fn passed_bins(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1.0).count()
    }
}

/// Ideal binary radial mask. The DC bin always passes the low-pass mask.
pub fn make_mask(kind: MaskKind, cutoff: f64, height: usize, width: usize) -> Result<FreqMask> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::config(format!("cutoff must lie in (0, 1], got {cutoff}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::config(format!("mask dims must be positive, got {height}x{width}")));
    }
    let mut mask = Vec::with_capacity(height * width);
    for u in 0..height {
        for v in 0..width {
            let low = radial_frequency(u, v, height, width) <= cutoff;
            let pass = match kind {
                MaskKind::LowPass => low,
                MaskKind::HighPass => !low,
            };
            mask.push(if pass { 1.0 } else { 0.0 });
        }
    }
    Ok(FreqMask {
        kind,
        cutoff,
        height,
        width,
        mask,
    })
}

/// Fourier filtering activation: `idft2(dft2(x) · mask)`.
pub fn foren_apply(x: &[f64], mask: &FreqMask) -> Result<Vec<f64>> {
    if x.len() != mask.height * mask.width {
        return Err(Error::shape("foren_apply", &[x.len()], &[mask.height, mask.width]));
    }
    filter_channels(x, 1, mask)
}

/// Filters every column of a `[rows*cols, channels]` matrix, treating each
/// column as a `rows × cols` grid laid out row-major.
pub fn filter_channels(x: &[f64], channels: usize, mask: &FreqMask) -> Result<Vec<f64>> {
    let (h, w) = (mask.height, mask.width);
    let cells = h * w;
    if x.len() != cells * channels {
        return Err(Error::shape("filter_channels", &[x.len()], &[cells, channels]));
    }
    if mask.is_all_pass() {
        return Ok(x.to_vec());
    }
    if mask.passed_bins() == 0 {
        return Ok(vec![0.0; x.len()]);
    }
    let plan = Plan2d::new(h, w);
    let mut out = vec![0.0; x.len()];
    let mut grid = ComplexGrid::zeros(h, w);
    for c in 0..channels {
        for i in 0..cells {
            grid.re[i] = x[i * channels + c];
        }
        grid.im.iter_mut().for_each(|v| *v = 0.0);
        plan.process(&mut grid, false);
        for ((re, im), m) in grid.re.iter_mut().zip(grid.im.iter_mut()).zip(&mask.mask) {
            *re *= m;
            *im *= m;
        }
        let (filtered, residue) = plan.inverse_real(std::mem::replace(&mut grid, ComplexGrid::zeros(h, w)));
        if residue > IMAG_RESIDUE_LIMIT {
            return Err(Error::SymmetryViolation { residue });
        }
        for i in 0..cells {
            out[i * channels + c] = filtered[i];
        }
    }
    Ok(out)
}

/// Energy per radial annulus of equal width on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    /// `n_bands + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    /// `Σ |X|² / (HW)` over the bins of each band; bands sum to `Σ x²`.
    pub energy: Vec<f64>,
    pub bins: Vec<usize>,
}

impl BandSpectrum {
    pub fn n_bands(&self) -> usize {
        self.energy.len()
    }

    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// Mean squared magnitude per bin within each band (flat for white noise).
    pub fn mean_power(&self) -> Vec<f64> {
        self.energy
            .iter()
            .zip(&self.bins)
            .map(|(e, &n)| if n == 0 { 0.0 } else { e / n as f64 })
            .collect()
    }

    /// Index of the band containing radius `r`.
    pub fn band_of(&self, r: f64) -> usize {
        band_index(r, self.n_bands())
    }
}

fn band_index(r: f64, n_bands: usize) -> usize {
    ((r * n_bands as f64).floor() as usize).min(n_bands - 1)
}

pub fn band_spectrum(x: &[f64], height: usize, width: usize, n_bands: usize) -> Result<BandSpectrum> {
    if n_bands < 2 {
        return Err(Error::config(format!("need at least 2 bands, got {n_bands}")));
    }
    let spec = dft2(x, height, width)?;
    let norm = 1.0 / (height * width) as f64;
    let mut energy = vec![0.0; n_bands];
    let mut bins = vec![0usize; n_bands];
    for u in 0..height {
        for v in 0..width {
            let i = u * width + v;
            let b = band_index(radial_frequency(u, v, height, width), n_bands);
            energy[b] += (spec.re[i] * spec.re[i] + spec.im[i] * spec.im[i]) * norm;
            bins[b] += 1;
        }
    }
    let edges = (0..=n_bands).map(|i| i as f64 / n_bands as f64).collect();
    Ok(BandSpectrum { edges, energy, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let (h, w, c) = (4, 8, 2.5);
        let spec = dft2(&vec![c; h * w], h, w).unwrap();
        assert!((spec.re[0] - c * (h * w) as f64).abs() < 1e-12);
        for i in 1..h * w {
            assert!(spec.re[i].abs() < 1e-12 && spec.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn single_tone_lands_in_plus_minus_one_bins() {
        let n = 8;
        let x: Vec<f64> = (0..n * n)
            .map(|i| (2.0 * std::f64::consts::PI * (i % n) as f64 / n as f64).cos())
            .collect();
        let p = dft2(&x, n, n).unwrap().power();
        for (i, e) in p.iter().enumerate() {
            let (u, v) = (i / n, i % n);
            if u == 0 && (v == 1 || v == n - 1) {
                assert!(*e > 1.0);
            } else {
                assert!(*e < 1e-18, "bin ({u},{v}) has {e}");
            }
        }
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let out = idft2(&ComplexGrid::zeros(4, 4)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_on_non_power_of_two() {
        let (h, w) = (6, 10);
        let x = random_grid(h, w, 3);
        let back = idft2(&dft2(&x, h, w).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_spectrum_is_rejected() {
        let mut spec = ComplexGrid::zeros(4, 4);
        spec.im[1] = 3.0;
        assert!(matches!(idft2(&spec), Err(Error::SymmetryViolation { .. })));
    }

    #[test]
    fn mask_cutoff_edges() {
        let all = FreqMask::low_pass(1.0, 16, 16).unwrap();
        assert!(all.is_all_pass());
        let none = FreqMask::high_pass(1.0, 16, 16).unwrap();
        assert_eq!(none.passed_bins(), 0);
        assert!(make_mask(MaskKind::LowPass, 0.0, 4, 4).is_err());
        assert!(make_mask(MaskKind::LowPass, 1.01, 4, 4).is_err());
        let tiny = FreqMask::low_pass(0.01, 16, 16).unwrap();
        assert_eq!(tiny.mask[0], 1.0);
        assert_eq!(tiny.passed_bins(), 1);
    }

    #[test]
    fn mask_bins_at_point_three_on_16x16() {
        // r = |(0, k/16)| / |(0.5, 0.5)| = k * sqrt(2) / 16
        let low = FreqMask::low_pass(0.3, 16, 16).unwrap();
        let high = FreqMask::high_pass(0.3, 16, 16).unwrap();
        let r1 = radial_frequency(0, 1, 16, 16);
        let r3 = radial_frequency(0, 3, 16, 16);
        let r4 = radial_frequency(0, 4, 16, 16);
        assert!((r1 - 0.088_388_347_648_318_44).abs() < 1e-15);
        assert!((r3 - 0.265_165_042_944_955_3).abs() < 1e-15);
        assert!((r4 - 0.353_553_390_593_273_8).abs() < 1e-15);
        assert_eq!((low.mask[1], high.mask[1]), (1.0, 0.0));
        assert_eq!((low.mask[3], high.mask[3]), (1.0, 0.0));
        assert_eq!((low.mask[4], high.mask[4]), (0.0, 1.0));
        // wrap-around bin 15 is the -1/16 frequency
        assert_eq!(low.mask[15], 1.0);
    }

    #[test]
    fn high_pass_removes_constant() {
        let x = vec![0.7; 64];
        let out = foren_apply(&x, &FreqMask::high_pass(0.3, 8, 8).unwrap()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn filter_dim_mismatch() {
        let mask = FreqMask::low_pass(0.3, 8, 8).unwrap();
        assert!(matches!(foren_apply(&[0.0; 60], &mask), Err(Error::Shape { .. })));
    }

    #[test]
    fn channels_filter_independently() {
        let (h, w, c) = (4, 4, 3);
        let x = random_grid(h * w, c, 11);
        let mask = FreqMask::low_pass(0.4, h, w).unwrap();
        let out = filter_channels(&x, c, &mask).unwrap();
        for ch in 0..c {
            let col: Vec<f64> = (0..h * w).map(|i| x[i * c + ch]).collect();
            let single = foren_apply(&col, &mask).unwrap();
            for i in 0..h * w {
                assert!((single[i] - out[i * c + ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_low_tone_concentrates_in_band_zero() {
        let n = 32;
        let x: Vec<f64> = (0..n * n)
            .map(|i| (2.0 * std::f64::consts::PI * (i / n) as f64 / n as f64).sin())
            .collect();
        let bands = band_spectrum(&x, n, n, 8).unwrap();
        assert!(bands.energy[0] / bands.total() >= 0.99);
    }

    #[test]
    fn adding_constant_changes_only_dc_band() {
        let (h, w) = (16, 16);
        let x = random_grid(h, w, 5);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        let a = band_spectrum(&x, h, w, 8).unwrap();
        let b = band_spectrum(&shifted, h, w, 8).unwrap();
        assert!((a.energy[0] - b.energy[0]).abs() > 1e-3);
        for k in 1..8 {
            assert!((a.energy[k] - b.energy[k]).abs() < 1e-9 * a.energy[k].max(1.0));
        }
        assert!(band_spectrum(&x, h, w, 1).is_err());
    }
}
