//! Gridded scalar fields, resampling, tiling and dataset assembly.

mod io;
mod synth;

pub use io::{decode_grid, encode_grid, load_grid, save_grid, write_pgm, ESMG_MAGIC, ESMG_VERSION};
pub use synth::{synth_field, EnsembleSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariableTag {
    Ts,
    Fsw,
    Flw,
    Synthetic,
}

impl VariableTag {
    pub fn code(self) -> u8 {
        match self {
            VariableTag::Ts => 0,
            VariableTag::Fsw => 1,
            VariableTag::Flw => 2,
            VariableTag::Synthetic => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => VariableTag::Ts,
            1 => VariableTag::Fsw,
            2 => VariableTag::Flw,
            3 => VariableTag::Synthetic,
            _ => return None,
        })
    }
}

/// A single-variable field on a regular grid, row-major.
///
/// `norm_min`/`norm_max` record the raw range captured at normalization so
/// physical values can be recovered; fields built directly in model space
/// carry the identity range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub tag: VariableTag,
    pub norm_min: f64,
    pub norm_max: f64,
}

impl GridField {
    pub fn new(height: usize, width: usize, values: Vec<f64>, tag: VariableTag) -> Result<Self> {
        GridField::with_range(height, width, values, tag, 0.0, 1.0)
    }

    pub fn with_range(
        height: usize,
        width: usize,
        values: Vec<f64>,
        tag: VariableTag,
        norm_min: f64,
        norm_max: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::config(format!("grid dims must be positive, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::shape("grid", &[height, width], &[values.len()]));
        }
        if !(norm_min < norm_max) {
            return Err(Error::config(format!("norm_min {norm_min} must be below norm_max {norm_max}")));
        }
        Ok(GridField { height, width, values, tag, norm_min, norm_max })
    }

    /// Min-max normalizes raw values into `[0, 1]`, remembering the range.
    pub fn normalized(height: usize, width: usize, raw: &[f64], tag: VariableTag) -> Result<Self> {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return Err(Error::config("cannot normalize a constant or empty field"));
        }
        let span = hi - lo;
        let values = raw.iter().map(|v| (v - lo) / span).collect();
        GridField::with_range(height, width, values, tag, lo, hi)
    }

    pub fn denormalized(&self) -> Vec<f64> {
        let span = self.norm_max - self.norm_min;
        self.values.iter().map(|v| v * span + self.norm_min).collect()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    fn like(&self, height: usize, width: usize, values: Vec<f64>) -> GridField {
        GridField { height, width, values, tag: self.tag, norm_min: self.norm_min, norm_max: self.norm_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    #[default]
    BlockMean,
    Bilinear,
}

fn check_divisible(field: &GridField, rows: usize, cols: usize, what: &str) -> Result<()> {
    if rows == 0 || cols == 0 || !field.height.is_multiple_of(rows) || !field.width.is_multiple_of(cols) {
        return Err(Error::config(format!(
            "{what}: {}x{} is not divisible by {rows}x{cols}",
            field.height, field.width
        )));
    }
    Ok(())
}

/// Reduces resolution by an integer factor.
pub fn downsample(hr: &GridField, scale: usize, method: Resample) -> Result<GridField> {
    check_divisible(hr, scale, scale, "downsample")?;
    let (h, w) = (hr.height / scale, hr.width / scale);
    let mut out = vec![0.0; h * w];
    match method {
        Resample::BlockMean => {
            // running mean, so a block of identical values maps back exactly
            for r in 0..h {
                for c in 0..w {
                    let (mut mean, mut k) = (0.0, 0.0);
                    for dr in 0..scale {
                        for &v in &hr.values[(r * scale + dr) * hr.width + c * scale..][..scale] {
                            k += 1.0;
                            mean += (v - mean) / k;
                        }
                    }
                    out[r * w + c] = mean;
                }
            }
        }
        Resample::Bilinear => {
            // sample the HR field at each LR cell center
            let sample = |pos: f64, n: usize| -> (usize, usize, f64) {
                let p = pos.clamp(0.0, (n - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, p - i0 as f64)
            };
            for r in 0..h {
                let (r0, r1, fr) = sample((r as f64 + 0.5) * scale as f64 - 0.5, hr.height);
                for c in 0..w {
                    let (c0, c1, fc) = sample((c as f64 + 0.5) * scale as f64 - 0.5, hr.width);
                    let top = hr.get(r0, c0) * (1.0 - fc) + hr.get(r0, c1) * fc;
                    let bot = hr.get(r1, c0) * (1.0 - fc) + hr.get(r1, c1) * fc;
                    out[r * w + c] = top * (1.0 - fr) + bot * fr;
                }
            }
        }
    }
    Ok(hr.like(h, w, out))
}

pub fn upsample_nearest(lr: &GridField, scale: usize) -> Result<GridField> {
    if scale == 0 {
        return Err(Error::config("scale must be positive"));
    }
    let (h, w) = (lr.height * scale, lr.width * scale);
    let values = (0..h * w).map(|i| lr.get(i / w / scale, i % w / scale)).collect();
    Ok(lr.like(h, w, values))
}

pub const TILE_ROWS: usize = 2;
pub const TILE_COLS: usize = 4;

/// Splits a field into a 2×4 lattice of equal tiles, row-major.
pub fn tile8(field: &GridField) -> Result<Vec<GridField>> {
    check_divisible(field, TILE_ROWS, TILE_COLS, "tile8")?;
    let (th, tw) = (field.height / TILE_ROWS, field.width / TILE_COLS);
    let mut tiles = Vec::with_capacity(TILE_ROWS * TILE_COLS);
    for tr in 0..TILE_ROWS {
        for tc in 0..TILE_COLS {
            let mut values = Vec::with_capacity(th * tw);
            for r in 0..th {
                let start = (tr * th + r) * field.width + tc * tw;
                values.extend_from_slice(&field.values[start..start + tw]);
            }
            tiles.push(field.like(th, tw, values));
        }
    }
    Ok(tiles)
}

pub fn untile8(tiles: &[GridField]) -> Result<GridField> {
    if tiles.len() != TILE_ROWS * TILE_COLS {
        return Err(Error::config(format!("expected 8 tiles, got {}", tiles.len())));
    }
    let (th, tw) = tiles[0].dims();
    if tiles.iter().any(|t| t.dims() != (th, tw)) {
        return Err(Error::config("tiles differ in size"));
    }
    let (h, w) = (th * TILE_ROWS, tw * TILE_COLS);
    let mut values = vec![0.0; h * w];
    for (k, t) in tiles.iter().enumerate() {
        let (tr, tc) = (k / TILE_COLS, k % TILE_COLS);
        for r in 0..th {
            let start = (tr * th + r) * w + tc * tw;
            values[start..start + tw].copy_from_slice(&t.values[r * tw..(r + 1) * tw]);
        }
    }
    Ok(tiles[0].like(h, w, values))
}

/// A ground-truth field and the coarse input derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SRPair {
    pub lr: GridField,
    pub hr: GridField,
    pub scale: usize,
}

impl SRPair {
    pub fn from_hr(hr: GridField, scale: usize, method: Resample) -> Result<Self> {
        let lr = downsample(&hr, scale, method)?;
        Ok(SRPair { lr, hr, scale })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetMode {
    SubImage,
    #[default]
    FullImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub mode: DatasetMode,
    pub val_fraction: f64,
    pub scale: usize,
    pub resample: Resample,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            mode: DatasetMode::FullImage,
            val_fraction: 0.25,
            scale: 4,
            resample: Resample::BlockMean,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index of the source field this sample came from.
    pub source: usize,
    pub tile: Option<usize>,
    pub pair: SRPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Partitions source indices into (train, val), seeded. Whole fields go to
/// one side so tiles of a validation field never leak into training.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config(format!("val_fraction must be in [0,1), got {val_fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    Ok((idx, val))
}

impl Dataset {
    pub fn build(fields: &[GridField], spec: &DatasetSpec) -> Result<Dataset> {
        if fields.is_empty() {
            return Err(Error::config("dataset needs at least one field"));
        }
        let (train_idx, val_idx) = split_indices(fields.len(), spec.val_fraction, spec.seed)?;
        let expand = |ids: &[usize]| -> Result<Vec<Sample>> {
            let mut out = Vec::new();
            for &source in ids {
                match spec.mode {
                    DatasetMode::FullImage => out.push(Sample {
                        source,
                        tile: None,
                        pair: SRPair::from_hr(fields[source].clone(), spec.scale, spec.resample)?,
                    }),
                    DatasetMode::SubImage => {
                        for (k, t) in tile8(&fields[source])?.into_iter().enumerate() {
                            out.push(Sample {
                                source,
                                tile: Some(k),
                                pair: SRPair::from_hr(t, spec.scale, spec.resample)?,
                            });
                        }
                    }
                }
            }
            Ok(out)
        };
        Ok(Dataset { train: expand(&train_idx)?, val: expand(&val_idx)? })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
