use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Visir,
    Vifor,
    MlpRelu,
    SirenOnly,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Visir, Arch::Vifor, Arch::MlpRelu, Arch::SirenOnly];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Visir => "visir",
            Arch::Vifor => "vifor",
            Arch::MlpRelu => "mlp_relu",
            Arch::SirenOnly => "siren_only",
        }
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, Arch::Visir | Arch::Vifor)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown arch `{s}` (expected visir, vifor, mlp_relu or siren_only)")))
    }
}

/// Architecture hyperparameters. `lr_height`/`lr_width` fix the token lattice
/// and therefore the size of the positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub omega0: f64,
    pub siren_hidden_layers: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub fusion_alpha: f64,
    pub scale_factor: usize,
    pub alpha_learnable: bool,
    pub foren_in_encoder: bool,
    pub lr_height: usize,
    pub lr_width: usize,
    /// Hidden width of the coordinate-MLP baselines; `None` matches the
    /// parameter count of the ViSIR decoder head.
    pub baseline_width: Option<usize>,
}

/// The alternative sine frequency preset alongside the default of 30.
pub const OMEGA0_PRESET_LOW: f64 = 20.0;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Vifor,
            patch_size: 8,
            embed_dim: 64,
            heads: 4,
            layers: 4,
            omega0: 30.0,
            siren_hidden_layers: 2,
            f_low: 0.3,
            f_high: 0.3,
            fusion_alpha: 0.5,
            scale_factor: 4,
            alpha_learnable: false,
            foren_in_encoder: true,
            lr_height: 16,
            lr_width: 16,
            baseline_width: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "arch",
    "patch_size",
    "embed_dim",
    "heads",
    "layers",
    "omega0",
    "siren_hidden_layers",
    "f_low",
    "f_high",
    "fusion_alpha",
    "scale_factor",
    "alpha_learnable",
    "foren_in_encoder",
    "lr_height",
    "lr_width",
    "baseline_width",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

impl ModelConfig {
    pub fn with_arch(arch: Arch) -> Self {
        ModelConfig { arch, ..ModelConfig::default() }
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.lr_height * self.scale_factor, self.lr_width * self.scale_factor)
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.lr_height / self.patch_size, self.lr_width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.lr_height == 0 || self.lr_width == 0 || self.scale_factor == 0 {
            return fail("lr dims and scale_factor must be positive".into());
        }
        if self.arch.is_transformer() {
            let p = self.patch_size;
            if p == 0 || !self.lr_height.is_multiple_of(p) || !self.lr_width.is_multiple_of(p) {
                return fail(format!(
                    "patch_size {p} must divide the LR input {}x{}",
                    self.lr_height, self.lr_width
                ));
            }
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return fail(format!("omega0 must be positive, got {}", self.omega0));
        }
        if self.siren_hidden_layers == 0 {
            return fail("siren_hidden_layers must be at least 1".into());
        }
        for (name, f) in [("f_low", self.f_low), ("f_high", self.f_high)] {
            if !(f > 0.0 && f <= 1.0) {
                return fail(format!("{name} must be in (0, 1], got {f}"));
            }
        }
        if !(0.0..=1.0).contains(&self.fusion_alpha) {
            return fail(format!("fusion_alpha must be in [0, 1], got {}", self.fusion_alpha));
        }
        if self.baseline_width == Some(0) {
            return fail("baseline_width must be positive".into());
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "arch" => self.arch = value.trim().parse()?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "omega0" => self.omega0 = parse(key, value)?,
            "siren_hidden_layers" => self.siren_hidden_layers = parse(key, value)?,
            "f_low" => self.f_low = parse(key, value)?,
            "f_high" => self.f_high = parse(key, value)?,
            "fusion_alpha" => self.fusion_alpha = parse(key, value)?,
            "scale_factor" => self.scale_factor = parse(key, value)?,
            "alpha_learnable" => self.alpha_learnable = parse(key, value)?,
            "foren_in_encoder" => self.foren_in_encoder = parse(key, value)?,
            "lr_height" => self.lr_height = parse(key, value)?,
            "lr_width" => self.lr_width = parse(key, value)?,
            "baseline_width" => {
                self.baseline_width = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Err(Error::config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "arch" => self.arch.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "heads" => self.heads.to_string(),
            "layers" => self.layers.to_string(),
            "omega0" => self.omega0.to_string(),
            "siren_hidden_layers" => self.siren_hidden_layers.to_string(),
            "f_low" => self.f_low.to_string(),
            "f_high" => self.f_high.to_string(),
            "fusion_alpha" => self.fusion_alpha.to_string(),
            "scale_factor" => self.scale_factor.to_string(),
            "alpha_learnable" => self.alpha_learnable.to_string(),
            "foren_in_encoder" => self.foren_in_encoder.to_string(),
            "lr_height" => self.lr_height.to_string(),
            "lr_width" => self.lr_width.to_string(),
            "baseline_width" => self.baseline_width.map_or("auto".into(), |w| w.to_string()),
            _ => return None,
        })
    }

    /// One `key=value` line per field, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        for arch in Arch::ALL {
            ModelConfig::with_arch(arch).validate().unwrap();
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::with_arch(Arch::MlpRelu);
        cfg.omega0 = 0.1 + 0.2;
        cfg.baseline_width = Some(37);
        cfg.alpha_learnable = true;
        let back = ModelConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.omega0.to_bits(), cfg.omega0.to_bits());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ("heads", "3"),
            ("patch_size", "5"),
            ("fusion_alpha", "1.5"),
            ("f_low", "0"),
            ("f_high", "1.01"),
            ("omega0", "-1"),
            ("siren_hidden_layers", "0"),
        ];
        for (k, v) in bad {
            let mut cfg = ModelConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k}={v} accepted");
        }
        assert!(ModelConfig::default().set("nope", "1").is_err());
        assert!("resnet".parse::<Arch>().is_err());
    }
}
