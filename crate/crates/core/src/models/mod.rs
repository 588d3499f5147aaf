//! ViSIR, ViFOR and coordinate-MLP baselines on top of [`crate::ndtensor`].
//!
//! Transformer models tokenize the LR field into P×P patches, run a pre-norm
//! encoder, then decode every HR pixel from its normalized coordinates plus
//! the token lattice bilinearly sampled at that position. ViFOR splits the
//! decoder into a low-pass and a high-pass head and fuses them with α.

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, VFR1_MAGIC};
pub use config::{Arch, ModelConfig, CONFIG_KEYS, OMEGA0_PRESET_LOW};

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndtensor::{Graph, RowMix, Tensor, Var};
use crate::spectral::{make_mask, FreqMask, MaskKind};

pub const LN_EPS: f64 = 1e-5;

/// Token features with their patch-lattice arrangement.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence {
    pub tokens: Var,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
}

struct Init {
    rng: ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Init {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(shape, data).expect("init shape"));
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) {
        let n = shape.iter().product();
        self.push(name, Tensor::new(shape, vec![value; n]).expect("init shape"));
    }

    fn push(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.params.push(t.with_grad());
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let b = (1.0 / fan_in as f64).sqrt();
        self.uniform(format!("{prefix}.w"), &[fan_in, fan_out], b);
        self.uniform(format!("{prefix}.b"), &[fan_out], b);
    }

    /// Sine layer after the first: weights scaled down by ω₀ so the
    /// pre-activations stay in the well-conditioned range.
    fn sine_hidden(&mut self, prefix: &str, fan_in: usize, fan_out: usize, omega0: f64) {
        self.uniform(format!("{prefix}.w"), &[fan_in, fan_out], (6.0 / fan_in as f64).sqrt() / omega0);
        self.uniform(format!("{prefix}.b"), &[fan_out], (1.0 / fan_in as f64).sqrt());
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.fill(format!("{prefix}.g"), &[d], 1.0);
        self.fill(format!("{prefix}.b"), &[d], 0.0);
    }

    /// Decoder head: first sine layer on [x, y, sampled features], then
    /// `siren_hidden_layers - 1` further sine layers and a linear readout.
    fn head(&mut self, prefix: &str, cfg: &ModelConfig) {
        let d = cfg.embed_dim;
        // first-layer SIREN init, per input group so coordinates and
        // features each start with unit-scale pre-activations
        self.uniform(format!("{prefix}.wc"), &[2, d], 0.5);
        self.uniform(format!("{prefix}.wf"), &[d, d], 1.0 / d as f64);
        self.uniform(format!("{prefix}.b1"), &[d], (1.0 / (d + 2) as f64).sqrt());
        for i in 1..cfg.siren_hidden_layers {
            self.sine_hidden(&format!("{prefix}.hid{i}"), d, d, cfg.omega0);
        }
        self.linear(&format!("{prefix}.out"), d, 1);
    }
}

/// Parameters in one ViSIR-style decoder head.
pub fn head_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim;
    2 * d + d * d + d + (cfg.siren_hidden_layers - 1) * (d * d + d) + d + 1
}

/// Parameters in a coordinate MLP of the given hidden width.
pub fn baseline_param_count(width: usize, hidden_layers: usize) -> usize {
    3 * width + (hidden_layers - 1) * (width * width + width) + width + 1
}

/// Width whose baseline parameter count is closest to `target`.
pub fn matched_baseline_width(target: usize, hidden_layers: usize) -> usize {
    (1..=4096)
        .min_by_key(|&w| baseline_param_count(w, hidden_layers).abs_diff(target))
        .expect("non-empty range")
}

impl ModelConfig {
    pub fn resolved_baseline_width(&self) -> usize {
        self.baseline_width
            .unwrap_or_else(|| matched_baseline_width(head_param_count(self), self.siren_hidden_layers))
    }

    fn encoder_foren(&self) -> bool {
        self.arch == Arch::Vifor && self.foren_in_encoder
    }
}

/// Closed-form total parameter count for a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.embed_dim;
    match cfg.arch {
        Arch::MlpRelu | Arch::SirenOnly => baseline_param_count(cfg.resolved_baseline_width(), cfg.siren_hidden_layers),
        Arch::Visir | Arch::Vifor => {
            let p2 = cfg.patch_size * cfg.patch_size;
            let (rows, cols) = cfg.token_grid();
            let ff = if cfg.encoder_foren() { 3 * d * d + 2 * d } else { 2 * d * d + 2 * d };
            let block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + ff;
            let heads = if cfg.arch == Arch::Vifor { 2 } else { 1 };
            let alpha = usize::from(cfg.arch == Arch::Vifor && cfg.alpha_learnable);
            p2 * d + d + rows * cols * d + cfg.layers * block + 2 * d + heads * head_param_count(cfg) + alpha
        }
    }
}

struct Ctx<'a> {
    model: &'a Model,
    vars: &'a [Var],
}

impl Ctx<'_> {
    fn p(&self, name: &str) -> Var {
        self.vars[self.model.index[name]]
    }

    fn cfg(&self) -> &ModelConfig {
        &self.model.config
    }

    fn fuse(&self, g: &mut Graph, low: Var, high: Var) -> Result<Var> {
        let cfg = self.cfg();
        if cfg.alpha_learnable {
            let d = g.sub(low, high)?;
            let scaled = g.mul_scalar(d, self.p("alpha"))?;
            g.add(high, scaled)
        } else {
            let a = cfg.fusion_alpha;
            let l = g.scale(low, a);
            let h = g.scale(high, 1.0 - a);
            g.add(l, h)
        }
    }
}

fn filter(g: &mut Graph, x: Var, mask: &Arc<FreqMask>) -> Result<Var> {
    if mask.is_all_pass() {
        return Ok(x);
    }
    g.spectral_filter(x, Arc::clone(mask))
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Rows are flattened P×P patches in row-major lattice order.
pub fn patch_matrix(img: &[f64], height: usize, width: usize, p: usize) -> Result<Vec<f64>> {
    if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
        return Err(Error::config(format!("patch size {p} does not divide {height}x{width}")));
    }
    if img.len() != height * width {
        return Err(Error::shape("patch_matrix", &[img.len()], &[height, width]));
    }
    let (rows, cols) = (height / p, width / p);
    let mut out = Vec::with_capacity(img.len());
    for tr in 0..rows {
        for tc in 0..cols {
            for r in 0..p {
                let start = (tr * p + r) * width + tc * p;
                out.extend_from_slice(&img[start..start + p]);
            }
        }
    }
    Ok(out)
}

/// Normalized pixel-center coordinates `[x, y] ∈ [-1, 1]²`, row-major.
pub fn pixel_coords(height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * height * width);
    for r in 0..height {
        let y = (2 * r + 1) as f64 / height as f64 - 1.0;
        for c in 0..width {
            out.push((2 * c + 1) as f64 / width as f64 - 1.0);
            out.push(y);
        }
    }
    out
}

/// Bilinear interpolation weights from a `rows × cols` lattice of token
/// centers onto an `height × width` pixel grid, clamped at the edges.
pub fn bilinear_mix(rows: usize, cols: usize, height: usize, width: usize) -> RowMix {
    let axis = |i: usize, n_out: usize, n_in: usize| -> (u32, u32, f64) {
        let t = ((i as f64 + 0.5) / n_out as f64 * n_in as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = t.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0 as u32, i1 as u32, t - i0 as f64)
    };
    let mut index = Vec::with_capacity(height * width);
    let mut weight = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fy) = axis(r, height, rows);
        for c in 0..width {
            let (c0, c1, fx) = axis(c, width, cols);
            let cols = cols as u32;
            index.push([r0 * cols + c0, r0 * cols + c1, r1 * cols + c0, r1 * cols + c1]);
            weight.push([(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx]);
        }
    }
    RowMix { input_rows: rows * cols, index, weight }
}

impl Model {
    /// Builds and initializes a model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed), names: Vec::new(), params: Vec::new() };
        let d = config.embed_dim;
        match config.arch {
            Arch::Visir | Arch::Vifor => {
                let p2 = config.patch_size * config.patch_size;
                let (rows, cols) = config.token_grid();
                init.linear("embed", p2, d);
                init.fill("pos".into(), &[rows * cols, d], 0.0);
                for l in 0..config.layers {
                    let pre = format!("blk{l}");
                    init.layer_norm(&format!("{pre}.ln1"), d);
                    let b = (1.0 / d as f64).sqrt();
                    init.uniform(format!("{pre}.attn.wqkv"), &[d, 3 * d], b);
                    init.uniform(format!("{pre}.attn.bqkv"), &[3 * d], b);
                    init.linear(&format!("{pre}.attn.o"), d, d);
                    init.layer_norm(&format!("{pre}.ln2"), d);
                    init.sine_hidden(&format!("{pre}.ff1"), d, d, config.omega0);
                    if config.encoder_foren() {
                        init.uniform(format!("{pre}.ff2.wl"), &[d, d], b);
                        init.uniform(format!("{pre}.ff2.wh"), &[d, d], b);
                        init.uniform(format!("{pre}.ff2.b"), &[d], b);
                    } else {
                        init.linear(&format!("{pre}.ff2"), d, d);
                    }
                }
                init.layer_norm("enc.ln", d);
                if config.arch == Arch::Visir {
                    init.head("head", &config);
                } else {
                    init.head("low", &config);
                    init.head("high", &config);
                    if config.alpha_learnable {
                        init.fill("alpha".into(), &[1], config.fusion_alpha);
                    }
                }
            }
            Arch::MlpRelu | Arch::SirenOnly => {
                let w = config.resolved_baseline_width();
                if config.arch == Arch::SirenOnly {
                    init.uniform("mlp.l0.w".into(), &[2, w], 0.5);
                    init.uniform("mlp.l0.b".into(), &[w], (0.5f64).sqrt());
                    for i in 1..config.siren_hidden_layers {
                        init.sine_hidden(&format!("mlp.hid{i}"), w, w, config.omega0);
                    }
                } else {
                    init.linear("mlp.l0", 2, w);
                    for i in 1..config.siren_hidden_layers {
                        init.linear(&format!("mlp.hid{i}"), w, w);
                    }
                }
                init.linear("mlp.out", w, 1);
            }
        }
        Model::from_parts(config, init.names, init.params)
    }

    /// Assembles a model from named tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_parts(config: ModelConfig, names: Vec<String>, params: Vec<Tensor>) -> Result<Model> {
        if names.len() != params.len() {
            return Err(Error::config("parameter names and tensors differ in number"));
        }
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if index.len() != names.len() {
            return Err(Error::config("duplicate parameter name"));
        }
        let params = params
            .into_iter()
            .map(|p| if p.requires_grad() { p } else { p.with_grad() })
            .collect();
        let model = Model { config, names, params, index };
        let total: usize = model.params.iter().map(Tensor::len).sum();
        if total != param_count(&model.config) {
            return Err(Error::config(format!(
                "parameters hold {total} values but the config implies {}",
                param_count(&model.config)
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on `g`; `trainable` controls gradient tracking.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p)
                } else {
                    g.leaf(Tensor::new(p.shape(), p.data().to_vec()).expect("param shape"))
                }
            })
            .collect()
    }

    /// HR prediction as a `[H·W, 1]` node.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], lr: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        if lr.len() != cfg.lr_height * cfg.lr_width {
            return Err(Error::shape("forward", &[lr.len()], &[cfg.lr_height, cfg.lr_width]));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Contract("forward needs the vars returned by bind".into()));
        }
        let ctx = Ctx { model: self, vars };
        match cfg.arch {
            Arch::Visir | Arch::Vifor => {
                let seq = self.patch_embed(g, vars, lr)?;
                let feats = self.encoder_forward(g, vars, seq)?;
                self.decode(g, &ctx, feats)
            }
            Arch::MlpRelu | Arch::SirenOnly => coord_mlp(g, &ctx),
        }
    }

    /// Runs inference without gradient tracking.
    pub fn predict(&self, lr: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let y = self.forward(&mut g, &vars, lr)?;
        Ok(g.value(y).to_vec())
    }

    pub fn patch_embed(&self, g: &mut Graph, vars: &[Var], lr: &[f64]) -> Result<TokenSequence> {
        let ctx = Ctx { model: self, vars };
        let cfg = &self.config;
        let p = cfg.patch_size;
        let patches = patch_matrix(lr, cfg.lr_height, cfg.lr_width, p)?;
        let (rows, cols) = cfg.token_grid();
        let x = g.constant(&[rows * cols, p * p], patches)?;
        let e = linear(g, x, ctx.p("embed.w"), ctx.p("embed.b"))?;
        let tokens = g.add(e, ctx.p("pos"))?;
        Ok(TokenSequence { tokens, rows, cols })
    }

    pub fn encoder_forward(&self, g: &mut Graph, vars: &[Var], seq: TokenSequence) -> Result<TokenSequence> {
        let ctx = Ctx { model: self, vars };
        let cfg = &self.config;
        let d = cfg.embed_dim;
        if g.shape(seq.tokens) != [seq.rows * seq.cols, d] {
            return Err(Error::shape("encoder", g.shape(seq.tokens), &[seq.rows * seq.cols, d]));
        }
        let masks = if cfg.encoder_foren() {
            Some((
                Arc::new(make_mask(MaskKind::LowPass, cfg.f_low, seq.rows, seq.cols)?),
                Arc::new(make_mask(MaskKind::HighPass, cfg.f_high, seq.rows, seq.cols)?),
            ))
        } else {
            None
        };
        let mut x = seq.tokens;
        for l in 0..cfg.layers {
            let pre = format!("blk{l}");
            let n1 = g.layer_norm(x, ctx.p(&format!("{pre}.ln1.g")), ctx.p(&format!("{pre}.ln1.b")), LN_EPS)?;
            let a = attention(g, &ctx, &pre, n1)?;
            x = g.add(x, a)?;
            let n2 = g.layer_norm(x, ctx.p(&format!("{pre}.ln2.g")), ctx.p(&format!("{pre}.ln2.b")), LN_EPS)?;
            let z = linear(g, n2, ctx.p(&format!("{pre}.ff1.w")), ctx.p(&format!("{pre}.ff1.b")))?;
            let s = g.sin_act(z, cfg.omega0)?;
            let f = match &masks {
                None => linear(g, s, ctx.p(&format!("{pre}.ff2.w")), ctx.p(&format!("{pre}.ff2.b")))?,
                Some((lo, hi)) => {
                    let sl = filter(g, s, lo)?;
                    let sh = g.spectral_filter(s, Arc::clone(hi))?;
                    let yl = g.matmul(sl, ctx.p(&format!("{pre}.ff2.wl")))?;
                    let yh = g.matmul(sh, ctx.p(&format!("{pre}.ff2.wh")))?;
                    let y = ctx.fuse(g, yl, yh)?;
                    g.add_bias(y, ctx.p(&format!("{pre}.ff2.b")))?
                }
            };
            x = g.add(x, f)?;
        }
        let tokens = g.layer_norm(x, ctx.p("enc.ln.g"), ctx.p("enc.ln.b"), LN_EPS)?;
        Ok(TokenSequence { tokens, ..seq })
    }

    fn decode(&self, g: &mut Graph, ctx: &Ctx, feats: TokenSequence) -> Result<Var> {
        let cfg = &self.config;
        let (h, w) = cfg.hr_dims();
        let coords = g.constant(&[h * w, 2], pixel_coords(h, w))?;
        let mix = Arc::new(bilinear_mix(feats.rows, feats.cols, h, w));
        match cfg.arch {
            Arch::Visir => {
                let (proj, b) = head(g, ctx, "head", feats.tokens, coords, &mix)?;
                g.add_bias(proj, b)
            }
            _ => {
                // Filtering every channel of the last activation map and then
                // applying the readout equals filtering the readout itself:
                // both the filter and the readout are linear.
                let lo_mask = Arc::new(make_mask(MaskKind::LowPass, cfg.f_low, h, w)?);
                let hi_mask = Arc::new(make_mask(MaskKind::HighPass, cfg.f_high, h, w)?);
                let (pl, bl) = head(g, ctx, "low", feats.tokens, coords, &mix)?;
                let (ph, bh) = head(g, ctx, "high", feats.tokens, coords, &mix)?;
                let fl = filter(g, pl, &lo_mask)?;
                let low = g.add_bias(fl, bl)?;
                let fh = g.spectral_filter(ph, hi_mask)?;
                let high = g.add_bias(fh, bh)?;
                ctx.fuse(g, low, high)
            }
        }
    }
}

fn attention(g: &mut Graph, ctx: &Ctx, pre: &str, x: Var) -> Result<Var> {
    let cfg = ctx.cfg();
    let (d, heads) = (cfg.embed_dim, cfg.heads);
    let dh = d / heads;
    let qkv = linear(g, x, ctx.p(&format!("{pre}.attn.wqkv")), ctx.p(&format!("{pre}.attn.bqkv")))?;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice(qkv, 1, h * dh, dh)?;
        let k = g.slice(qkv, 1, d + h * dh, dh)?;
        let v = g.slice(qkv, 1, 2 * d + h * dh, dh)?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, inv);
        let p = g.softmax(s, 1)?;
        outs.push(g.matmul(p, v)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, cat, ctx.p(&format!("{pre}.attn.o.w")), ctx.p(&format!("{pre}.attn.o.b")))
}

/// One decoder head; returns the readout before its bias, and the bias.
fn head(
    g: &mut Graph,
    ctx: &Ctx,
    prefix: &str,
    tokens: Var,
    coords: Var,
    mix: &Arc<RowMix>,
) -> Result<(Var, Var)> {
    let cfg = ctx.cfg();
    let tf = g.matmul(tokens, ctx.p(&format!("{prefix}.wf")))?;
    let sampled = g.row_mix(tf, Arc::clone(mix))?;
    let zc = g.matmul(coords, ctx.p(&format!("{prefix}.wc")))?;
    let z = g.add(zc, sampled)?;
    let z = g.add_bias(z, ctx.p(&format!("{prefix}.b1")))?;
    let mut a = g.sin_act(z, cfg.omega0)?;
    for i in 1..cfg.siren_hidden_layers {
        let z = linear(g, a, ctx.p(&format!("{prefix}.hid{i}.w")), ctx.p(&format!("{prefix}.hid{i}.b")))?;
        a = g.sin_act(z, cfg.omega0)?;
    }
    let proj = g.matmul(a, ctx.p(&format!("{prefix}.out.w")))?;
    Ok((proj, ctx.p(&format!("{prefix}.out.b"))))
}

fn coord_mlp(g: &mut Graph, ctx: &Ctx) -> Result<Var> {
    let cfg = ctx.cfg();
    let (h, w) = cfg.hr_dims();
    let coords = g.constant(&[h * w, 2], pixel_coords(h, w))?;
    let siren = cfg.arch == Arch::SirenOnly;
    let act = |g: &mut Graph, z: Var| -> Result<Var> {
        if siren {
            g.sin_act(z, cfg.omega0)
        } else {
            Ok(g.relu(z))
        }
    };
    let z = linear(g, coords, ctx.p("mlp.l0.w"), ctx.p("mlp.l0.b"))?;
    let mut a = act(g, z)?;
    for i in 1..cfg.siren_hidden_layers {
        let z = linear(g, a, ctx.p(&format!("mlp.hid{i}.w")), ctx.p(&format!("mlp.hid{i}.b")))?;
        a = act(g, z)?;
    }
    linear(g, a, ctx.p("mlp.out.w"), ctx.p("mlp.out.b"))
}
