//! Command implementations behind the `forenlab` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use forenlab::data::{downsample, load_grid, save_grid, write_pgm, EnsembleSpec};
use forenlab::models::{load_checkpoint, save_checkpoint};
use forenlab::spectral::band_spectrum;
use forenlab::training::{sweep, sweep_csv, train, SweepParam};
use forenlab::{Dataset, Error, GridField, MetricTriple, Model};

pub use config::RunConfig;

pub const MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT: &str = "model.vfr1";
pub const REPORT: &str = "report.csv";
pub const EVAL_HEADER: &str = "file,mse_pct,psnr_db,ssim";
pub const SPECTRUM_HEADER: &str = "band,r_lo,r_hi,target_energy,recon_energy,sq_error";

/// Process exit status for an error chain, keyed on the first library or
/// IO error found in it.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for e in err.chain() {
        if let Some(e) = e.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 2,
                Error::Numerical { .. } => 4,
                Error::Contract(_) => 1,
                _ => 3,
            };
        }
        if e.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

pub struct Manifest {
    pub seed: Option<u64>,
    pub files: Vec<PathBuf>,
}

/// `# seed=N` header, then one path per line relative to the manifest.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seed = None;
    let mut files = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = Some(v.trim().parse().map_err(|_| Error::Format {
                    offset: 0,
                    message: format!("bad seed header `{line}` in {}", path.display()),
                })?);
            }
            continue;
        }
        files.push(base.join(line));
    }
    if files.is_empty() {
        return Err(Error::Config(format!("manifest {} lists no files", path.display())).into());
    }
    Ok(Manifest { seed, files })
}

fn load_fields(manifest: &Path) -> Result<Vec<(PathBuf, GridField)>> {
    read_manifest(manifest)?
        .files
        .into_iter()
        .map(|f| {
            let g = load_grid(&f).with_context(|| format!("loading {}", f.display()))?;
            Ok((f, g))
        })
        .collect()
}

fn same_dims(fields: &[(PathBuf, GridField)]) -> Result<()> {
    let dims = fields[0].1.dims();
    for (p, f) in fields {
        if f.dims() != dims {
            return Err(Error::Shape { op: "dataset", lhs: vec![dims.0, dims.1], rhs: vec![f.height, f.width] })
                .with_context(|| format!("{} does not match the first field", p.display()));
        }
    }
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `count` synthetic fields and a manifest into `cfg.out`.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let spec = EnsembleSpec {
        count: cfg.count,
        height: cfg.height,
        width: cfg.width,
        seed: cfg.train.seed,
        ..EnsembleSpec::standard()
    };
    let fields = spec.generate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut manifest = format!("# seed={}\n", cfg.train.seed);
    for (i, f) in fields.iter().enumerate() {
        let name = format!("field_{i:03}.esmg");
        save_grid(f, cfg.out.join(&name)).with_context(|| format!("writing {name}"))?;
        let _ = writeln!(manifest, "{name}");
    }
    let path = cfg.out.join(MANIFEST);
    write_out(&path, &manifest)?;
    Ok(path)
}

/// Builds the dataset named by `cfg.data` and sizes the model input to it.
fn prepare(cfg: &RunConfig) -> Result<(Dataset, forenlab::ModelConfig)> {
    cfg.validate()?;
    let fields = load_fields(&cfg.data)?;
    same_dims(&fields)?;
    let grids: Vec<GridField> = fields.into_iter().map(|(_, g)| g).collect();
    let mut spec = cfg.dataset.clone();
    spec.scale = cfg.model.scale_factor;
    let data = Dataset::build(&grids, &spec)?;
    let mut model = cfg.model.clone();
    let (h, w) = data.train[0].pair.lr.dims();
    model.lr_height = h;
    model.lr_width = w;
    model.validate()?;
    Ok((data, model))
}

/// Trains one model; writes the checkpoint, the epoch report and the
/// effective config into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let (data, model_cfg) = prepare(cfg)?;
    let mut model = Model::new(model_cfg.clone(), cfg.train.seed)?;
    let report = train(&mut model, &data, &cfg.train)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_out(&cfg.out.join(REPORT), &report.to_csv())?;
    let mut effective = cfg.clone();
    effective.model = model_cfg;
    write_out(&cfg.out.join("config.txt"), &effective.to_text())?;
    if let Some(msg) = report.aborted {
        return Err(Error::Numerical { param: "loss".into(), message: msg }).context("training aborted");
    }
    let ckpt = cfg.out.join(CHECKPOINT);
    save_checkpoint(&model, &ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    Ok(ckpt)
}

/// Which fields of a manifest to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Val,
}

fn select(cfg: &RunConfig, n: usize, split: Split) -> Result<Vec<usize>> {
    Ok(match split {
        Split::All => (0..n).collect(),
        Split::Val => forenlab::data::split_indices(n, cfg.dataset.val_fraction, cfg.dataset.seed)?.1,
    })
}

/// Per-file metric rows plus a final `mean` row.
pub fn metrics_csv(rows: &[(String, MetricTriple)]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for (name, m) in rows {
        let _ = writeln!(s, "{name},{},{},{}", m.mse_percent(), m.psnr, m.ssim);
    }
    let all: Vec<MetricTriple> = rows.iter().map(|(_, m)| *m).collect();
    if let Some(m) = MetricTriple::mean(&all) {
        let _ = writeln!(s, "mean,{},{},{}", m.mse_percent(), m.psnr, m.ssim);
    }
    s
}

fn display_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Scores a checkpoint's reconstructions of the fields in `cfg.data`, or,
/// with `pred`, scores the fields of a second manifest pairwise.
pub fn cmd_eval(cfg: &RunConfig, pred: Option<&Path>, split: Split) -> Result<String> {
    let targets = load_fields(&cfg.data)?;
    let idx = select(cfg, targets.len(), split)?;
    let mut rows = Vec::with_capacity(idx.len());
    match pred {
        Some(pm) => {
            let preds = load_fields(pm)?;
            if preds.len() != targets.len() {
                return Err(Error::Shape { op: "eval", lhs: vec![targets.len()], rhs: vec![preds.len()] })
                    .context("manifests list different numbers of files");
            }
            for i in idx {
                let ((tp, t), (pp, p)) = (&targets[i], &preds[i]);
                if p.dims() != t.dims() {
                    return Err(Error::Shape { op: "eval", lhs: vec![t.height, t.width], rhs: vec![p.height, p.width] })
                        .with_context(|| format!("{} does not match {}", pp.display(), tp.display()));
                }
                rows.push((display_name(tp), MetricTriple::score(&p.values, &t.values, t.height, t.width)?));
            }
        }
        None => {
            let model = load_checkpoint(&cfg.checkpoint)
                .with_context(|| format!("loading {}", cfg.checkpoint.display()))?;
            for i in idx {
                let (tp, t) = &targets[i];
                let sr = reconstruct(&model, t, cfg).with_context(|| format!("evaluating {}", tp.display()))?;
                rows.push((display_name(tp), MetricTriple::score(&sr.values, &t.values, t.height, t.width)?));
            }
        }
    }
    Ok(metrics_csv(&rows))
}

/// Super-resolves `lr` with `model`, keeping the input's normalization.
pub fn super_resolve(model: &Model, lr: &GridField) -> Result<GridField> {
    let c = model.config();
    if lr.dims() != (c.lr_height, c.lr_width) {
        return Err(Error::Shape { op: "infer", lhs: vec![c.lr_height, c.lr_width], rhs: vec![lr.height, lr.width] })
            .context("input does not match the checkpoint's LR dims");
    }
    let (h, w) = c.hr_dims();
    Ok(GridField::with_range(h, w, model.predict(&lr.values)?, lr.tag, lr.norm_min, lr.norm_max)?)
}

fn reconstruct(model: &Model, hr: &GridField, cfg: &RunConfig) -> Result<GridField> {
    let lr = downsample(hr, model.config().scale_factor, cfg.dataset.resample)?;
    super_resolve(model, &lr)
}

pub struct InferArgs<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    /// Treat the input as HR and downsample it first.
    pub from_hr: bool,
    pub pgm: Option<&'a Path>,
}

pub fn cmd_infer(cfg: &RunConfig, args: &InferArgs) -> Result<GridField> {
    let model = load_checkpoint(&cfg.checkpoint).with_context(|| format!("loading {}", cfg.checkpoint.display()))?;
    let input = load_grid(args.input).with_context(|| format!("loading {}", args.input.display()))?;
    let sr = if args.from_hr {
        reconstruct(&model, &input, cfg)?
    } else {
        super_resolve(&model, &input)?
    };
    save_grid(&sr, args.output).with_context(|| format!("writing {}", args.output.display()))?;
    if let Some(p) = args.pgm {
        write_pgm(&sr, p, 0.0, 1.0).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(sr)
}

/// Radial band energies of a target field and a reconstruction of it. The
/// reconstruction is a second grid or the checkpoint's output on the
/// downsampled target; with neither, the target is compared with itself.
pub fn cmd_spectrum(cfg: &RunConfig, target: &Path, recon: Option<&Path>, use_model: bool, bands: usize) -> Result<String> {
    let t = load_grid(target).with_context(|| format!("loading {}", target.display()))?;
    let r = match (recon, use_model) {
        (Some(p), _) => load_grid(p).with_context(|| format!("loading {}", p.display()))?,
        (None, true) => {
            let model =
                load_checkpoint(&cfg.checkpoint).with_context(|| format!("loading {}", cfg.checkpoint.display()))?;
            reconstruct(&model, &t, cfg)?
        }
        (None, false) => t.clone(),
    };
    if r.dims() != t.dims() {
        return Err(Error::Shape { op: "spectrum", lhs: vec![t.height, t.width], rhs: vec![r.height, r.width] }.into());
    }
    let (h, w) = t.dims();
    let diff: Vec<f64> = r.values.iter().zip(&t.values).map(|(a, b)| a - b).collect();
    let st = band_spectrum(&t.values, h, w, bands)?;
    let sr = band_spectrum(&r.values, h, w, bands)?;
    let sd = band_spectrum(&diff, h, w, bands)?;
    let mut s = format!("{SPECTRUM_HEADER}\n");
    for b in 0..bands {
        let _ = writeln!(
            s,
            "{b},{},{},{},{},{}",
            st.edges[b], st.edges[b + 1], st.energy[b], sr.energy[b], sd.energy[b]
        );
    }
    Ok(s)
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad sweep value `{v}`")).into())
        })
        .collect()
}

pub fn cmd_sweep(cfg: &RunConfig, param: &str, values: &[f64]) -> Result<String> {
    let param = SweepParam::parse(param)?;
    let (data, model_cfg) = prepare(cfg)?;
    let rows = sweep(param, values, &model_cfg, &data, &cfg.train, cfg.train.seed, cfg.workers)?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("{}={}: {e}", param.name(), r.value);
        }
    }
    Ok(sweep_csv(param, &rows))
}
