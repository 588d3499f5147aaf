//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! `cargo test -p forenlab --test acceptance -- 2 5` runs a subset by
//! number; a word argument selects criteria whose name contains it.

use std::process::ExitCode;
use std::time::Instant;

use forenlab::benchmark::{self, Score};
use forenlab::data::{
    decode_grid, encode_grid, load_grid, save_grid, tile8, untile8, Dataset, DatasetMode, DatasetSpec, EnsembleSpec,
};
use forenlab::metrics::{psnr, psnr_from_mse, ssim};
use forenlab::models::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Arch, Model, ModelConfig};
use forenlab::ndtensor::gradcheck::{self, Selection};
use forenlab::spectral::{dft2, foren_apply, idft2, FreqMask};
use forenlab::training::{cosine_lr, sweep, sweep_csv, total_loss, train, Adam, LossWeights, SweepParam, TrainConfig};
use forenlab::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn gradients() -> Result<Outcome> {
    const H: f64 = 1e-5;
    const LIMIT: f64 = 1e-4;
    const PER_TENSOR: usize = 12;
    let fields = EnsembleSpec::standard().generate()?;
    let data = Dataset::build(&fields[..1], &DatasetSpec { val_fraction: 0.0, ..DatasetSpec::default() })?;
    let pair = &data.train[0].pair;
    let mut pass = true;
    let mut parts = Vec::new();
    for arch in Arch::ALL {
        let cfg = ModelConfig { layers: 2, ..ModelConfig::with_arch(arch) };
        let m = Model::new(cfg, 11)?;
        let (h, w) = m.config().hr_dims();
        let report = gradcheck::check(m.params(), H, Selection::Stride(PER_TENSOR), |g, v| {
            let pred = m.forward(g, v, &pair.lr.values)?;
            Ok(total_loss(g, pred, &pair.hr.values, h, w, LossWeights::default())?.total)
        })?;
        let covered = report.checked().map(|e| e.tensor).collect::<std::collections::BTreeSet<_>>().len();
        let worst = report.max_rel_error();
        let ok = worst < LIMIT && covered == m.params().len();
        pass &= ok;
        let at = report.worst().map_or(0.0, |e| e.analytic.abs());
        parts.push(format!(
            "{arch} max_rel {worst:.1e} (|g| {at:.1e}) over {} entries / {covered} of {} tensors ({} kink-excluded)",
            report.checked().count(),
            m.params().len(),
            report.kinks()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn naive_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let tau = std::f64::consts::TAU;
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for u in 0..h {
        for v in 0..w {
            for r in 0..h {
                for c in 0..w {
                    let phase = -tau * ((u * r % h) as f64 / h as f64 + (v * c % w) as f64 / w as f64);
                    re[u * w + v] += x[r * w + c] * phase.cos();
                    im[u * w + v] += x[r * w + c] * phase.sin();
                }
            }
        }
    }
    (re, im)
}

fn spectral() -> Result<Outcome> {
    let sizes = [(1, 1), (4, 4), (8, 8), (16, 16), (6, 10), (17, 9), (64, 64), (60, 36)];
    let (mut round, mut parseval, mut oracle, mut split) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (k, &(h, w)) in sizes.iter().enumerate() {
        let x = random(h * w, 100 + k as u64);
        let s = dft2(&x, h, w)?;
        round = round.max(max_abs(&idft2(&s)?, &x));
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spec: f64 = s.power().iter().sum::<f64>() / (h * w) as f64;
        parseval = parseval.max((spec - energy).abs() / energy);
        for fc in [0.01, 0.1, 0.3, 0.5, 1.0] {
            let low = foren_apply(&x, &FreqMask::low_pass(fc, h, w)?)?;
            let high = foren_apply(&x, &FreqMask::high_pass(fc, h, w)?)?;
            let sum: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
            split = split.max(max_abs(&sum, &x));
        }
    }
    for n in [4, 8, 16] {
        let x = random(n * n, n as u64);
        let s = dft2(&x, n, n)?;
        let (re, im) = naive_dft(&x, n, n);
        oracle = oracle.max(max_abs(&s.re, &re)).max(max_abs(&s.im, &im));
    }
    let pass = round < 1e-9 && parseval < 1e-9 && oracle < 1e-9 && split < 1e-9;
    outcome(
        pass,
        format!("round trip {round:.1e}, Parseval {parseval:.1e}, fast vs direct {oracle:.1e}, mask split {split:.1e}"),
    )
}

fn describe(name: &str, s: &Score) -> String {
    format!("{name} val {:.2} dB high-band {:.2} dB ({} params)", s.val_psnr, s.high_band_psnr, s.params)
}

fn spectral_bias() -> Result<Outcome> {
    let data = benchmark::dataset()?;
    let run = |arch| benchmark::run(benchmark::model_config(arch), &data, benchmark::EPOCHS, benchmark::MODEL_SEED);
    let mlp = run(Arch::MlpRelu)?;
    let siren = run(Arch::SirenOnly)?;
    let vifor = run(Arch::Vifor)?;
    let matched = (siren.params as f64 / mlp.params as f64 - 1.0).abs() <= 0.1;
    let a = siren.high_band_psnr - mlp.high_band_psnr;
    let b = vifor.val_psnr - mlp.val_psnr;
    outcome(
        matched && a >= 2.0 && b >= 2.0,
        format!(
            "(a) siren - mlp high-band {a:+.2} dB, (b) vifor - mlp val {b:+.2} dB; {}; {}; {}",
            describe("mlp_relu", &mlp),
            describe("siren_only", &siren),
            describe("vifor", &vifor)
        ),
    )
}

fn cutoff_ablation() -> Result<Outcome> {
    let data = benchmark::dataset()?;
    let cutoffs = [0.05, 0.3, 0.9];
    let mut means = Vec::new();
    for fc in cutoffs {
        let mut total = 0.0;
        for seed in benchmark::SWEEP_SEEDS {
            let cfg = ModelConfig { f_low: fc, f_high: fc, ..benchmark::model_config(Arch::Vifor) };
            total += benchmark::run(cfg, &data, benchmark::SWEEP_EPOCHS, seed)?.val_psnr;
        }
        means.push(total / benchmark::SWEEP_SEEDS.len() as f64);
    }
    let pass = means[1] >= means[0] && means[1] >= means[2];
    let table: Vec<String> = cutoffs.iter().zip(&means).map(|(fc, m)| format!("fc {fc}: {m:.2} dB")).collect();
    outcome(
        pass,
        format!("mean val PSNR over {} seeds at {} epochs: {}", benchmark::SWEEP_SEEDS.len(), benchmark::SWEEP_EPOCHS, table.join(", ")),
    )
}

fn metric_identities() -> Result<Outcome> {
    let at = psnr_from_mse(0.01, 1.0);
    let a = random(64 * 64, 5).into_iter().map(|v| 0.5 + 0.4 * v).collect::<Vec<_>>();
    let self_ssim = ssim(&a, &a, 64, 64)?;
    let sigma: f64 = 0.05;
    let expected = 10.0 * (1.0 / (sigma * sigma)).log10();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Contract(e.to_string()))?;
        let noisy: Vec<f64> = a.iter().map(|v| v + noise.sample(&mut rng)).collect();
        worst = worst.max((psnr(&noisy, &a, 1.0)? - expected).abs());
    }
    let pass = (at - 20.0).abs() <= 1e-9 && self_ssim == 1.0 && worst <= 0.3;
    outcome(
        pass,
        format!("psnr(mse 0.01) = {at:.12} dB, ssim(a,a) = {self_ssim}, noise PSNR off by at most {worst:.3} dB from {expected:.3}"),
    )
}

fn optimizer() -> Result<Outcome> {
    let mut p = vec![Tensor::new(&[1], vec![0.0])?];
    let mut adam = Adam::new(&p);
    adam.step(&mut p, &[vec![1.0]], &["x".into()], 1e-4)?;
    let closed = -1e-4 * (1.0 / (1.0 + 1e-8));
    let err = (p[0].data()[0] - closed).abs();
    let (base, min) = (1e-4, 1e-6);
    let ends = cosine_lr(0, 300, base, min) == base && cosine_lr(300, 300, base, min) == min;
    outcome(err < 1e-12 && ends, format!("Adam step off by {err:.1e}; cosine endpoints exact: {ends}"))
}

fn data_protocol() -> Result<Outcome> {
    let fields = EnsembleSpec::standard().generate()?;
    let tiles_ok = fields.iter().all(|f| matches!(tile8(f).and_then(|t| untile8(&t)), Ok(b) if bits(&b.values) == bits(&f.values)));
    let full = Dataset::build(&fields, &DatasetSpec::default())?;
    let sub = Dataset::build(&fields, &DatasetSpec { mode: DatasetMode::SubImage, ..DatasetSpec::default() })?;
    let ratio_ok = sub.train.len() == 8 * full.train.len() && sub.val.len() == 8 * full.val.len();

    let dir = tempfile::tempdir()?;
    let mut esmg_ok = true;
    for (i, f) in fields.iter().enumerate() {
        let bytes = encode_grid(f);
        let path = dir.path().join(format!("f{i}.esmg"));
        save_grid(f, &path)?;
        let back = load_grid(&path)?;
        esmg_ok &= decode_grid(&bytes)? == *f && bits(&back.values) == bits(&f.values) && encode_grid(&back) == bytes;
    }
    let mut vfr_ok = true;
    for arch in Arch::ALL {
        let m = Model::new(benchmark::model_config(arch), 3)?;
        let bytes = encode_checkpoint(&m);
        let path = dir.path().join(format!("{arch}.vfr1"));
        save_checkpoint(&m, &path)?;
        vfr_ok &= encode_checkpoint(&decode_checkpoint(&bytes)?) == bytes && encode_checkpoint(&load_checkpoint(&path)?) == bytes;
    }
    outcome(
        tiles_ok && ratio_ok && esmg_ok && vfr_ok,
        format!(
            "tile8 bit-exact: {tiles_ok}; sub_image {} samples vs full_image {}; ESMG round trip: {esmg_ok}; VFR1 round trip: {vfr_ok}",
            sub.len(),
            full.len()
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let fields = EnsembleSpec { count: 4, ..EnsembleSpec::standard() }.generate()?;
    let data = Dataset::build(&fields, &DatasetSpec::default())?;
    let cfg = TrainConfig { epochs: 2, batch_size: 1, ..TrainConfig::default() };
    let dir = tempfile::tempdir()?;
    let mut runs = Vec::new();
    for round in 0..2 {
        let mut files = Vec::new();
        for arch in Arch::ALL {
            let mut m = Model::new(ModelConfig { layers: 1, ..benchmark::model_config(arch) }, 21)?;
            let report = train(&mut m, &data, &cfg)?;
            let ckpt = dir.path().join(format!("{round}-{arch}.vfr1"));
            save_checkpoint(&m, &ckpt)?;
            files.push(std::fs::read(&ckpt)?);
            files.push(report.to_csv().into_bytes());
        }
        let base = ModelConfig { layers: 1, ..benchmark::model_config(Arch::Visir) };
        let rows = sweep(SweepParam::Omega0, &[20.0, 30.0], &base, &data, &TrainConfig { epochs: 1, ..cfg.clone() }, 21, 2)?;
        files.push(sweep_csv(SweepParam::Omega0, &rows).into_bytes());
        runs.push(files);
    }
    let same = runs[0] == runs[1];
    outcome(same, format!("{} checkpoints and CSV reports compared byte for byte: identical = {same}", runs[0].len()))
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 8] = [
    ("gradient correctness", gradients),
    ("spectral fidelity", spectral),
    ("spectral-bias benchmark", spectral_bias),
    ("cutoff ablation", cutoff_ablation),
    ("metric identities", metric_identities),
    ("optimizer and schedule", optimizer),
    ("data protocol", data_protocol),
    ("determinism", determinism),
];

fn selected(args: &[String], index: usize, name: &str) -> bool {
    let picks: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    picks.is_empty()
        || picks.iter().any(|a| a.parse::<usize>().map_or_else(|_| name.contains(a.as_str()), |n| n == index + 1))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        if !selected(&args, i, name) {
            continue;
        }
        ran += 1;
        let clock = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {}. {name} ({:.1}s): {detail}", i + 1, clock.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
