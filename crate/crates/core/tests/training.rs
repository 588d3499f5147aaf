use forenlab::data::{Dataset, GridField, Resample, SRPair, Sample, VariableTag};
use forenlab::models::{Arch, Model, ModelConfig};
use forenlab::ndtensor::{Graph, Tensor};
use forenlab::training::{
    cosine_lr, evaluate, freq_loss, sweep, total_loss, train, Adam, LossWeights, SweepParam, TrainConfig,
};
use forenlab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Direct double sum, no FFT.
fn naive_magnitudes(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = -tau * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    re += x[r * w + c] * phase.cos();
                    im += x[r * w + c] * phase.sin();
                }
            }
            out.push(re.hypot(im));
        }
    }
    out
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

#[test]
fn adam_first_step_matches_closed_form() {
    let mut p = vec![Tensor::new(&[1], vec![0.5]).unwrap()];
    let mut adam = Adam::new(&p);
    adam.step(&mut p, &[vec![1.0]], &names(1), 1e-4).unwrap();
    // m̂ = v̂ = 1 after bias correction
    let expected = 0.5 - 1e-4 * (1.0 / (1.0 + 1e-8));
    assert!((p[0].data()[0] - expected).abs() < 1e-12);
}

#[test]
fn adam_tracks_a_scalar_recurrence_over_many_steps() {
    let grads = [0.3, -1.2, 2.0, 0.0, 0.7, -0.1, 5.0, 1e-3];
    let (b1, b2, eps, lr) = (0.8, 0.99, 1e-6, 0.01);
    let mut p = vec![Tensor::new(&[1], vec![1.0]).unwrap()];
    let mut adam = Adam::with_betas(&p, b1, b2, eps);
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        adam.step(&mut p, &[vec![g]], &names(1), lr).unwrap();
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let k = (t + 1) as i32;
        x -= lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
        assert!((p[0].data()[0] - x).abs() < 1e-12, "step {}", t + 1);
    }
    assert_eq!(adam.t, grads.len() as u64);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut p = vec![Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap()];
    let mut adam = Adam::new(&p);
    for _ in 0..5 {
        adam.step(&mut p, &[vec![0.0; 3]], &names(1), 1e-2).unwrap();
    }
    assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
}

#[test]
fn adam_keeps_identical_entries_identical() {
    let mut p = vec![Tensor::new(&[2], vec![0.25, 0.25]).unwrap()];
    let mut adam = Adam::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let g: f64 = rng.gen_range(-1.0..1.0);
        adam.step(&mut p, &[vec![g, g]], &names(1), 1e-3).unwrap();
    }
    assert_eq!(p[0].data()[0].to_bits(), p[0].data()[1].to_bits());
}

#[test]
fn adam_rejects_non_finite_gradients_without_touching_anything() {
    let mut p = vec![Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), Tensor::new(&[1], vec![3.0]).unwrap()];
    let mut adam = Adam::new(&p);
    let before = (p.clone(), adam.clone());
    let err = adam
        .step(&mut p, &[vec![0.1, 0.2], vec![f64::NAN]], &["a.w".into(), "b.w".into()], 1e-3)
        .unwrap_err();
    match err {
        Error::Numerical { param, .. } => assert_eq!(param, "b.w"),
        e => panic!("unexpected {e}"),
    }
    assert_eq!(p, before.0);
    assert_eq!(adam, before.1);
}

#[test]
fn adam_descends_a_quadratic() {
    // f(x) = Σ c_i x_i², curvature 2·max c = 6
    let c = [1.0, 2.0, 3.0];
    let mut p = vec![Tensor::new(&[3], vec![1.0, -1.0, 0.5]).unwrap()];
    let mut adam = Adam::new(&p);
    let f = |x: &[f64]| x.iter().zip(&c).map(|(x, c)| c * x * x).sum::<f64>();
    let mut prev = f(p[0].data());
    for _ in 0..100 {
        let g: Vec<f64> = p[0].data().iter().zip(&c).map(|(x, c)| 2.0 * c * x).collect();
        adam.step(&mut p, &[g], &names(1), 1e-2).unwrap();
        let now = f(p[0].data());
        assert!(now < prev, "{now} >= {prev}");
        prev = now;
    }
}

#[test]
fn cosine_schedule_endpoints_and_midpoint() {
    let (base, min) = (1e-4, 1e-6);
    assert_eq!(cosine_lr(0, 300, base, min), base);
    assert_eq!(cosine_lr(300, 300, base, min), min);
    assert_eq!(cosine_lr(400, 300, base, min), min);
    assert!((cosine_lr(150, 300, base, min) - (base + min) / 2.0).abs() < 1e-18);
    let lrs: Vec<f64> = (0..=300).map(|t| cosine_lr(t, 300, base, min)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn freq_loss_of_a_constant_shift_is_its_magnitude() {
    let (h, w) = (8, 8);
    let t = field(h, w, 1);
    assert_eq!(freq_loss(&t, &t, h, w).unwrap(), 0.0);
    for c in [0.3, -0.2] {
        let p: Vec<f64> = t.iter().map(|v| v + c).collect();
        let (mp, mt) = (naive_magnitudes(&p, h, w), naive_magnitudes(&t, h, w));
        let oracle = mp.iter().zip(&mt).map(|(a, b)| (a - b).abs()).sum::<f64>() / (h * w) as f64;
        let got = freq_loss(&p, &t, h, w).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        // a positive-mean field keeps its DC bin positive under either shift
        assert!((got - c.abs()).abs() < 1e-10);
    }
}

#[test]
fn freq_loss_matches_naive_dft_and_is_symmetric() {
    let (h, w) = (4, 8);
    let (a, b) = (field(h, w, 2), field(h, w, 3));
    let (ma, mb) = (naive_magnitudes(&a, h, w), naive_magnitudes(&b, h, w));
    let oracle = ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>() / (h * w) as f64;
    let ab = freq_loss(&a, &b, h, w).unwrap();
    assert!((ab - oracle).abs() < 1e-10);
    assert_eq!(ab, freq_loss(&b, &a, h, w).unwrap());
    assert!(freq_loss(&a, &b[..8], h, w).is_err());
}

fn loss_value(pred: &[f64], target: &[f64], h: usize, w: usize, weights: LossWeights) -> (f64, f64, f64) {
    let mut g = Graph::new();
    let p = g.constant(&[h * w, 1], pred.to_vec()).unwrap();
    let parts = total_loss(&mut g, p, target, h, w, weights).unwrap();
    (g.value(parts.total)[0], g.value(parts.mse)[0], g.value(parts.freq)[0])
}

#[test]
fn total_loss_combines_its_terms_linearly() {
    let (h, w) = (8, 8);
    let (p, t) = (field(h, w, 4), field(h, w, 5));
    let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (h * w) as f64;
    let fl = freq_loss(&p, &t, h, w).unwrap();

    let (total, m, f) = loss_value(&p, &t, h, w, LossWeights { lambda1: 1.0, lambda2: 0.0 });
    assert!((total - mse).abs() < 1e-15);
    assert!((m - mse).abs() < 1e-15 && (f - fl).abs() < 1e-12);

    let (total, ..) = loss_value(&p, &t, h, w, LossWeights { lambda1: 2.0, lambda2: 0.1 });
    assert!((total - (2.0 * mse + 0.1 * fl)).abs() < 1e-12);

    for weights in [LossWeights::default(), LossWeights { lambda1: 0.0, lambda2: 3.0 }] {
        assert_eq!(loss_value(&t, &t, h, w, weights).0, 0.0);
    }
}

fn sample(hr: Vec<f64>, h: usize, w: usize, scale: usize) -> Sample {
    let hr = GridField::new(h, w, hr, VariableTag::Synthetic).unwrap();
    Sample { source: 0, tile: None, pair: SRPair::from_hr(hr, scale, Resample::BlockMean).unwrap() }
}

fn smooth(h: usize, w: usize, phase: f64) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            0.5 + 0.3 * (std::f64::consts::TAU * (r + phase)).sin() * (std::f64::consts::TAU * c).cos()
        })
        .collect()
}

fn tiny_dataset() -> Dataset {
    let (h, w) = (32, 32);
    Dataset {
        train: (0..3).map(|i| sample(smooth(h, w, 0.1 * i as f64), h, w, 4)).collect(),
        val: vec![sample(smooth(h, w, 0.35), h, w, 4)],
    }
}

fn tiny_config(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        patch_size: 4,
        embed_dim: 16,
        heads: 2,
        layers: 1,
        lr_height: 8,
        lr_width: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let data = tiny_dataset();
    let mut m = Model::new(tiny_config(Arch::Vifor), 5).unwrap();
    let init = m.clone();
    let rep = train(&mut m, &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert!(rep.records.is_empty() && rep.aborted.is_none());
    assert_eq!(m.params(), init.params());
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = tiny_dataset();
    let cfg = TrainConfig { epochs: 3, batch_size: 2, ..TrainConfig::default() };
    let run = || {
        let mut m = Model::new(tiny_config(Arch::Vifor), 9).unwrap();
        let rep = train(&mut m, &data, &cfg).unwrap();
        (m, rep.to_csv())
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    for (x, y) in a.params().iter().zip(b.params()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(ra.lines().count(), 4);
}

#[test]
fn siren_overfits_a_single_target() {
    let (h, w) = (32, 32);
    let data = Dataset { train: vec![sample(smooth(h, w, 0.2), h, w, 4)], val: vec![] };
    let cfg = ModelConfig { lr_height: 8, lr_width: 8, ..ModelConfig::with_arch(Arch::SirenOnly) };
    let mut m = Model::new(cfg, 1).unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 1, ..TrainConfig::default() };
    let rep = train(&mut m, &data, &cfg).unwrap();
    assert_eq!(rep.records.len(), 500);
    assert!(rep.records[0].val_psnr.is_nan());
    let fit = evaluate(&m, &data.train).unwrap().unwrap();
    assert!(fit.mse < 1e-3, "train mse {}", fit.mse);
}

#[test]
fn a_diverging_run_aborts_with_its_last_good_epoch() {
    let data = tiny_dataset();
    let mut m = Model::new(tiny_config(Arch::MlpRelu), 2).unwrap();
    // ReLU maps a NaN pre-activation to zero, so poison the readout instead
    let out = m.names().last().unwrap().clone();
    m.param_mut(&out).unwrap().data_mut()[0] = f64::NAN;
    let rep = train(&mut m, &data, &TrainConfig { epochs: 4, ..TrainConfig::default() }).unwrap();
    assert!(rep.records.is_empty());
    assert!(rep.aborted.is_some());
}

#[test]
fn bad_training_configs_are_rejected() {
    let data = tiny_dataset();
    let mut m = Model::new(tiny_config(Arch::MlpRelu), 2).unwrap();
    let bad = [
        TrainConfig { base_lr: 0.0, ..TrainConfig::default() },
        TrainConfig { min_lr: 1.0, ..TrainConfig::default() },
        TrainConfig { weights: LossWeights { lambda1: 0.0, lambda2: 0.0 }, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(train(&mut m, &data, &cfg), Err(Error::Config(_))));
    }
    let empty = Dataset { train: vec![], val: vec![] };
    assert!(train(&mut m, &empty, &TrainConfig::default()).is_err());
}

#[test]
fn single_value_sweep_equals_one_training_run() {
    let data = tiny_dataset();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let base = tiny_config(Arch::Visir);
    let rows = sweep(SweepParam::Omega0, &[20.0], &base, &data, &cfg, 4, 1).unwrap();
    let mut m = Model::new(ModelConfig { omega0: 20.0, ..base }, 4).unwrap();
    let rep = train(&mut m, &data, &cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].psnr, Some(rep.last().unwrap().val_psnr));
}

#[test]
fn omega_sweep_returns_one_finite_row_per_value() {
    let data = tiny_dataset();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let rows = sweep(SweepParam::Omega0, &[10.0, 20.0, 30.0], &tiny_config(Arch::Vifor), &data, &cfg, 4, 1).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), [10.0, 20.0, 30.0]);
    assert!(rows.iter().all(|r| r.psnr.is_some_and(f64::is_finite) && r.error.is_none()));
}

#[test]
fn failing_cells_are_recorded_and_workers_do_not_change_results() {
    let data = tiny_dataset();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let base = tiny_config(Arch::SirenOnly);
    let values = [1.0, 0.0, 2.0, 1.5];
    let one = sweep(SweepParam::Layers, &values, &base, &data, &cfg, 4, 1).unwrap();
    let two = sweep(SweepParam::Layers, &values, &base, &data, &cfg, 4, 2).unwrap();
    assert_eq!(one, two);
    assert!(one[0].psnr.is_some() && one[2].psnr.is_some());
    assert!(one[1].error.is_some() && one[3].error.is_some());
    assert!(SweepParam::parse("depth").is_err());
    assert_eq!(SweepParam::parse("f_c").unwrap(), SweepParam::Fc);
}
