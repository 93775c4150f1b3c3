//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::NaiveDate;
use lakeice::data::{Grid, PixelClass, SensorKind};
use lakeice::model::{EncoderConfig, FusionModel};
use lakeice::nn::{Params, Tensor};
use lakeice::temporal::{Regressor, RegressorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn random_labels(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid<PixelClass> {
    Grid::from_fn(h, w, |_, _| PixelClass::from_index(rng.random_range(0..3)).unwrap())
}

/// One supervised sample per sensor for the miniature network.
pub struct SegFixture {
    pub model: FusionModel,
    pub samples: Vec<(SensorKind, Tensor, Grid<PixelClass>, Grid<bool>)>,
    pub sar_native: (Tensor, Grid<PixelClass>, Grid<bool>),
}

impl SegFixture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let cfg = EncoderConfig::miniature();
        let sensors: BTreeSet<SensorKind> = SensorKind::ALL.into_iter().collect();
        let mut model = FusionModel::new(cfg.clone(), &sensors, seed).unwrap();
        // random non-zero biases so no unit sits exactly at a kink
        for t in model.params_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-0.05..0.05);
            }
        }
        let e = cfg.embedding_size;
        let samples = SensorKind::ALL
            .into_iter()
            .map(|s| {
                let x = random_tensor(&cfg.input_shape(s), &mut r);
                let labels = random_labels(e, e, &mut r);
                let sup = Grid::from_fn(e, e, |_, _| r.random_bool(0.8));
                (s, x, labels, sup)
            })
            .collect();
        let p = cfg.sar_patch;
        let sar_native = (
            random_tensor(&cfg.input_shape(SensorKind::Sar), &mut r),
            random_labels(p, p, &mut r),
            Grid::filled(p, p, true),
        );
        SegFixture {
            model,
            samples,
            sar_native,
        }
    }

    /// Full segmentation objective: mean cross entropy over all sensors'
    /// supervised pixels plus the native-resolution SAR auxiliary term.
    pub fn loss_and_grads(&self, model: &FusionModel) -> (f64, FusionModel) {
        let mut grads = model.zeroed();
        let total: usize = self.samples.iter().map(|s| s.3.count_true()).sum();
        let scale = 1.0 / total as f64;
        let mut loss = 0.0;
        for (s, x, l, m) in &self.samples {
            loss += model.segmentation_step(*s, x, l, m, scale, &mut grads).unwrap();
        }
        let (x, l, m) = &self.sar_native;
        loss += model
            .sar_pretrain_step(x, l, m, 1.0 / m.count_true() as f64, &mut grads)
            .unwrap();
        (loss, grads)
    }
}

/// Miniature regressor with a random window.
pub struct RegFixture {
    pub model: Regressor,
    pub windows: Vec<Vec<Tensor>>,
    pub targets: Vec<f64>,
    pub days: Vec<NaiveDate>,
}

impl RegFixture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let cfg = RegressorConfig::miniature();
        let mut model = Regressor::new(cfg.clone(), seed).unwrap();
        for t in model.params_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-0.05..0.05);
            }
        }
        let shape = [cfg.embedding_channels, cfg.embedding_size, cfg.embedding_size];
        let windows = (0..4)
            .map(|_| (0..cfg.window).map(|_| random_tensor(&shape, &mut r)).collect())
            .collect();
        let targets = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
        let days = vec![ymd(2017, 1, 1), ymd(2017, 1, 1), ymd(2017, 1, 2), ymd(2017, 1, 4)];
        RegFixture {
            model,
            windows,
            targets,
            days,
        }
    }
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

/// Relative error with a floor so entries whose true gradient is ~0 are
/// judged on an absolute 1e-10 scale.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Checks `points` parameter entries, cycling through every tensor so each
/// weight group is covered. A point where the difference quotients at `h`
/// and `h/2` disagree straddles a kink and is replaced by another draw.
pub fn gradcheck<M: Params + Clone>(
    model: &M,
    analytic: &M,
    loss: impl Fn(&M) -> f64,
    points: usize,
    seed: u64,
) -> GradReport {
    let mut r = rng(seed);
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic.params().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut report = GradReport::default();
    let h = 1e-5;
    let mut k = 0usize;
    let mut attempts = 0;
    while report.checked < points && attempts < points * 20 {
        attempts += 1;
        let ti = k % names.len();
        let len = grads[ti].len();
        let j = r.random_range(0..len);
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[ti].data_mut()[j] += delta;
            loss(&m)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let fd_half = (eval(h / 2.0) - eval(-h / 2.0)) / h;
        if rel_err(fd, fd_half) > 1e-5 {
            report.skipped_kinks += 1;
            continue;
        }
        k += 1;
        let a = grads[ti][j];
        let e = rel_err(a, fd);
        report.max_rel_err = report.max_rel_err.max(e);
        report.checked += 1;
        if e >= 1e-4 {
            report.failures.push(format!("{}[{j}]: analytic {a:e} vs numeric {fd:e}", names[ti]));
        }
    }
    report
}

/// Two lakes over two winters from the desk generator.
pub fn small_dataset(seed: u64) -> lakeice::data::SyntheticDataset {
    let mut cfg = lakeice::data::SyntheticDatasetConfig::desk(seed);
    cfg.lakes.truncate(2);
    lakeice::data::generate_synthetic_dataset(&cfg).unwrap()
}

/// Narrow network and a handful of epochs so a full staged run takes
/// seconds.
pub fn small_config(seed: u64) -> lakeice::training::TrainConfig {
    use lakeice::model::SarWidths;
    let mut c = lakeice::training::TrainConfig::default();
    c.seed = seed;
    c.epoch_scale = 0.004;
    c.encoder.features = 6;
    c.encoder.shared_width = 6;
    c.encoder.embedding_channels = 6;
    c.encoder.sar_widths = SarWidths {
        full: 2,
        half: 3,
        quarter: 4,
    };
    c.regressor.embedding_channels = 6;
    c.regressor.day_widths = [4, 3, 2];
    c.regressor.post_widths = [4, 3, 2];
    c.sar_pretrain.learning_rate = 1e-3;
    c.optical_pretrain.learning_rate = 2e-3;
    c.finetune.learning_rate = 2e-4;
    c.regression.learning_rate = 5e-3;
    c
}
