//! Step 2: windows of daily embeddings regressed to a water fraction.
//!
//! A window holds one embedding per nominal day offset around a centre
//! observation. Each day passes through the same three convolutions, the
//! per-day maps are stacked day-major along the channel axis, and three more
//! convolutions plus a dense sigmoid layer produce a scalar in `[0, 1]`.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SensorKind;
use crate::error::{Error, Result};
use crate::losses::{regression_loss_grad, LossWeights, RegressionBatch, RegressionLossParts};
use crate::model::{EmbeddingTensor, LEAKY_SLOPE};
use crate::nn::{leaky_relu, leaky_relu_backward, prefixed, sigmoid, Conv2d, Dense, Params, Tensor};

/// Default number of days per window (three before, the centre, three after).
pub const WINDOW_SIZE: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub embedding_channels: usize,
    pub embedding_size: usize,
    pub window: usize,
    /// Widths of the three per-day convolutions.
    pub day_widths: [usize; 3],
    /// Widths of the three convolutions after stacking.
    pub post_widths: [usize; 3],
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            embedding_channels: 32,
            embedding_size: 12,
            window: WINDOW_SIZE,
            day_widths: [32, 16, 8],
            post_widths: [64, 32, 16],
            kernel: 3,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

impl RegressorConfig {
    /// Tiny network for finite-difference checks.
    pub fn miniature() -> Self {
        RegressorConfig {
            embedding_channels: 4,
            embedding_size: 4,
            window: 3,
            day_widths: [3, 3, 2],
            post_widths: [4, 3, 2],
            kernel: 3,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("window size must be odd, got {}", self.window)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        let widths = [self.embedding_channels, self.embedding_size]
            .into_iter()
            .chain(self.day_widths)
            .chain(self.post_widths);
        if widths.into_iter().any(|w| w == 0) {
            return Err(Error::Config("regressor widths must be positive".into()));
        }
        if (self.leaky_slope - LEAKY_SLOPE).abs() > 0.0 {
            return Err(Error::Config(format!("leaky slope is fixed at {LEAKY_SLOPE}")));
        }
        Ok(())
    }

    pub fn embedding_shape(&self) -> [usize; 3] {
        [self.embedding_channels, self.embedding_size, self.embedding_size]
    }
}

/// Where one window slot's embedding came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSlot {
    /// Nominal day offset from the centre.
    pub offset: i64,
    /// Index into the embedding series the window was built from.
    pub index: usize,
    pub sensor: SensorKind,
    pub date: NaiveDate,
    /// Set when the actual date differs from the nominal one.
    pub gap_filled: bool,
}

/// Slots ordered by nominal offset `-h..=h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingWindow {
    pub center: NaiveDate,
    pub slots: Vec<WindowSlot>,
}

impl EmbeddingWindow {
    pub fn center_slot(&self) -> &WindowSlot {
        &self.slots[self.slots.len() / 2]
    }

    pub fn gap_count(&self) -> usize {
        self.slots.iter().filter(|s| s.gap_filled).count()
    }

    /// The embedding tensors of every slot, in slot order.
    pub fn tensors<'a>(&self, series: &'a [EmbeddingTensor]) -> Result<Vec<&'a Tensor>> {
        self.slots
            .iter()
            .map(|s| {
                series
                    .get(s.index)
                    .map(|e| &e.values)
                    .ok_or_else(|| Error::Shape(format!("window slot {} outside series", s.index)))
            })
            .collect()
    }
}

/// Nearest entry to `nominal`; ties go to the earlier date, then to the
/// higher-priority sensor (SAR, VIIRS, MODIS).
fn nearest(series: &[EmbeddingTensor], nominal: NaiveDate) -> usize {
    let key = |i: usize| {
        let e = &series[i];
        ((e.date - nominal).num_days().abs(), e.date, e.sensor.slot_priority(), i)
    };
    (0..series.len()).min_by_key(|&i| key(i)).expect("non-empty series")
}

fn assemble(series: &[EmbeddingTensor], center: NaiveDate, center_index: usize, size: usize) -> EmbeddingWindow {
    let h = (size / 2) as i64;
    let slots = (-h..=h)
        .map(|offset| {
            let nominal = center + chrono::Duration::days(offset);
            let index = if offset == 0 { center_index } else { nearest(series, nominal) };
            let e = &series[index];
            WindowSlot {
                offset,
                index,
                sensor: e.sensor,
                date: e.date,
                gap_filled: e.date != nominal,
            }
        })
        .collect();
    EmbeddingWindow { center, slots }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Config(format!("window size must be odd, got {size}")));
    }
    Ok(())
}

/// Window centred on `center`, which must have at least one embedding; the
/// centre slot takes the highest-priority sensor of that day.
pub fn build_window(series: &[EmbeddingTensor], center: NaiveDate, size: usize) -> Result<EmbeddingWindow> {
    check_size(size)?;
    if series.is_empty() {
        return Err(Error::Data("embedding series is empty".into()));
    }
    let center_index = (0..series.len())
        .filter(|&i| series[i].date == center)
        .min_by_key(|&i| (series[i].sensor.slot_priority(), i))
        .ok_or_else(|| Error::Data(format!("no embedding on centre date {center}")))?;
    Ok(assemble(series, center, center_index, size))
}

/// Window whose centre slot is the given series entry, so same-day
/// observations from different sensors each get their own window.
pub fn build_window_at(series: &[EmbeddingTensor], index: usize, size: usize) -> Result<EmbeddingWindow> {
    check_size(size)?;
    let e = series
        .get(index)
        .ok_or_else(|| Error::Data(format!("series index {index} out of range")))?;
    Ok(assemble(series, e.date, index, size))
}

/// The step-2 network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    config: RegressorConfig,
    pub day_convs: Vec<Conv2d>,
    pub post_convs: Vec<Conv2d>,
    pub dense: Dense,
}

/// Forward activations of one window.
#[derive(Clone, Debug)]
pub struct RegressorCache {
    inputs: Vec<Tensor>,
    /// Per day, the outputs of the three day convolutions.
    day: Vec<[Tensor; 3]>,
    stacked: Tensor,
    post: [Tensor; 3],
    pub output: f64,
}

fn act(mut t: Tensor, slope: f64) -> Tensor {
    leaky_relu(&mut t, slope);
    t
}

impl Regressor {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel;
        let [d0, d1, d2] = config.day_widths;
        let [p0, p1, p2] = config.post_widths;
        let day_convs = vec![
            Conv2d::new(config.embedding_channels, d0, k, 1, &mut rng),
            Conv2d::new(d0, d1, k, 1, &mut rng),
            Conv2d::new(d1, d2, k, 1, &mut rng),
        ];
        let post_convs = vec![
            Conv2d::new(config.window * d2, p0, k, 1, &mut rng),
            Conv2d::new(p0, p1, k, 1, &mut rng),
            Conv2d::new(p1, p2, k, 1, &mut rng),
        ];
        let s = config.embedding_size;
        let dense = Dense::new(p2 * s * s, 1, &mut rng);
        Ok(Regressor {
            config,
            day_convs,
            post_convs,
            dense,
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    fn check_inputs(&self, days: &[&Tensor]) -> Result<()> {
        if days.len() != self.config.window {
            return Err(Error::Shape(format!("window has {} slots, expected {}", days.len(), self.config.window)));
        }
        let expected = self.config.embedding_shape();
        if let Some(t) = days.iter().find(|t| t.shape() != expected) {
            return Err(Error::Shape(format!("embedding {:?}, expected {expected:?}", t.shape())));
        }
        Ok(())
    }

    pub fn forward(&self, days: &[&Tensor]) -> Result<RegressorCache> {
        self.check_inputs(days)?;
        let slope = self.config.leaky_slope;
        let c = &self.day_convs;
        let day: Vec<[Tensor; 3]> = days
            .iter()
            .map(|x| {
                let a = act(c[0].forward(x), slope);
                let b = act(c[1].forward(&a), slope);
                let o = act(c[2].forward(&b), slope);
                [a, b, o]
            })
            .collect();
        let s = self.config.embedding_size;
        // channel-major tensors, so concatenating buffers stacks day-major
        let stacked_data: Vec<f64> = day.iter().flat_map(|d| d[2].data().iter().copied()).collect();
        let stacked = Tensor::from_vec(&[days.len() * self.config.day_widths[2], s, s], stacked_data);
        let p = &self.post_convs;
        let p0 = act(p[0].forward(&stacked), slope);
        let p1 = act(p[1].forward(&p0), slope);
        let p2 = act(p[2].forward(&p1), slope);
        let output = sigmoid(self.dense.forward(p2.data())[0]);
        Ok(RegressorCache {
            inputs: days.iter().map(|t| (*t).clone()).collect(),
            day,
            stacked,
            post: [p0, p1, p2],
            output,
        })
    }

    /// Water fraction for one window of embedding tensors.
    pub fn predict(&self, days: &[&Tensor]) -> Result<f64> {
        Ok(self.forward(days)?.output)
    }

    /// Water fraction for a window built over `series`.
    pub fn regress_fraction(&self, window: &EmbeddingWindow, series: &[EmbeddingTensor]) -> Result<f64> {
        self.predict(&window.tensors(series)?)
    }

    /// Accumulates parameter gradients for `d loss / d output = dy`. The
    /// embeddings are frozen, so no input gradient is formed.
    pub fn backward(&self, cache: &RegressorCache, dy: f64, g: &mut Regressor) {
        let slope = self.config.leaky_slope;
        let y = cache.output;
        let dz = [dy * y * (1.0 - y)];
        let dflat = self.dense.backward(cache.post[2].data(), &dz, &mut g.dense);
        let mut d = Tensor::from_vec(cache.post[2].shape(), dflat);
        for i in (0..3).rev() {
            leaky_relu_backward(&cache.post[i], &mut d, slope);
            let input = if i == 0 { &cache.stacked } else { &cache.post[i - 1] };
            d = self.post_convs[i]
                .backward(input, &d, &mut g.post_convs[i], true)
                .expect("input grad");
        }
        let per_day = self.config.day_widths[2];
        let s = self.config.embedding_size;
        for (t, acts) in cache.day.iter().enumerate() {
            let chunk = &d.data()[t * per_day * s * s..(t + 1) * per_day * s * s];
            let mut dd = Tensor::from_vec(&[per_day, s, s], chunk.to_vec());
            for i in (0..3).rev() {
                leaky_relu_backward(&acts[i], &mut dd, slope);
                let input = if i == 0 { &cache.inputs[t] } else { &acts[i - 1] };
                match self.day_convs[i].backward(input, &dd, &mut g.day_convs[i], i > 0) {
                    Some(next) => dd = next,
                    None => break,
                }
            }
        }
    }

    /// Forward and backward over one mini-batch of windows with the composite
    /// regression loss. `days` must be sorted; gradients accumulate into `g`.
    pub fn batch_step(
        &self,
        windows: &[Vec<&Tensor>],
        targets: &[f64],
        days: &[NaiveDate],
        weights: LossWeights,
        g: &mut Regressor,
    ) -> Result<RegressionLossParts> {
        let caches = windows.iter().map(|w| self.forward(w)).collect::<Result<Vec<_>>>()?;
        let batch = RegressionBatch::new(caches.iter().map(|c| c.output).collect(), targets.to_vec(), days.to_vec())?;
        let (parts, grad) = regression_loss_grad(&batch, weights)?;
        for (cache, dy) in caches.iter().zip(grad) {
            self.backward(cache, dy, g);
        }
        Ok(parts)
    }

    /// Loss of a mini-batch without gradients.
    pub fn batch_loss(
        &self,
        windows: &[Vec<&Tensor>],
        targets: &[f64],
        days: &[NaiveDate],
        weights: LossWeights,
    ) -> Result<RegressionLossParts> {
        let preds = windows.iter().map(|w| self.predict(w)).collect::<Result<Vec<_>>>()?;
        let batch = RegressionBatch::new(preds, targets.to_vec(), days.to_vec())?;
        Ok(regression_loss_grad(&batch, weights)?.0)
    }

    /// Loads parameters by name, as produced by [`Params::params`].
    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let names: Vec<String> = self.params().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(self.params_mut()) {
            let src = tensors
                .get(name)
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Shape(format!("{name}: {:?} vs {:?}", src.shape(), t.shape())));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

impl Params for Regressor {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        for (i, c) in self.day_convs.iter().enumerate() {
            p.extend(prefixed(&format!("regressor.day{i}"), c.params()));
        }
        for (i, c) in self.post_convs.iter().enumerate() {
            p.extend(prefixed(&format!("regressor.post{i}"), c.params()));
        }
        p.extend(prefixed("regressor.dense", self.dense.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for c in &mut self.day_convs {
            p.extend(c.params_mut());
        }
        for c in &mut self.post_convs {
            p.extend(c.params_mut());
        }
        p.extend(self.dense.params_mut());
        p
    }
}

/// Mean and population variance across ensemble members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: f64,
    pub variance: f64,
}

impl EnsembleStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no values to aggregate".into()));
        }
        // Shifted by the first value so identical members give exactly
        // (value, 0) instead of rounding residue.
        let n = values.len() as f64;
        let x0 = values[0];
        let shift = values.iter().map(|v| v - x0).sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - x0 - shift).powi(2)).sum::<f64>() / n;
        Ok(EnsembleStats {
            mean: x0 + shift,
            variance,
        })
    }
}

/// Fused output for one calendar day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyPrediction {
    pub date: NaiveDate,
    /// One entry per observation of the day, in input order.
    pub observations: Vec<(SensorKind, f64)>,
    pub fused: f64,
    pub ensemble: Option<EnsembleStats>,
}

impl DailyPrediction {
    /// Mean prediction of one sensor on this day, if it observed.
    pub fn sensor_value(&self, sensor: SensorKind) -> Option<f64> {
        let v: Vec<f64> = self.observations.iter().filter(|o| o.0 == sensor).map(|o| o.1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Arithmetic mean of the predictions made for one date.
pub fn fuse_daily(date: NaiveDate, predictions: &[(SensorKind, f64)]) -> Result<DailyPrediction> {
    if predictions.is_empty() {
        return Err(Error::Data(format!("no predictions for {date}")));
    }
    if let Some((_, v)) = predictions.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract(format!("prediction {v} outside [0, 1]")));
    }
    let fused = predictions.iter().map(|p| p.1).sum::<f64>() / predictions.len() as f64;
    Ok(DailyPrediction {
        date,
        observations: predictions.to_vec(),
        fused: fused.clamp(0.0, 1.0),
        ensemble: None,
    })
}

/// Predicts every entry of a series (one window per observation) and fuses
/// same-day predictions. The series must be sorted by date.
pub fn predict_daily(model: &Regressor, series: &[EmbeddingTensor]) -> Result<Vec<DailyPrediction>> {
    if series.windows(2).any(|w| w[0].date > w[1].date) {
        return Err(Error::Data("embedding series not sorted by date".into()));
    }
    let mut by_day: BTreeMap<NaiveDate, Vec<(SensorKind, f64)>> = BTreeMap::new();
    for i in 0..series.len() {
        let w = build_window_at(series, i, model.config().window)?;
        let y = model.regress_fraction(&w, series)?;
        by_day.entry(series[i].date).or_default().push((series[i].sensor, y));
    }
    by_day.into_iter().map(|(d, p)| fuse_daily(d, &p)).collect()
}

/// Combines per-member daily predictions. Members must cover the same dates;
/// `fused` becomes the ensemble mean and per-sensor values are averaged.
pub fn combine_ensemble(members: &[Vec<DailyPrediction>]) -> Result<Vec<DailyPrediction>> {
    let first = members.first().ok_or_else(|| Error::Data("empty ensemble".into()))?;
    if members.iter().any(|m| m.len() != first.len()) {
        return Err(Error::Data("ensemble members cover different dates".into()));
    }
    (0..first.len())
        .map(|i| {
            let date = first[i].date;
            if members.iter().any(|m| m[i].date != date) {
                return Err(Error::Data(format!("ensemble members disagree on date at row {i}")));
            }
            let stats = EnsembleStats::from_values(&members.iter().map(|m| m[i].fused).collect::<Vec<_>>())?;
            let observations = SensorKind::ALL
                .into_iter()
                .filter_map(|s| {
                    let v: Vec<f64> = members.iter().filter_map(|m| m[i].sensor_value(s)).collect();
                    (!v.is_empty()).then(|| (s, v.iter().sum::<f64>() / v.len() as f64))
                })
                .collect();
            Ok(DailyPrediction {
                date,
                observations,
                fused: stats.mean,
                ensemble: Some(stats),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `date,MODIS,VIIRS,SAR,fused,ensemble_mu,ensemble_sigma`; absent
/// values are empty cells. `ensemble_sigma` is the population variance.
pub fn write_predictions_csv<W: Write>(out: &mut W, predictions: &[DailyPrediction]) -> Result<()> {
    let sensors = SensorKind::ALL.map(|s| s.name()).join(",");
    writeln!(out, "date,{sensors},fused,ensemble_mu,ensemble_sigma")?;
    for p in predictions {
        let per_sensor: Vec<String> = SensorKind::ALL.iter().map(|&s| opt(p.sensor_value(s))).collect();
        writeln!(
            out,
            "{},{},{:.6},{},{}",
            p.date,
            per_sensor.join(","),
            p.fused,
            opt(p.ensemble.map(|e| e.mean)),
            opt(p.ensemble.map(|e| e.variance)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, d).unwrap()
    }

    fn emb(d: u32, s: SensorKind, fill: f64) -> EmbeddingTensor {
        let cfg = RegressorConfig::miniature();
        EmbeddingTensor::new(Tensor::full(&cfg.embedding_shape(), fill), s, day(d), cfg.embedding_shape()).unwrap()
    }

    fn dense_series() -> Vec<EmbeddingTensor> {
        (1..=10).map(|d| emb(d, SensorKind::Modis, d as f64)).collect()
    }

    /// Oracle: brute-force scan for the closest date, earlier on ties.
    fn scan_nearest(dates: &[NaiveDate], nominal: NaiveDate) -> NaiveDate {
        let mut best = dates[0];
        for &d in dates {
            let (db, dd) = ((best - nominal).num_days().abs(), (d - nominal).num_days().abs());
            if dd < db || (dd == db && d < best) {
                best = d;
            }
        }
        best
    }

    #[test]
    fn dense_series_fills_exact_days() {
        let s = dense_series();
        let w = build_window(&s, day(5), 7).unwrap();
        let dates: Vec<_> = w.slots.iter().map(|s| s.date).collect();
        assert_eq!(dates, (2..=8).map(day).collect::<Vec<_>>());
        assert_eq!(w.gap_count(), 0);
        assert_eq!(w.slots.iter().map(|s| s.offset).collect::<Vec<_>>(), vec![-3, -2, -1, 0, 1, 2, 3]);
    }

    #[test]
    fn series_start_borrows_later_days() {
        let s = dense_series();
        let w = build_window(&s, day(1), 7).unwrap();
        let dates: Vec<_> = w.slots.iter().map(|s| s.date).collect();
        assert_eq!(dates, vec![day(1), day(1), day(1), day(1), day(2), day(3), day(4)]);
        assert_eq!(w.gap_count(), 3);
        assert!(w.slots[..3].iter().all(|s| s.gap_filled));
    }

    #[test]
    fn gaps_match_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s: Vec<EmbeddingTensor> = (1..=20)
                .filter(|_| rng.random_bool(0.5))
                .map(|d| emb(d, SensorKind::Viirs, 0.0))
                .collect();
            if s.is_empty() {
                continue;
            }
            let dates: Vec<_> = s.iter().map(|e| e.date).collect();
            let center = dates[rng.random_range(0..dates.len())];
            let w = build_window(&s, center, 7).unwrap();
            assert_eq!(w.slots.len(), 7);
            for slot in &w.slots {
                let nominal = center + chrono::Duration::days(slot.offset);
                assert_eq!(slot.date, scan_nearest(&dates, nominal));
                assert_eq!(slot.gap_filled, slot.date != nominal);
            }
        }
    }

    #[test]
    fn same_day_priority_prefers_sar() {
        let s = vec![
            emb(3, SensorKind::Modis, 0.0),
            emb(3, SensorKind::Viirs, 0.0),
            emb(4, SensorKind::Modis, 0.0),
            emb(4, SensorKind::Sar, 0.0),
            emb(5, SensorKind::Viirs, 0.0),
        ];
        let w = build_window(&s, day(4), 3).unwrap();
        assert_eq!(w.slots[0].sensor, SensorKind::Viirs);
        assert_eq!(w.slots[1].sensor, SensorKind::Sar);
        // an explicit centre keeps its own observation
        let w = build_window_at(&s, 2, 3).unwrap();
        assert_eq!(w.center_slot().sensor, SensorKind::Modis);
        assert_eq!(w.slots[1].index, 2);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(build_window(&[], day(1), 7), Err(Error::Data(_))));
        assert!(matches!(build_window(&dense_series(), day(20), 7), Err(Error::Data(_))));
        assert!(matches!(build_window(&dense_series(), day(2), 4), Err(Error::Config(_))));
    }

    #[test]
    fn output_bounded_and_shape_checked() {
        let cfg = RegressorConfig::miniature();
        let m = Regressor::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let ts: Vec<Tensor> = (0..cfg.window)
                .map(|_| {
                    let n = cfg.embedding_shape().iter().product();
                    Tensor::from_vec(&cfg.embedding_shape(), (0..n).map(|_| rng.random_range(-50.0..50.0)).collect())
                })
                .collect();
            let y = m.predict(&ts.iter().collect::<Vec<_>>()).unwrap();
            assert!((0.0..=1.0).contains(&y));
        }
        let bad = Tensor::zeros(&[1, 4, 4]);
        assert!(matches!(m.predict(&[&bad, &bad, &bad]), Err(Error::Shape(_))));
        let ok = Tensor::zeros(&cfg.embedding_shape());
        assert!(matches!(m.predict(&[&ok]), Err(Error::Shape(_))));
    }

    #[test]
    fn default_layout_matches_design() {
        let m = Regressor::new(RegressorConfig::default(), 0).unwrap();
        assert_eq!(m.post_convs[0].in_channels(), 56);
        assert_eq!(m.dense.weight.shape(), &[1, 16 * 144]);
        assert_eq!(m.day_convs.iter().map(|c| c.out_channels()).collect::<Vec<_>>(), vec![32, 16, 8]);
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse_daily(day(1), &[(SensorKind::Sar, 0.7)]).unwrap().fused, 0.7);
        let p = fuse_daily(day(1), &[(SensorKind::Modis, 0.2), (SensorKind::Viirs, 0.4)]).unwrap();
        assert!((p.fused - 0.3).abs() < 1e-15);
        assert!(matches!(fuse_daily(day(1), &[]), Err(Error::Data(_))));
    }

    #[test]
    fn ensemble_of_identical_members_has_zero_spread() {
        let p = vec![fuse_daily(day(1), &[(SensorKind::Modis, 0.25)]).unwrap()];
        let e = combine_ensemble(&[p.clone(), p.clone(), p]).unwrap();
        assert_eq!(e[0].ensemble.unwrap().variance, 0.0);
        assert_eq!(e[0].fused, 0.25);
    }

    #[test]
    fn csv_has_empty_cells_for_missing_sensors() {
        let p = vec![fuse_daily(day(2), &[(SensorKind::Viirs, 0.5)]).unwrap()];
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "date,MODIS,VIIRS,SAR,fused,ensemble_mu,ensemble_sigma\n2017-01-02,,0.500000,,0.500000,,\n"
        );
    }
}
