//! Seeded generator of multi-sensor lake-winter seasons with known truth.
//!
//! Each lake lives in a 12×12 frame (MODIS pixel units). The lake state on a
//! day is a threshold of a smooth random freeze field against a double-sigmoid
//! water fraction, so freezing proceeds spatially coherently. Optical sensors
//! see spectral class signatures with noise and clouds; SAR sees backscatter
//! with multiplicative speckle and is cloud-free.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::calendar::{AcquisitionCalendar, SeasonWindow};
use super::dataset::{Dataset, Lake, LakeWinter};
use super::geometry::{contains_point, GridSpec};
use super::labels::DayLabel;
use super::observation::{
    filter_by_cloud_fraction, pad_to_patch, CleanPixel, CleanPixelValues, Raster, SensorObservation, CLOUD_THRESHOLD,
};
use super::sensor::SensorKind;
use crate::error::{Error, Result};

/// Frame side length shared by every synthetic grid.
pub const FRAME: f64 = 12.0;

/// Range of the freeze field; open water where the field is below the
/// current water fraction.
const FIELD_LO: f64 = 0.05;
const FIELD_HI: f64 = 0.95;

/// Simulation settings of one sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSimConfig {
    /// Optical: std of additive reflectance noise and relative gain jitter.
    /// SAR: speckle std in linear intensity (equivalent number of looks is
    /// `1 / noise²`).
    pub noise: f64,
    pub cloud_probability: f64,
    pub revisit_days: u32,
    #[serde(default)]
    pub phase_days: u32,
}

/// Native grids of the synthetic sensors in the 12×12 frame.
pub fn synthetic_grids() -> BTreeMap<SensorKind, GridSpec> {
    BTreeMap::from([
        (SensorKind::Modis, GridSpec::new([0.0, 0.0], 1.0, 12, 12)),
        (SensorKind::Viirs, GridSpec::new([0.0, 0.0], 1.5, 8, 8)),
        (SensorKind::Sar, GridSpec::new([0.0, 0.0], FRAME / 128.0, 128, 128)),
    ])
}

/// Configuration of one synthetic lake-winter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSeasonConfig {
    pub seed: u64,
    pub lake_id: String,
    pub winter: String,
    pub season: SeasonWindow,
    pub freeze_up_center: NaiveDate,
    /// Logistic rate in 1/day; larger is steeper.
    pub freeze_up_steepness: f64,
    pub break_up_center: NaiveDate,
    pub break_up_steepness: f64,
    /// Lake outline in frame coordinates.
    pub polygon: Vec<[f64; 2]>,
    pub sensors: BTreeMap<SensorKind, SensorSimConfig>,
}

impl SyntheticSeasonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freeze_up_center >= self.break_up_center {
            return Err(Error::Config("freeze-up centre must precede break-up centre".into()));
        }
        if !(self.freeze_up_steepness > 0.0 && self.break_up_steepness > 0.0) {
            return Err(Error::Config("sigmoid steepness must be positive".into()));
        }
        for (sensor, s) in &self.sensors {
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return Err(Error::Config(format!("{sensor} noise must be >= 0")));
            }
            if !(0.0..=1.0).contains(&s.cloud_probability) {
                return Err(Error::Config(format!("{sensor} cloud probability outside [0, 1]")));
            }
            if !sensor.is_optical() && s.cloud_probability != 0.0 {
                return Err(Error::Config("SAR cloud probability must be 0".into()));
            }
            if s.revisit_days == 0 {
                return Err(Error::Config(format!("{sensor} revisit period must be >= 1 day")));
            }
        }
        Ok(())
    }

    /// Open-water fraction of the generating double sigmoid on day `d`.
    pub fn true_fraction(&self, d: NaiveDate) -> f64 {
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        let t_f = (d - self.freeze_up_center).num_days() as f64;
        let t_b = (d - self.break_up_center).num_days() as f64;
        (1.0 - logistic(self.freeze_up_steepness * t_f) + logistic(self.break_up_steepness * t_b)).clamp(0.0, 1.0)
    }
}

/// Generator output: the lake-winter plus its calendar and generating curve.
#[derive(Clone, Debug)]
pub struct SyntheticSeason {
    pub lake_winter: LakeWinter,
    pub calendar: AcquisitionCalendar,
    /// `(date, true_fraction)` for every season day.
    pub truth: Vec<(NaiveDate, f64)>,
}

/// Smooth scalar field: a sum of Gaussian bumps plus a linear trend.
struct FreezeField {
    bumps: Vec<([f64; 2], f64, f64)>,
    trend: [f64; 2],
    sorted: Vec<f64>,
}

impl FreezeField {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let bumps = (0..8)
            .map(|_| {
                let c = [rng.random_range(0.0..FRAME), rng.random_range(0.0..FRAME)];
                let sigma = rng.random_range(1.5..4.0);
                let amp = rng.random_range(-1.0..1.0);
                (c, sigma, amp)
            })
            .collect();
        let trend = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        FreezeField {
            bumps,
            trend,
            sorted: Vec::new(),
        }
    }

    fn raw(&self, p: [f64; 2]) -> f64 {
        let mut v = self.trend[0] * p[0] + self.trend[1] * p[1];
        for (c, s, a) in &self.bumps {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            v += a * (-d2 / (2.0 * s * s)).exp();
        }
        v
    }

    /// Equalizes the field against reference samples so that the share of
    /// reference points with `u < f` tracks `f` linearly.
    fn calibrate(&mut self, reference: &[[f64; 2]]) {
        let mut s: Vec<f64> = reference.iter().map(|&p| self.raw(p)).collect();
        s.sort_by(f64::total_cmp);
        self.sorted = s;
    }

    fn value(&self, p: [f64; 2]) -> f64 {
        let r = self.raw(p);
        let n = self.sorted.len();
        let rank = self.sorted.partition_point(|&v| v < r) as f64;
        let q = if n > 1 { (rank / (n - 1) as f64).min(1.0) } else { 0.5 };
        FIELD_LO + (FIELD_HI - FIELD_LO) * q
    }
}

/// Reflectance signatures per optical sensor: (snow-covered ice, bare ice, water).
fn optical_signatures(sensor: SensorKind) -> (&'static [f64], &'static [f64], &'static [f64]) {
    match sensor {
        SensorKind::Modis => (
            &[0.80, 0.78, 0.75, 0.70, 0.62, 0.30, 0.12, 0.72, 0.76, 0.68, 0.20, 0.10],
            &[0.30, 0.28, 0.26, 0.22, 0.18, 0.08, 0.04, 0.26, 0.28, 0.24, 0.06, 0.03],
            &[0.06, 0.05, 0.07, 0.04, 0.03, 0.02, 0.01, 0.08, 0.06, 0.05, 0.02, 0.01],
        ),
        SensorKind::Viirs => (
            &[0.78, 0.72, 0.58, 0.22, 0.20],
            &[0.28, 0.24, 0.18, 0.06, 0.20],
            &[0.06, 0.04, 0.03, 0.02, 0.35],
        ),
        SensorKind::Sar => unreachable!("SAR has no reflectance signature"),
    }
}

/// Mean backscatter (VV, VH) in dB.
const SAR_WATER_DB: [f64; 2] = [-20.0, -27.0];
const SAR_ICE_DB: [f64; 2] = [-12.0, -19.0];
const SAR_LAND_DB: [f64; 2] = [-7.0, -13.0];
/// Backscatter increase of wind-roughened open water.
const SAR_WIND_DB: [f64; 2] = [3.0, 2.0];
const SAR_WIND_PROBABILITY: f64 = 0.2;

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Sub-pixel sample offsets (in cell units) for mixed-pixel coverage.
fn subsamples(n: usize) -> Vec<[f64; 2]> {
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push([(j as f64 + 0.5) / n as f64, (i as f64 + 0.5) / n as f64]);
        }
    }
    v
}

fn is_acquisition_day(season: &SeasonWindow, d: NaiveDate, cfg: &SensorSimConfig) -> bool {
    let k = (d - season.start).num_days() - cfg.phase_days as i64;
    k >= 0 && k % cfg.revisit_days as i64 == 0
}

/// Generates one lake-winter deterministically from `config.seed`.
pub fn generate_synthetic_season(config: &SyntheticSeasonConfig) -> Result<SyntheticSeason> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let grids = synthetic_grids();
    let lake = Lake::new(config.lake_id.clone(), config.polygon.clone(), grids.clone())?;

    // freeze field calibrated on the finest grid's clean pixel centres
    let reference_grid = grids[&SensorKind::Sar];
    let reference_mask = &lake.geometry(SensorKind::Sar).expect("SAR grid").clean_pixel_mask;
    let mut reference = Vec::new();
    for r in 0..reference_grid.rows {
        for c in 0..reference_grid.cols {
            if *reference_mask.get(r, c) {
                reference.push(reference_grid.center(r, c));
            }
        }
    }
    if reference.is_empty() {
        return Err(Error::NoCleanPixels);
    }
    let mut field = FreezeField::new(&mut rng);
    field.calibrate(&reference);
    let reference_u: Vec<f64> = reference.iter().map(|&p| field.value(p)).collect();

    // optical clean pixels with their sub-pixel field values
    let sub = subsamples(4);
    let mut optical_u: BTreeMap<SensorKind, Vec<(usize, usize, Vec<f64>)>> = BTreeMap::new();
    for (&sensor, grid) in &grids {
        if !sensor.is_optical() {
            continue;
        }
        let mask = &lake.geometry(sensor).expect("grid").clean_pixel_mask;
        let mut pixels = Vec::new();
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                if *mask.get(r, c) {
                    let o = grid.corner(r, c);
                    let us = sub
                        .iter()
                        .map(|s| field.value([o[0] + s[0] * grid.cell_size, o[1] + s[1] * grid.cell_size]))
                        .collect();
                    pixels.push((r, c, us));
                }
            }
        }
        optical_u.insert(sensor, pixels);
    }
    let all_u = reference_u
        .iter()
        .copied()
        .chain(optical_u.values().flatten().flat_map(|(_, _, us)| us.iter().copied()));
    let (u_min, u_max) = all_u.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)));

    // SAR per-pixel lake coverage and field value
    let sar_grid = grids[&SensorKind::Sar];
    let sar_sub = subsamples(3);
    let sar_pixels: Vec<(f64, f64)> = (0..sar_grid.rows * sar_grid.cols)
        .map(|i| {
            let (r, c) = (i / sar_grid.cols, i % sar_grid.cols);
            let o = sar_grid.corner(r, c);
            let inside = sar_sub
                .iter()
                .filter(|s| contains_point(&config.polygon, [o[0] + s[0] * sar_grid.cell_size, o[1] + s[1] * sar_grid.cell_size]))
                .count();
            let coverage = inside as f64 / sar_sub.len() as f64;
            (coverage, field.value(sar_grid.center(r, c)))
        })
        .collect();
    // slowly varying land backscatter texture
    let land_field = FreezeField::new(&mut rng);
    let land_offset: Vec<f64> = (0..sar_grid.rows * sar_grid.cols)
        .map(|i| 2.0 * land_field.raw(sar_grid.center(i / sar_grid.cols, i % sar_grid.cols)))
        .collect();

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut observations = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for d in config.season.days() {
        let f = config.true_fraction(d);
        truth.push((d, f));
        let water_fraction = reference_u.iter().filter(|&&u| u < f).count() as f64 / reference_u.len() as f64;
        let all_frozen = f <= u_min;
        let all_water = f > u_max;
        let label = if all_frozen {
            DayLabel::new(d, 0.0, false)?
        } else if all_water {
            DayLabel::new(d, 1.0, false)?
        } else {
            DayLabel::new(d, water_fraction, true)?
        };
        labels.push(label);
        // snow cover on the ice for this day, shared by all sensors
        let snow: f64 = rng.random_range(0.3..1.0);

        for (&sensor, sim) in &config.sensors {
            if !is_acquisition_day(&config.season, d, sim) || lake.clean_pixel_count(sensor) == 0 {
                continue;
            }
            let obs = if sensor.is_optical() {
                simulate_optical(sensor, sim, &optical_u[&sensor], f, snow, &lake, d, &mut rng, &unit)?
            } else {
                simulate_sar(sim, &sar_pixels, &land_offset, f, &lake, d, &mut rng, &unit)?
            };
            if filter_by_cloud_fraction(&obs, CLOUD_THRESHOLD) {
                observations.push(obs);
            }
        }
    }
    let lake_winter = LakeWinter::new(lake, config.winter.clone(), config.season, observations, labels)?;
    let calendar = lake_winter.calendar()?;
    Ok(SyntheticSeason {
        lake_winter,
        calendar,
        truth,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_optical(
    sensor: SensorKind,
    sim: &SensorSimConfig,
    pixels: &[(usize, usize, Vec<f64>)],
    f: f64,
    snow: f64,
    lake: &Lake,
    date: NaiveDate,
    rng: &mut ChaCha8Rng,
    unit: &Normal<f64>,
) -> Result<SensorObservation> {
    let (snow_sig, bare_sig, water_sig) = optical_signatures(sensor);
    let n = pixels.len();
    // cloud cover: overcast days keep at most 30% of the lake
    let cloudy: Vec<bool> = if rng.random_bool(sim.cloud_probability) {
        let keep = ((rng.random_range(0.0..CLOUD_THRESHOLD) * n as f64).floor() as usize).min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let mut c = vec![true; n];
        for &i in &idx[..keep] {
            c[i] = false;
        }
        c
    } else if sim.cloud_probability > 0.0 && rng.random_bool(0.5) {
        // one cloud blob covering at most half the lake
        let (cr, cc) = (rng.random_range(0.0..12.0), rng.random_range(0.0..12.0));
        let mut radius: f64 = rng.random_range(1.0..4.0);
        loop {
            let c: Vec<bool> = pixels
                .iter()
                .map(|(r, col, _)| ((*r as f64 + 0.5 - cr).powi(2) + (*col as f64 + 0.5 - cc).powi(2)).sqrt() < radius)
                .collect();
            if c.iter().filter(|&&x| x).count() * 2 <= n || radius < 0.1 {
                break c;
            }
            radius *= 0.8;
        }
    } else {
        vec![false; n]
    };
    let gain = 1.0 + sim.noise * unit.sample(rng);
    let grid = lake.geometry(sensor).expect("optical grid").grid;
    let mut clean = Vec::with_capacity(n);
    for (i, (r, c, us)) in pixels.iter().enumerate() {
        let water = us.iter().filter(|&&u| u < f).count() as f64 / us.len() as f64;
        let values = if cloudy[i] {
            vec![0.0; sensor.channels()]
        } else {
            (0..sensor.channels())
                .map(|b| {
                    let ice = snow * snow_sig[b] + (1.0 - snow) * bare_sig[b];
                    let mean = water * water_sig[b] + (1.0 - water) * ice;
                    (gain * mean + sim.noise * unit.sample(rng)) as f32
                })
                .collect()
        };
        clean.push(CleanPixel {
            row: *r,
            col: *c,
            values,
            cloud_free: !cloudy[i],
        });
    }
    let input = CleanPixelValues {
        rows: grid.rows,
        cols: grid.cols,
        pixels: clean,
    };
    pad_to_patch(&input, sensor, lake.id(), date)
}

#[allow(clippy::too_many_arguments)]
fn simulate_sar(
    sim: &SensorSimConfig,
    pixels: &[(f64, f64)],
    land_offset: &[f64],
    f: f64,
    lake: &Lake,
    date: NaiveDate,
    rng: &mut ChaCha8Rng,
    unit: &Normal<f64>,
) -> Result<SensorObservation> {
    let sensor = SensorKind::Sar;
    let (h, w) = sensor.patch_shape();
    let windy = rng.random_bool(SAR_WIND_PROBABILITY);
    let offset = 2.0 * sim.noise * unit.sample(rng);
    let speckle = if sim.noise > 0.0 {
        let looks = 1.0 / (sim.noise * sim.noise);
        Some(Gamma::new(looks, 1.0 / looks).map_err(|e| Error::Config(format!("speckle: {e}")))?)
    } else {
        None
    };
    let mut values = Raster::zeros(h, w, 2);
    for (i, &(coverage, u)) in pixels.iter().enumerate() {
        let lake_db = if u < f {
            let mut db = SAR_WATER_DB;
            if windy {
                db[0] += SAR_WIND_DB[0];
                db[1] += SAR_WIND_DB[1];
            }
            db
        } else {
            SAR_ICE_DB
        };
        let px = values.pixel_mut(i / w, i % w);
        for ch in 0..2 {
            let land = db_to_linear(SAR_LAND_DB[ch] + land_offset[i]);
            let mut intensity = coverage * db_to_linear(lake_db[ch]) + (1.0 - coverage) * land;
            if let Some(g) = &speckle {
                intensity *= g.sample(rng);
            }
            px[ch] = (10.0 * intensity.max(1e-6).log10() + offset) as f32;
        }
    }
    let mask = lake.patch_mask(sensor).expect("SAR grid").clone();
    let clean = mask.count_true();
    SensorObservation::new(sensor, date, lake.id(), values, mask, clean)
}

/// One synthetic lake in a multi-lake dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLakeSpec {
    pub id: String,
    pub center: [f64; 2],
    /// Mean radius in frame units.
    pub radius: f64,
    /// Relative amplitude of the outline's harmonic wobble.
    pub roughness: f64,
}

/// One synthetic winter shared by all lakes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWinterSpec {
    pub id: String,
    pub season: SeasonWindow,
    pub freeze_up_center: NaiveDate,
    pub break_up_center: NaiveDate,
}

/// Lakes × winters grid of synthetic seasons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetConfig {
    pub seed: u64,
    pub lakes: Vec<SyntheticLakeSpec>,
    pub winters: Vec<SyntheticWinterSpec>,
    pub steepness: f64,
    /// Per lake-winter shift of the event dates, uniform in ±jitter days.
    pub date_jitter_days: i64,
    pub sensors: BTreeMap<SensorKind, SensorSimConfig>,
}

impl SyntheticDatasetConfig {
    /// Four lakes of decreasing size over two winters; sized so the whole
    /// staged pipeline trains on one CPU core in minutes.
    pub fn desk(seed: u64) -> Self {
        let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        let lake = |id: &str, cx, cy, radius, roughness| SyntheticLakeSpec {
            id: id.into(),
            center: [cx, cy],
            radius,
            roughness,
        };
        let winter = |id: &str, y: i32| SyntheticWinterSpec {
            id: id.into(),
            season: SeasonWindow {
                start: ymd(y, 11, 20),
                end: ymd(y + 1, 4, 10),
            },
            freeze_up_center: ymd(y + 1, 1, 1),
            break_up_center: ymd(y + 1, 3, 10),
        };
        SyntheticDatasetConfig {
            seed,
            lakes: vec![
                lake("alpha", 6.0, 6.0, 5.0, 0.08),
                lake("bravo", 6.2, 5.8, 4.2, 0.12),
                lake("charlie", 5.8, 6.1, 3.4, 0.10),
                lake("delta", 6.0, 6.0, 2.3, 0.05),
            ],
            winters: vec![winter("2016-17", 2016), winter("2017-18", 2017)],
            steepness: 0.8,
            date_jitter_days: 6,
            sensors: BTreeMap::from([
                (
                    SensorKind::Modis,
                    SensorSimConfig {
                        noise: 0.03,
                        cloud_probability: 0.5,
                        revisit_days: 1,
                        phase_days: 0,
                    },
                ),
                (
                    SensorKind::Viirs,
                    SensorSimConfig {
                        noise: 0.03,
                        cloud_probability: 0.5,
                        revisit_days: 1,
                        phase_days: 0,
                    },
                ),
                (
                    SensorKind::Sar,
                    SensorSimConfig {
                        noise: 0.5,
                        cloud_probability: 0.0,
                        revisit_days: 12,
                        phase_days: 3,
                    },
                ),
            ]),
        }
    }

    /// Per lake-winter generator configs, in `(lake, winter)` order.
    pub fn expand(&self) -> Result<Vec<SyntheticSeasonConfig>> {
        if self.lakes.is_empty() || self.winters.is_empty() {
            return Err(Error::Config("synthetic dataset needs at least one lake and one winter".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let polygons: Vec<Vec<[f64; 2]>> = self.lakes.iter().map(|l| lake_outline(l, &mut rng)).collect();
        let mut out = Vec::new();
        for (lake, polygon) in self.lakes.iter().zip(&polygons) {
            for winter in &self.winters {
                let j = self.date_jitter_days.max(0);
                let shift_f = rng.random_range(-j..=j);
                let shift_b = rng.random_range(-j..=j);
                out.push(SyntheticSeasonConfig {
                    seed: rng.random(),
                    lake_id: lake.id.clone(),
                    winter: winter.id.clone(),
                    season: winter.season,
                    freeze_up_center: winter.freeze_up_center + Duration::days(shift_f),
                    freeze_up_steepness: self.steepness,
                    break_up_center: winter.break_up_center + Duration::days(shift_b),
                    break_up_steepness: self.steepness,
                    polygon: polygon.clone(),
                    sensors: self.sensors.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// A generated multi-lake dataset with the generating curves.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub configs: Vec<SyntheticSeasonConfig>,
    /// Keyed by lake-winter key.
    pub truth: BTreeMap<String, Vec<(NaiveDate, f64)>>,
}

pub fn generate_synthetic_dataset(config: &SyntheticDatasetConfig) -> Result<SyntheticDataset> {
    let configs = config.expand()?;
    let mut lake_winters = Vec::with_capacity(configs.len());
    let mut truth = BTreeMap::new();
    for c in &configs {
        let season = generate_synthetic_season(c)?;
        truth.insert(season.lake_winter.key(), season.truth);
        lake_winters.push(season.lake_winter);
    }
    Ok(SyntheticDataset {
        dataset: Dataset::new(lake_winters)?,
        configs,
        truth,
    })
}

/// Star-shaped (hence simple) outline with a few harmonics.
fn lake_outline(spec: &SyntheticLakeSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let harmonics: Vec<(f64, f64)> = (2..5)
        .map(|_| (rng.random_range(-1.0..1.0) * spec.roughness, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let n = 24;
    (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            let wobble: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(k, (a, phase))| a * ((k + 2) as f64 * theta + phase).cos())
                .sum();
            let r = spec.radius * (1.0 + wobble);
            let x = (spec.center[0] + r * theta.cos()).clamp(0.0, FRAME);
            let y = (spec.center[1] + r * theta.sin()).clamp(0.0, FRAME);
            [x, y]
        })
        .collect()
}
