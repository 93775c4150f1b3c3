//! Figure-style artifacts: water-fraction time series and t-SNE projections
//! of the learnt embedding, each written as SVG plus the plotted data as CSV.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use plotters::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{LakeWinter, PixelClass, SensorKind};
use crate::error::{Error, Result};
use crate::evaluation::{evaluation_mask, WaterFractionSeries};
use crate::model::{argmax_classes, water_fraction_from_map};
use crate::temporal::DailyPrediction;
use crate::training::Pipeline;

/// Exact (O(n²)) t-SNE settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

fn sq_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-conditional affinities with the Gaussian precision found by
/// bisection so each row's perplexity matches the target.
fn conditional_affinities(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-row[j] * beta).exp();
                sum += w;
                weighted += row[j] * w;
            }
            let sum = sum.max(f64::MIN_POSITIVE);
            let entropy = sum.ln() + beta * weighted / sum;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let mut sum = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let w = (-row[j] * beta).exp();
            p[i * n + j] = w;
            sum += w;
        }
        let sum = sum.max(f64::MIN_POSITIVE);
        for j in 0..n {
            p[i * n + j] /= sum;
        }
    }
    p
}

/// Low-dimensional embedding of `points`. Perplexity is capped at
/// `(n - 1) / 3` for small inputs; the value used is returned.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = points.len();
    if n < 4 {
        return Err(Error::Data(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if cfg.dims == 0 {
        return Err(Error::Config("t-SNE output dimension must be positive".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("t-SNE points differ in dimension".into()));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    let d = sq_distances(points);
    let cond = conditional_affinities(&d, n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let k = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..n * k).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; n * k];
    let mut gains = vec![1.0; n * k];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * k];
    for it in 0..cfg.iterations {
        let exaggerate = it < cfg.exaggeration_iterations;
        let scale = if exaggerate { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dist: f64 = (0..k).map(|c| (y[i * k + c] - y[j * k + c]).powi(2)).sum();
                let q = 1.0 / (1.0 + dist);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let q = num[i * n + j];
                let m = 4.0 * (scale * p[i * n + j] - q / z) * q;
                for c in 0..k {
                    grad[i * k + c] += m * (y[i * k + c] - y[j * k + c]);
                }
            }
        }
        for idx in 0..n * k {
            let same_sign = (grad[idx] > 0.0) == (velocity[idx] > 0.0);
            gains[idx] = if same_sign { (gains[idx] * 0.8f64).max(0.01) } else { gains[idx] + 0.2 };
            velocity[idx] = momentum * velocity[idx] - cfg.learning_rate * gains[idx] * grad[idx];
            y[idx] += velocity[idx];
        }
        for c in 0..k {
            let mean = (0..n).map(|i| y[i * k + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * k + c] -= mean);
        }
    }
    Ok(((0..n).map(|i| y[i * k..(i + 1) * k].to_vec()).collect(), perplexity))
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if n != labels.len() || n < 2 {
        return Err(Error::Shape("silhouette needs matching points and labels".into()));
    }
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(Error::Data("silhouette needs at least two clusters".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = std::collections::BTreeMap::new();
        for j in (0..n).filter(|&j| j != i) {
            let e = sums.entry(labels[j]).or_insert((0.0, 0));
            e.0 += dist(&points[i], &points[j]);
            e.1 += 1;
        }
        let Some(&(own, own_n)) = sums.get(&labels[i]) else {
            continue;
        };
        let a = own / own_n as f64;
        let b = sums
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, (s, c))| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

/// Training accuracy of a logistic-regression probe on standardised inputs.
pub fn linear_probe_accuracy(points: &[Vec<f64>], labels: &[bool]) -> Result<f64> {
    let n = points.len();
    if n != labels.len() || n == 0 {
        return Err(Error::Shape("probe needs matching, non-empty points and labels".into()));
    }
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|c| points.iter().map(|p| p[c]).sum::<f64>() / n as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|c| (points.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12))
        .collect();
    let x: Vec<Vec<f64>> = points.iter().map(|p| (0..d).map(|c| (p[c] - mean[c]) / std[c]).collect()).collect();
    let mut w = vec![0.0; d + 1];
    for _ in 0..2000 {
        let mut g = vec![0.0; d + 1];
        for (xi, &yi) in x.iter().zip(labels) {
            let z = w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = crate::nn::sigmoid(z) - if yi { 1.0 } else { 0.0 };
            for c in 0..d {
                g[c] += err * xi[c];
            }
            g[d] += err;
        }
        for (wc, gc) in w.iter_mut().zip(&g) {
            *wc -= 0.5 * gc / n as f64;
        }
    }
    let correct = x
        .iter()
        .zip(labels)
        .filter(|(xi, &yi)| (w[d] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0) == yi)
        .count();
    Ok(correct as f64 / n as f64)
}

/// One observation summarised for the embedding plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub lake_id: String,
    pub winter: String,
    pub sensor: SensorKind,
    pub date: NaiveDate,
    /// Embedding averaged over the scored lake pixels.
    pub vector: Vec<f64>,
    /// Water fraction of the segmentation output.
    pub predicted_fraction: f64,
    /// Day class on non-transition days.
    pub label: Option<PixelClass>,
}

pub fn embedding_points(pipeline: &Pipeline, data: &[&LakeWinter]) -> Result<Vec<EmbeddingPoint>> {
    let mut out = Vec::new();
    for lw in data {
        let embeddings = pipeline.embed_lake_winter(lw)?;
        for (obs, emb) in lw.observations.iter().zip(embeddings) {
            let mask = evaluation_mask(lw, obs)?;
            let n = mask.count_true();
            if n == 0 {
                continue;
            }
            let (c, h, w) = emb.values.chw();
            let vector: Vec<f64> = (0..c)
                .map(|k| {
                    let ch = &emb.values.data()[k * h * w..(k + 1) * h * w];
                    mask.iter().zip(ch).filter(|(m, _)| **m).map(|(_, v)| v).sum::<f64>() / n as f64
                })
                .collect();
            let classes = argmax_classes(&pipeline.model.segment(&emb.values)?);
            out.push(EmbeddingPoint {
                lake_id: lw.lake.id().into(),
                winter: lw.winter.clone(),
                sensor: obs.sensor,
                date: obs.date,
                vector,
                predicted_fraction: water_fraction_from_map(&classes, &mask)?,
                label: lw.label(obs.date).and_then(|l| l.day_class()),
            });
        }
    }
    Ok(out)
}

/// Quality figures of a projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub points: usize,
    /// Frozen vs open-water probe accuracy on labelled points.
    pub probe_accuracy: Option<f64>,
    /// Silhouette of the sensor grouping.
    pub sensor_silhouette: Option<f64>,
}

pub fn summarize_projection(coords: &[Vec<f64>], points: &[EmbeddingPoint], cfg: &TsneConfig, perplexity: f64) -> ProjectionSummary {
    let labelled: Vec<(Vec<f64>, bool)> = coords
        .iter()
        .zip(points)
        .filter_map(|(c, p)| p.label.map(|l| (c.clone(), l == PixelClass::NonFrozen)))
        .collect();
    let probe_accuracy = {
        let (x, y): (Vec<_>, Vec<_>) = labelled.into_iter().unzip();
        let both = y.iter().any(|&b| b) && y.iter().any(|&b| !b);
        both.then(|| linear_probe_accuracy(&x, &y).ok()).flatten()
    };
    let sensors: Vec<usize> = points.iter().map(|p| p.sensor.slot_priority() as usize).collect();
    ProjectionSummary {
        dims: cfg.dims,
        perplexity,
        iterations: cfg.iterations,
        points: points.len(),
        probe_accuracy,
        sensor_silhouette: silhouette(coords, &sensors).ok(),
    }
}

pub fn embedding_csv(coords: &[Vec<f64>], points: &[EmbeddingPoint]) -> String {
    let dims = coords.first().map_or(0, Vec::len);
    let axes: Vec<String> = (0..dims).map(|i| format!("tsne{}", i + 1)).collect();
    let mut s = format!("lake,winter,sensor,date,predicted_fraction,label,{}\n", axes.join(","));
    for (c, p) in coords.iter().zip(points) {
        let cs: Vec<String> = c.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{},{}",
            p.lake_id,
            p.winter,
            p.sensor,
            p.date,
            p.predicted_fraction,
            p.label.map_or("transition", |l| l.name()),
            cs.join(",")
        );
    }
    s
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Blue (frozen) to red (open water).
fn fraction_color(f: f64) -> RGBColor {
    let f = f.clamp(0.0, 1.0);
    RGBColor((40.0 + 200.0 * f) as u8, 60, (240.0 - 200.0 * f) as u8)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// 2-D or 3-D scatter: colour encodes predicted water fraction, marker
/// shape the sensor (circle SAR, triangle VIIRS, cross MODIS).
pub fn plot_embedding(path: &Path, title: &str, coords: &[Vec<f64>], points: &[EmbeddingPoint]) -> Result<()> {
    if coords.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let root = SVGBackend::new(path, (900, 760)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let dims = coords[0].len();
    let (x0, x1) = bounds(coords.iter().map(|c| c[0]));
    let (y0, y1) = bounds(coords.iter().map(|c| c[1]));
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 22)).margin(20).x_label_area_size(30).y_label_area_size(40);
    let marker = |x: (f64, f64, f64), p: &EmbeddingPoint| -> (f64, f64, f64, SensorKind, RGBColor) {
        (x.0, x.1, x.2, p.sensor, fraction_color(p.predicted_fraction))
    };
    let items: Vec<_> = coords
        .iter()
        .zip(points)
        .map(|(c, p)| marker((c[0], c[1], c.get(2).copied().unwrap_or(0.0)), p))
        .collect();
    if dims >= 3 {
        let (z0, z1) = bounds(coords.iter().map(|c| c[2]));
        let mut chart = builder.build_cartesian_3d(x0..x1, y0..y1, z0..z1).map_err(plot_err)?;
        chart.configure_axes().draw().map_err(plot_err)?;
        for s in SensorKind::ALL {
            chart
                .draw_series(items.iter().filter(|i| i.3 == s).map(|&(x, y, z, _, col)| Circle::new((x, z, y), 3, col.filled())))
                .map_err(plot_err)?
                .label(s.name())
                .legend(move |(x, y)| Circle::new((x, y), 4, BLACK.filled()));
        }
    } else {
        let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(plot_err)?;
        chart.configure_mesh().x_desc("t-SNE 1").y_desc("t-SNE 2").draw().map_err(plot_err)?;
        let pts = |s: SensorKind| items.iter().filter(move |i| i.3 == s).map(|&(x, y, _, _, c)| (x, y, c));
        chart
            .draw_series(pts(SensorKind::Sar).map(|(x, y, c)| Circle::new((x, y), 3, c.filled())))
            .map_err(plot_err)?
            .label("SAR")
            .legend(|(x, y)| Circle::new((x, y), 4, BLACK.filled()));
        chart
            .draw_series(pts(SensorKind::Viirs).map(|(x, y, c)| TriangleMarker::new((x, y), 4, c.filled())))
            .map_err(plot_err)?
            .label("VIIRS")
            .legend(|(x, y)| TriangleMarker::new((x, y), 4, BLACK.filled()));
        chart
            .draw_series(pts(SensorKind::Modis).map(|(x, y, c)| Cross::new((x, y), 3, c.stroke_width(2))))
            .map_err(plot_err)?
            .label("MODIS")
            .legend(|(x, y)| Cross::new((x, y), 4, BLACK.stroke_width(2)));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// September 1 of the year a winter starts in.
fn axis_origin(first: NaiveDate) -> NaiveDate {
    let year = if first.month() >= 9 { first.year() } else { first.year() - 1 };
    NaiveDate::from_ymd_opt(year, 9, 1).expect("valid date")
}

const MONTH_COLORS: [RGBColor; 9] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
    RGBColor(188, 189, 34),
];

/// Reference line plus fused predictions coloured by month on a Sep–May axis.
pub fn plot_timeseries(path: &Path, reference: &WaterFractionSeries, predictions: &[DailyPrediction]) -> Result<()> {
    let first = reference
        .points()
        .first()
        .map(|p| p.0)
        .or_else(|| predictions.first().map(|p| p.date))
        .ok_or_else(|| Error::Data("nothing to plot".into()))?;
    let origin = axis_origin(first);
    let end = NaiveDate::from_ymd_opt(origin.year() + 1, 6, 1).expect("valid date");
    let x = |d: NaiveDate| (d - origin).num_days() as f64;
    let root = SVGBackend::new(path, (1000, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{} {}", reference.lake_id, reference.winter), ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0.0..x(end), -0.02..1.02)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .y_desc("fraction of water")
        .x_labels(10)
        .x_label_formatter(&|v| (origin + chrono::Duration::days(*v as i64)).format("%b").to_string())
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(reference.points().iter().map(|&(d, f)| (x(d), f)), BLACK.stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(predictions.iter().map(|p| {
            let month = (p.date.month0() + 4) % 12;
            let color = MONTH_COLORS[(month as usize).min(MONTH_COLORS.len() - 1)];
            Circle::new((x(p.date), p.fused), 3, color.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// `date,reference,fused`: one row per date present in either series.
pub fn timeseries_csv(reference: &WaterFractionSeries, predictions: &[DailyPrediction]) -> String {
    let mut rows: std::collections::BTreeMap<NaiveDate, (Option<f64>, Option<f64>)> = Default::default();
    for &(d, f) in reference.points() {
        rows.entry(d).or_default().0 = Some(f);
    }
    for p in predictions {
        rows.entry(p.date).or_default().1 = Some(p.fused);
    }
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("date,reference,fused\n");
    for (d, (r, f)) in rows {
        let _ = writeln!(s, "{d},{},{}", cell(r), cell(f));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -5.0 } else { 5.0 };
            pts.push((0..5).map(|_| centre + rng.random_range(-1.0..1.0)).collect());
            labels.push(c);
        }
        (pts, labels)
    }

    #[test]
    fn tsne_separates_blobs() {
        let (pts, labels) = blobs(40, 1);
        let (y, perp) = tsne(&pts, &TsneConfig::default()).unwrap();
        assert_eq!(perp, 13.0);
        assert!(silhouette(&y, &labels).unwrap() > 0.9);
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        assert_eq!(linear_probe_accuracy(&y, &truth).unwrap(), 1.0);
    }

    #[test]
    fn tsne_is_seed_deterministic() {
        let (pts, _) = blobs(12, 2);
        let cfg = TsneConfig {
            iterations: 50,
            dims: 3,
            ..TsneConfig::default()
        };
        assert_eq!(tsne(&pts, &cfg).unwrap(), tsne(&pts, &cfg).unwrap());
        assert_eq!(tsne(&pts, &cfg).unwrap().0[0].len(), 3);
    }

    #[test]
    fn silhouette_matches_hand_value() {
        // clusters {0, 1} and {4}: a(0) = 1, b(0) = 4 -> 0.75; a(1) = 1,
        // b(1) = 3 -> 2/3; singleton scores 0
        let pts = vec![vec![0.0], vec![1.0], vec![4.0]];
        let s = silhouette(&pts, &[0, 0, 1]).unwrap();
        assert!((s - (0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }
}
