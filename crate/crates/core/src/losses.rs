//! Training objectives and their gradients.
//!
//! Segmentation uses cross entropy over supervised pixels. The temporal
//! regressor minimises `mse + β·line + γ·idc`, where the line term penalises
//! departures of a mini-batch from a straight trend and the intra-day
//! coherence term penalises disagreement between predictions of one day.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{Grid, PixelClass};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weights of the auxiliary regression terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { beta: 0.25, gamma: 0.08 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.beta >= 0.0 && self.gamma >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be >= 0 (beta {}, gamma {})", self.beta, self.gamma)))
        }
    }
}

fn check_seg_shapes(t: &Tensor, labels: &Grid<PixelClass>, supervised: &Grid<bool>) -> Result<(usize, usize)> {
    let (c, h, w) = t.chw();
    if c != PixelClass::COUNT || labels.shape() != (h, w) || supervised.shape() != (h, w) {
        return Err(Error::Shape(format!(
            "segmentation output {c}x{h}x{w} vs labels {:?} and mask {:?}",
            labels.shape(),
            supervised.shape()
        )));
    }
    Ok((h, w))
}

/// Mean negative log-likelihood of the labelled class over supervised pixels.
///
/// `probs` is `[3, H, W]`, normalised per pixel.
pub fn masked_cross_entropy(probs: &Tensor, labels: &Grid<PixelClass>, supervised: &Grid<bool>) -> Result<f64> {
    let (h, w) = check_seg_shapes(probs, labels, supervised)?;
    let hw = h * w;
    let p = probs.data();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..hw {
        if supervised.as_slice()[i] {
            let k = labels.as_slice()[i].index();
            total -= p[k * hw + i].max(PROB_FLOOR).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(total / n as f64)
}

/// Per-pixel softmax over the channel axis of a `[C, H, W]` tensor.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let (c, h, w) = logits.chw();
    let hw = h * w;
    let x = logits.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let y = out.data_mut();
    for i in 0..hw {
        let max = (0..c).map(|k| x[k * hw + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..c {
            let e = (x[k * hw + i] - max).exp();
            y[k * hw + i] = e;
            z += e;
        }
        for k in 0..c {
            y[k * hw + i] /= z;
        }
    }
    out
}

/// Summed cross entropy of softmax(logits) over supervised pixels, times
/// `scale`, with its gradient w.r.t. the logits.
///
/// Callers pass `scale = 1 / (supervised pixels in the batch)` so that
/// accumulating over samples yields the batch mean.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &Grid<PixelClass>,
    supervised: &Grid<bool>,
    scale: f64,
) -> Result<(f64, Tensor)> {
    let (h, w) = check_seg_shapes(logits, labels, supervised)?;
    let hw = h * w;
    let x = logits.data();
    let mut grad = Tensor::zeros(&[PixelClass::COUNT, h, w]);
    let g = grad.data_mut();
    let mut loss = 0.0;
    for i in 0..hw {
        if !supervised.as_slice()[i] {
            continue;
        }
        let max = (0..3).map(|k| x[k * hw + i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..3).map(|k| (x[k * hw + i] - max).exp()).sum();
        let log_z = max + z.ln();
        let target = labels.as_slice()[i].index();
        loss += log_z - x[target * hw + i];
        for k in 0..3 {
            let p = (x[k * hw + i] - log_z).exp();
            g[k * hw + i] = scale * (p - if k == target { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    Ok(mse_loss_grad(predictions, targets)?.0)
}

pub fn mse_loss_grad(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("mse of an empty batch".into()));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let grad = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Straight line through the first prediction with slope `(y_last − y_first) / b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn from_predictions(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::Data(format!("line loss needs at least 2 predictions, got {}", y.len())));
        }
        let b = y.len() as f64;
        Ok(LineFit {
            slope: (y[y.len() - 1] - y[0]) / b,
            intercept: y[0],
        })
    }

    pub fn at(&self, i: usize) -> f64 {
        self.slope * i as f64 + self.intercept
    }
}

/// Mean perpendicular distance of the predictions from their [`LineFit`].
pub fn line_loss(y: &[f64]) -> Result<f64> {
    Ok(line_loss_grad(y)?.0)
}

pub fn line_loss_grad(y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let fit = LineFit::from_predictions(y)?;
    let b = y.len();
    let bf = b as f64;
    let m = fit.slope;
    let s = (m * m + 1.0).sqrt();
    let mut loss = 0.0;
    let mut d_m = 0.0;
    let mut d_c = 0.0;
    let mut grad = vec![0.0; b];
    for (i, &yi) in y.iter().enumerate() {
        let r = fit.at(i) - yi;
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        loss += r.abs() / s;
        d_m += sign * i as f64 / s - r.abs() * m / (s * s * s);
        d_c += sign / s;
        grad[i] -= sign / s / bf;
    }
    d_m /= bf;
    d_c /= bf;
    grad[0] += d_c - d_m / bf;
    grad[b - 1] += d_m / bf;
    Ok((loss / bf, grad))
}

/// Average population variance of predictions sharing a day, over days with
/// at least two predictions; 0 when no day repeats.
pub fn intra_day_coherence_loss(y: &[f64], days: &[NaiveDate]) -> Result<f64> {
    Ok(intra_day_coherence_grad(y, days)?.0)
}

pub fn intra_day_coherence_grad(y: &[f64], days: &[NaiveDate]) -> Result<(f64, Vec<f64>)> {
    if y.len() != days.len() {
        return Err(Error::Shape(format!("{} predictions vs {} days", y.len(), days.len())));
    }
    let mut groups: std::collections::BTreeMap<NaiveDate, Vec<usize>> = Default::default();
    for (i, d) in days.iter().enumerate() {
        groups.entry(*d).or_default().push(i);
    }
    let repeated: Vec<&Vec<usize>> = groups.values().filter(|g| g.len() >= 2).collect();
    let mut grad = vec![0.0; y.len()];
    if repeated.is_empty() {
        return Ok((0.0, grad));
    }
    let k = repeated.len() as f64;
    let mut loss = 0.0;
    for g in repeated {
        let n = g.len() as f64;
        let mean = g.iter().map(|&i| y[i]).sum::<f64>() / n;
        loss += g.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / n;
        for &i in g {
            grad[i] = 2.0 * (y[i] - mean) / (n * k);
        }
    }
    Ok((loss / k, grad))
}

/// Date-ordered predictions and targets of one regression mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionBatch {
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub days: Vec<NaiveDate>,
}

impl RegressionBatch {
    pub fn new(predictions: Vec<f64>, targets: Vec<f64>, days: Vec<NaiveDate>) -> Result<Self> {
        if predictions.len() != targets.len() || predictions.len() != days.len() {
            return Err(Error::Shape("regression batch fields differ in length".into()));
        }
        if predictions.len() < 2 {
            return Err(Error::Data("regression batch needs at least 2 entries".into()));
        }
        if days.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Data("regression batch not sorted by date".into()));
        }
        Ok(RegressionBatch {
            predictions,
            targets,
            days,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Per-term values of the regression objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionLossParts {
    pub mse: f64,
    pub line: f64,
    pub idc: f64,
    pub total: f64,
}

pub fn regression_loss(batch: &RegressionBatch, weights: LossWeights) -> Result<f64> {
    Ok(regression_loss_grad(batch, weights)?.0.total)
}

/// Loss terms and the gradient of the weighted total w.r.t. the predictions.
pub fn regression_loss_grad(batch: &RegressionBatch, weights: LossWeights) -> Result<(RegressionLossParts, Vec<f64>)> {
    weights.validate()?;
    let (mse, g_mse) = mse_loss_grad(&batch.predictions, &batch.targets)?;
    let (line, g_line) = line_loss_grad(&batch.predictions)?;
    let (idc, g_idc) = intra_day_coherence_grad(&batch.predictions, &batch.days)?;
    let grad = (0..batch.len())
        .map(|i| g_mse[i] + weights.beta * g_line[i] + weights.gamma * g_idc[i])
        .collect();
    Ok((
        RegressionLossParts {
            mse,
            line,
            idc,
            total: mse + weights.beta * line + weights.gamma * idc,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(i: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, i).unwrap()
    }

    #[test]
    fn worked_line_example() {
        let l = line_loss(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        // d = [0, .75/√1.0625, .5/√1.0625, .25/√1.0625]
        let s = 1.0625f64.sqrt();
        let oracle = (0.75 + 0.5 + 0.25) / s / 4.0;
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.3638).abs() < 5e-5);
    }

    #[test]
    fn collinear_but_not_on_fit_line() {
        let fit = LineFit::from_predictions(&[0.0, 0.25, 0.5, 0.75]).unwrap();
        assert_eq!(fit.slope, 0.1875);
        assert!(line_loss(&[0.0, 0.25, 0.5, 0.75]).unwrap() > 0.0);
        assert_eq!(line_loss(&[0.4; 4]).unwrap(), 0.0);
        assert!(line_loss(&[0.4]).is_err());
    }

    #[test]
    fn idc_examples() {
        let v = intra_day_coherence_loss(&[0.2, 0.4, 0.9], &[day(1), day(1), day(2)]).unwrap();
        assert!((v - 0.01).abs() < 1e-15);
        assert_eq!(intra_day_coherence_loss(&[0.2, 0.4], &[day(1), day(2)]).unwrap(), 0.0);
        assert_eq!(intra_day_coherence_loss(&[0.3, 0.3], &[day(1), day(1)]).unwrap(), 0.0);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let labels = Grid::filled(2, 2, PixelClass::Frozen);
        let mask = Grid::filled(2, 2, true);
        let uniform = Tensor::full(&[3, 2, 2], 1.0 / 3.0);
        let l = masked_cross_entropy(&uniform, &labels, &mask).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let mut onehot = Tensor::zeros(&[3, 2, 2]);
        onehot.data_mut()[..4].fill(1.0);
        assert_eq!(masked_cross_entropy(&onehot, &labels, &mask).unwrap(), 0.0);
        let none = Grid::filled(2, 2, false);
        assert!(matches!(masked_cross_entropy(&uniform, &labels, &none), Err(Error::NoValidPixels)));
    }

    #[test]
    fn softmax_ce_agrees_with_probability_form() {
        let logits = Tensor::from_vec(&[3, 1, 2], vec![0.3, -1.0, 2.0, 0.1, -0.5, 0.7]);
        let labels = Grid::from_vec(1, 2, vec![PixelClass::NonFrozen, PixelClass::Background]);
        let mask = Grid::filled(1, 2, true);
        let (sum, _) = softmax_cross_entropy(&logits, &labels, &mask, 0.5).unwrap();
        let mean = masked_cross_entropy(&softmax_channels(&logits), &labels, &mask).unwrap();
        assert!((sum - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_reduce_to_mse() {
        let b = RegressionBatch::new(vec![0.1, 0.7, 0.2, 0.9], vec![0.0, 1.0, 0.0, 1.0], vec![day(1), day(1), day(2), day(3)]).unwrap();
        let w = LossWeights { beta: 0.0, gamma: 0.0 };
        assert_eq!(regression_loss(&b, w).unwrap(), mse_loss(&b.predictions, &b.targets).unwrap());
        let perfect = RegressionBatch::new(vec![0.5; 4], vec![0.5; 4], vec![day(1), day(1), day(2), day(3)]).unwrap();
        assert_eq!(regression_loss(&perfect, LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn defaults_match_published_weights() {
        let w = LossWeights::default();
        assert_eq!((w.beta, w.gamma), (0.25, 0.08));
    }
}
