use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{SensorKind, SensorObservation};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Smallest standard deviation used when standardising a channel.
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-sensor, per-channel standardisation fitted on a training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub sensors: BTreeMap<SensorKind, ChannelStats>,
}

impl Normalization {
    /// Optical statistics use valid lake pixels; SAR statistics use the
    /// whole crop, land included, since the encoder sees all of it.
    pub fn fit<'a>(observations: impl IntoIterator<Item = &'a SensorObservation>) -> Self {
        let mut acc: BTreeMap<SensorKind, (Vec<f64>, Vec<f64>, f64)> = BTreeMap::new();
        for o in observations {
            let c = o.sensor.channels();
            let (sum, sq, n) = acc.entry(o.sensor).or_insert_with(|| (vec![0.0; c], vec![0.0; c], 0.0));
            let v = o.values();
            for r in 0..v.rows() {
                for col in 0..v.cols() {
                    if o.sensor.is_optical() && !*o.valid_mask().get(r, col) {
                        continue;
                    }
                    for (k, &x) in v.pixel(r, col).iter().enumerate() {
                        sum[k] += x as f64;
                        sq[k] += (x as f64) * (x as f64);
                    }
                    *n += 1.0;
                }
            }
        }
        let sensors = acc
            .into_iter()
            .filter(|(_, (_, _, n))| *n > 0.0)
            .map(|(s, (sum, sq, n))| {
                let mean: Vec<f64> = sum.iter().map(|x| x / n).collect();
                let std = sq
                    .iter()
                    .zip(&mean)
                    .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
                    .collect();
                (s, ChannelStats { mean, std })
            })
            .collect();
        Normalization { sensors }
    }

    /// Standardised CHW network input; every cell, background included, is
    /// transformed the same way.
    pub fn apply(&self, obs: &SensorObservation) -> Result<Tensor> {
        let stats = self
            .sensors
            .get(&obs.sensor)
            .ok_or_else(|| Error::Data(format!("no normalisation statistics for {}", obs.sensor)))?;
        let v = obs.values();
        let (h, w, c) = (v.rows(), v.cols(), v.channels());
        if stats.mean.len() != c {
            return Err(Error::Shape(format!("{} statistics for {} channels, input has {c}", obs.sensor, stats.mean.len())));
        }
        let mut t = Tensor::zeros(&[c, h, w]);
        let d = t.data_mut();
        for r in 0..h {
            for col in 0..w {
                for (k, &x) in v.pixel(r, col).iter().enumerate() {
                    d[(k * h + r) * w + col] = (x as f64 - stats.mean[k]) / stats.std[k];
                }
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Grid, Raster};
    use chrono::NaiveDate;

    #[test]
    fn optical_stats_ignore_invalid_cells() {
        let mut values = Raster::zeros(12, 12, 5);
        values.pixel_mut(0, 0).fill(2.0);
        values.pixel_mut(0, 1).fill(4.0);
        values.pixel_mut(5, 5).fill(100.0);
        let mask = Grid::from_fn(12, 12, |r, c| r == 0 && c < 2);
        let d = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
        let obs = SensorObservation::new(SensorKind::Viirs, d, "x", values, mask, 3).unwrap();
        let n = Normalization::fit([&obs]);
        let s = &n.sensors[&SensorKind::Viirs];
        assert_eq!(s.mean, vec![3.0; 5]);
        assert_eq!(s.std, vec![1.0; 5]);
        let t = n.apply(&obs).unwrap();
        assert_eq!(t.shape(), &[5, 12, 12]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[2], -3.0);
    }
}
