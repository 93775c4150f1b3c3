use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::sensor::SensorKind;
use crate::error::{Error, Result};

/// Default minimum cloud-free share for optical acquisitions (compared strictly).
pub const CLOUD_THRESHOLD: f64 = 0.3;

/// Multi-channel image stored height-width-channel, as on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Raster {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::Shape(format!(
                "raster {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        Ok(Raster {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f32] {
        let i = (r * self.cols + c) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, r: usize, c: usize) -> &mut [f32] {
        let i = (r * self.cols + c) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// One dated acquisition of one lake by one sensor, shaped as a network patch.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservation {
    pub sensor: SensorKind,
    pub date: NaiveDate,
    pub lake_id: String,
    values: Raster,
    valid_mask: Grid<bool>,
    clean_pixels: usize,
}

impl SensorObservation {
    /// `clean_pixels` is the number of clean lake pixels in the patch, cloudy
    /// or not; it is the denominator of the cloud-free fraction.
    pub fn new(
        sensor: SensorKind,
        date: NaiveDate,
        lake_id: impl Into<String>,
        values: Raster,
        valid_mask: Grid<bool>,
        clean_pixels: usize,
    ) -> Result<Self> {
        let (h, w) = sensor.patch_shape();
        if (values.rows(), values.cols(), values.channels()) != (h, w, sensor.channels()) {
            return Err(Error::Shape(format!(
                "{sensor} patch must be {h}x{w}x{}, got {}x{}x{}",
                sensor.channels(),
                values.rows(),
                values.cols(),
                values.channels()
            )));
        }
        if valid_mask.shape() != (h, w) {
            return Err(Error::Shape(format!("{sensor} valid mask must be {h}x{w}")));
        }
        if clean_pixels == 0 {
            return Err(Error::NoCleanPixels);
        }
        if valid_mask.count_true() > clean_pixels {
            return Err(Error::Data(format!(
                "{sensor} {date}: {} valid pixels exceed {clean_pixels} clean pixels",
                valid_mask.count_true()
            )));
        }
        Ok(SensorObservation {
            sensor,
            date,
            lake_id: lake_id.into(),
            values,
            valid_mask,
            clean_pixels,
        })
    }

    pub fn values(&self) -> &Raster {
        &self.values
    }

    pub fn valid_mask(&self) -> &Grid<bool> {
        &self.valid_mask
    }

    pub fn clean_pixels(&self) -> usize {
        self.clean_pixels
    }

    /// Valid (clean and cloud-free) pixels over clean pixels.
    pub fn cloud_free_fraction(&self) -> f64 {
        self.valid_mask.count_true() as f64 / self.clean_pixels as f64
    }
}

/// Value of one clean pixel on the sensor's native grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPixel {
    pub row: usize,
    pub col: usize,
    pub values: Vec<f32>,
    pub cloud_free: bool,
}

/// Clean-pixel values of one acquisition on its native grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPixelValues {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<CleanPixel>,
}

/// Shift `(row, col)` subtracted from native positions to land in the patch.
///
/// Native grids that fit the patch keep their positions; larger ones are
/// shifted so the clean-pixel bounding box starts at the patch origin.
pub fn patch_offset(
    native: (usize, usize),
    bbox: ((usize, usize), (usize, usize)),
    patch: (usize, usize),
) -> Result<(usize, usize)> {
    let ((r0, c0), (r1, c1)) = bbox;
    if r1 - r0 + 1 > patch.0 || c1 - c0 + 1 > patch.1 {
        return Err(Error::LakeTooLarge);
    }
    let dr = if native.0 <= patch.0 { 0 } else { r0 };
    let dc = if native.1 <= patch.1 { 0 } else { c0 };
    Ok((dr, dc))
}

/// Bounding box `((rmin, cmin), (rmax, cmax))` of the true cells.
pub fn mask_bbox(mask: &Grid<bool>) -> Option<((usize, usize), (usize, usize))> {
    let mut bbox: Option<((usize, usize), (usize, usize))> = None;
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            if *mask.get(r, c) {
                bbox = Some(match bbox {
                    None => ((r, c), (r, c)),
                    Some(((r0, c0), (r1, c1))) => ((r0.min(r), c0.min(c)), (r1.max(r), c1.max(c))),
                });
            }
        }
    }
    bbox
}

/// Places clean-pixel values into a zero-filled patch for `sensor`.
pub fn pad_to_patch(
    input: &CleanPixelValues,
    sensor: SensorKind,
    lake_id: &str,
    date: NaiveDate,
) -> Result<SensorObservation> {
    if input.pixels.is_empty() {
        return Err(Error::NoCleanPixels);
    }
    let mut seen = Grid::filled(input.rows, input.cols, false);
    for p in &input.pixels {
        if p.row >= input.rows || p.col >= input.cols {
            return Err(Error::Data(format!("clean pixel ({}, {}) outside native grid", p.row, p.col)));
        }
        if p.values.len() != sensor.channels() {
            return Err(Error::Shape(format!(
                "{sensor} pixel has {} channels, expected {}",
                p.values.len(),
                sensor.channels()
            )));
        }
        if *seen.get(p.row, p.col) {
            return Err(Error::Data(format!("duplicate clean pixel ({}, {})", p.row, p.col)));
        }
        seen.set(p.row, p.col, true);
    }
    let bbox = mask_bbox(&seen).expect("non-empty");
    let patch = sensor.patch_shape();
    let (dr, dc) = patch_offset((input.rows, input.cols), bbox, patch)?;
    let mut values = Raster::zeros(patch.0, patch.1, sensor.channels());
    let mut valid = Grid::filled(patch.0, patch.1, false);
    for p in &input.pixels {
        let (r, c) = (p.row - dr, p.col - dc);
        values.pixel_mut(r, c).copy_from_slice(&p.values);
        valid.set(r, c, p.cloud_free);
    }
    SensorObservation::new(sensor, date, lake_id, values, valid, input.pixels.len())
}

/// Keep/drop decision for an acquisition; SAR is never cloud-limited.
pub fn filter_by_cloud_fraction(obs: &SensorObservation, threshold: f64) -> bool {
    !obs.sensor.is_optical() || obs.cloud_free_fraction() > threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, 5).unwrap()
    }

    fn pixel(row: usize, col: usize, v: f32, cloud_free: bool, ch: usize) -> CleanPixel {
        CleanPixel {
            row,
            col,
            values: vec![v; ch],
            cloud_free,
        }
    }

    #[test]
    fn four_clean_pixels_give_four_valid_cells() {
        let input = CleanPixelValues {
            rows: 12,
            cols: 12,
            pixels: vec![
                pixel(5, 5, 0.1, true, 12),
                pixel(5, 6, 0.2, true, 12),
                pixel(6, 5, 0.3, true, 12),
                pixel(6, 6, 0.4, true, 12),
            ],
        };
        let obs = pad_to_patch(&input, SensorKind::Modis, "stmoritz", day()).unwrap();
        assert_eq!(obs.valid_mask().count_true(), 4);
        assert_eq!(obs.values().pixel(6, 5)[0], 0.3);
        assert_eq!(obs.values().pixel(0, 0), &[0.0; 12]);
        assert_eq!(obs.cloud_free_fraction(), 1.0);
    }

    #[test]
    fn no_clean_pixels_errors() {
        let input = CleanPixelValues {
            rows: 12,
            cols: 12,
            pixels: vec![],
        };
        assert!(matches!(
            pad_to_patch(&input, SensorKind::Viirs, "x", day()),
            Err(Error::NoCleanPixels)
        ));
    }

    #[test]
    fn full_region_is_identity() {
        let pixels = (0..144).map(|i| pixel(i / 12, i % 12, 1.0, true, 5)).collect();
        let input = CleanPixelValues {
            rows: 12,
            cols: 12,
            pixels,
        };
        let obs = pad_to_patch(&input, SensorKind::Viirs, "x", day()).unwrap();
        assert!(obs.values().data().iter().all(|&v| v == 1.0));
        assert_eq!(obs.valid_mask().count_true(), 144);
    }

    #[test]
    fn oversized_lake_rejected() {
        let input = CleanPixelValues {
            rows: 20,
            cols: 20,
            pixels: vec![pixel(0, 0, 1.0, true, 12), pixel(13, 0, 1.0, true, 12)],
        };
        assert!(matches!(
            pad_to_patch(&input, SensorKind::Modis, "x", day()),
            Err(Error::LakeTooLarge)
        ));
    }

    #[test]
    fn large_native_grid_shifts_to_origin() {
        let input = CleanPixelValues {
            rows: 30,
            cols: 30,
            pixels: vec![pixel(20, 21, 2.0, true, 12), pixel(22, 25, 3.0, false, 12)],
        };
        let obs = pad_to_patch(&input, SensorKind::Modis, "x", day()).unwrap();
        assert_eq!(obs.values().pixel(0, 0)[0], 2.0);
        assert_eq!(obs.values().pixel(2, 4)[0], 3.0);
        assert!(!*obs.valid_mask().get(2, 4));
        assert_eq!(obs.cloud_free_fraction(), 0.5);
    }

    #[test]
    fn cloud_filter_is_strict() {
        let mk = |valid: usize, clean: usize, sensor: SensorKind| {
            let (h, w) = sensor.patch_shape();
            let mask = Grid::from_fn(h, w, |r, c| r * w + c < valid);
            SensorObservation::new(sensor, day(), "x", Raster::zeros(h, w, sensor.channels()), mask, clean).unwrap()
        };
        assert!(filter_by_cloud_fraction(&mk(31, 100, SensorKind::Modis), CLOUD_THRESHOLD));
        assert!(!filter_by_cloud_fraction(&mk(30, 100, SensorKind::Modis), CLOUD_THRESHOLD));
        assert!(filter_by_cloud_fraction(&mk(0, 100, SensorKind::Sar), CLOUD_THRESHOLD));
    }

    #[test]
    fn observation_shape_checked() {
        let r = SensorObservation::new(
            SensorKind::Sar,
            day(),
            "x",
            Raster::zeros(12, 12, 2),
            Grid::filled(12, 12, false),
            1,
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
