use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::calendar::{AcquisitionCalendar, SeasonWindow};
use super::geometry::{GridSpec, LakeGeometry};
use super::grid::Grid;
use super::labels::{DayLabel, PixelClass};
use super::observation::{mask_bbox, patch_offset, SensorObservation};
use super::sensor::SensorKind;
use crate::error::{Error, Result};

/// Side length of the embedding grid every sensor is mapped onto.
pub const EMBEDDING_SIZE: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LakeRecord {
    id: String,
    polygon: Vec<[f64; 2]>,
    grids: BTreeMap<SensorKind, GridSpec>,
}

/// A lake outline together with its rasterizations on every sensor grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LakeRecord", into = "LakeRecord")]
pub struct Lake {
    id: String,
    polygon: Vec<[f64; 2]>,
    grids: BTreeMap<SensorKind, GridSpec>,
    geometries: BTreeMap<SensorKind, LakeGeometry>,
    patch_masks: BTreeMap<SensorKind, Grid<bool>>,
    embedding_masks: BTreeMap<SensorKind, Grid<bool>>,
}

impl TryFrom<LakeRecord> for Lake {
    type Error = Error;

    fn try_from(r: LakeRecord) -> Result<Self> {
        Lake::new(r.id, r.polygon, r.grids)
    }
}

impl From<Lake> for LakeRecord {
    fn from(l: Lake) -> Self {
        LakeRecord {
            id: l.id,
            polygon: l.polygon,
            grids: l.grids,
        }
    }
}

impl Lake {
    /// Rasterizes the polygon on each sensor grid. A sensor without any clean
    /// pixel is kept but has empty masks; it cannot produce observations.
    pub fn new(id: impl Into<String>, polygon: Vec<[f64; 2]>, grids: BTreeMap<SensorKind, GridSpec>) -> Result<Self> {
        let id = id.into();
        let mut geometries = BTreeMap::new();
        let mut patch_masks = BTreeMap::new();
        let mut embedding_masks = BTreeMap::new();
        for (&sensor, grid) in &grids {
            let geom = LakeGeometry::new(id.clone(), *grid, polygon.clone())?;
            let (ph, pw) = sensor.patch_shape();
            let mut patch = Grid::filled(ph, pw, false);
            let mut emb_grid = None;
            if let Some(bbox) = mask_bbox(&geom.clean_pixel_mask) {
                let (dr, dc) = patch_offset((grid.rows, grid.cols), bbox, (ph, pw))?;
                for r in 0..grid.rows {
                    for c in 0..grid.cols {
                        if *geom.clean_pixel_mask.get(r, c) {
                            patch.set(r - dr, c - dc, true);
                        }
                    }
                }
                let origin = grid.corner(dr, dc);
                emb_grid = Some(GridSpec::new(
                    origin,
                    grid.cell_size * ph as f64 / EMBEDDING_SIZE as f64,
                    EMBEDDING_SIZE,
                    EMBEDDING_SIZE,
                ));
            }
            let emb = if ph == EMBEDDING_SIZE && pw == EMBEDDING_SIZE {
                patch.clone()
            } else {
                match emb_grid {
                    Some(g) => LakeGeometry::new(id.clone(), g, polygon.clone())?.clean_pixel_mask,
                    None => Grid::filled(EMBEDDING_SIZE, EMBEDDING_SIZE, false),
                }
            };
            geometries.insert(sensor, geom);
            patch_masks.insert(sensor, patch);
            embedding_masks.insert(sensor, emb);
        }
        Ok(Lake {
            id,
            polygon,
            grids,
            geometries,
            patch_masks,
            embedding_masks,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn polygon(&self) -> &[[f64; 2]] {
        &self.polygon
    }

    pub fn sensors(&self) -> impl Iterator<Item = SensorKind> + '_ {
        self.grids.keys().copied()
    }

    pub fn geometry(&self, sensor: SensorKind) -> Option<&LakeGeometry> {
        self.geometries.get(&sensor)
    }

    /// Clean lake pixels in the sensor's patch coordinates.
    pub fn patch_mask(&self, sensor: SensorKind) -> Option<&Grid<bool>> {
        self.patch_masks.get(&sensor)
    }

    /// Clean lake pixels of the sensor's footprint on the 12×12 embedding grid.
    pub fn embedding_mask(&self, sensor: SensorKind) -> Option<&Grid<bool>> {
        self.embedding_masks.get(&sensor)
    }

    pub fn clean_pixel_count(&self, sensor: SensorKind) -> usize {
        self.geometries.get(&sensor).map_or(0, |g| g.clean_pixel_count())
    }
}

/// All observations and labels of one lake during one winter.
#[derive(Clone, Debug, PartialEq)]
pub struct LakeWinter {
    pub lake: Lake,
    pub winter: String,
    pub season: SeasonWindow,
    /// Sorted by date, then slot priority.
    pub observations: Vec<SensorObservation>,
    pub labels: BTreeMap<NaiveDate, DayLabel>,
}

impl LakeWinter {
    pub fn new(
        lake: Lake,
        winter: impl Into<String>,
        season: SeasonWindow,
        mut observations: Vec<SensorObservation>,
        labels: Vec<DayLabel>,
    ) -> Result<Self> {
        let winter = winter.into();
        observations.sort_by_key(|o| (o.date, o.sensor.slot_priority()));
        for o in &observations {
            if o.lake_id != lake.id {
                return Err(Error::Data(format!("observation of lake '{}' filed under '{}'", o.lake_id, lake.id)));
            }
            if !season.contains(o.date) {
                return Err(Error::Data(format!("{} observation {} outside season", o.sensor, o.date)));
            }
            if lake.clean_pixel_count(o.sensor) != o.clean_pixels() {
                return Err(Error::Data(format!(
                    "{} {}: clean pixel count {} disagrees with lake geometry ({})",
                    o.sensor,
                    o.date,
                    o.clean_pixels(),
                    lake.clean_pixel_count(o.sensor)
                )));
            }
        }
        let mut map = BTreeMap::new();
        for l in labels {
            l.validate()?;
            if map.insert(l.date, l).is_some() {
                return Err(Error::Data("duplicate label date".into()));
            }
        }
        Ok(LakeWinter {
            lake,
            winter,
            season,
            observations,
            labels: map,
        })
    }

    /// Directory-style key `{lake}_{winter}`.
    pub fn key(&self) -> String {
        format!("{}_{}", self.lake.id(), self.winter)
    }

    pub fn label(&self, date: NaiveDate) -> Option<&DayLabel> {
        self.labels.get(&date)
    }

    pub fn calendar(&self) -> Result<AcquisitionCalendar> {
        AcquisitionCalendar::from_observations(self.season, &self.observations)
    }

    /// Class map for an observation at patch resolution; `None` on transition
    /// or unlabeled days.
    pub fn patch_labels(&self, obs: &SensorObservation) -> Option<Grid<PixelClass>> {
        self.label(obs.date)?.class_map(self.lake.patch_mask(obs.sensor)?)
    }

    /// Class map for an observation on the 12×12 embedding grid.
    pub fn embedding_labels(&self, obs: &SensorObservation) -> Option<Grid<PixelClass>> {
        self.label(obs.date)?.class_map(self.lake.embedding_mask(obs.sensor)?)
    }

    /// Label water fractions of all labelled days, date-sorted.
    pub fn label_series(&self) -> Vec<(NaiveDate, f64)> {
        self.labels.values().map(|l| (l.date, l.water_fraction)).collect()
    }
}

/// A collection of lake-winters, ordered by `(lake, winter)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub lake_winters: Vec<LakeWinter>,
}

impl Dataset {
    pub fn new(mut lake_winters: Vec<LakeWinter>) -> Result<Self> {
        lake_winters.sort_by(|a, b| (a.lake.id(), &a.winter).cmp(&(b.lake.id(), &b.winter)));
        if lake_winters.windows(2).any(|w| w[0].key() == w[1].key()) {
            return Err(Error::Data("duplicate lake-winter".into()));
        }
        Ok(Dataset { lake_winters })
    }

    pub fn lakes(&self) -> BTreeSet<String> {
        self.lake_winters.iter().map(|lw| lw.lake.id().to_string()).collect()
    }

    pub fn winters(&self) -> BTreeSet<String> {
        self.lake_winters.iter().map(|lw| lw.winter.clone()).collect()
    }

    pub fn get(&self, lake: &str, winter: &str) -> Option<&LakeWinter> {
        self.lake_winters.iter().find(|lw| lw.lake.id() == lake && lw.winter == winter)
    }

    pub fn observations(&self) -> impl Iterator<Item = (&LakeWinter, &SensorObservation)> {
        self.lake_winters.iter().flat_map(|lw| lw.observations.iter().map(move |o| (lw, o)))
    }

    pub fn is_empty(&self) -> bool {
        self.lake_winters.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_lake() -> Lake {
        let grids = BTreeMap::from([
            (SensorKind::Modis, GridSpec::new([0.0, 0.0], 1.0, 12, 12)),
            (SensorKind::Viirs, GridSpec::new([0.0, 0.0], 1.5, 8, 8)),
            (SensorKind::Sar, GridSpec::new([0.0, 0.0], 12.0 / 128.0, 128, 128)),
        ]);
        Lake::new("sq", vec![[1.0, 1.0], [11.0, 1.0], [11.0, 11.0], [1.0, 11.0]], grids).unwrap()
    }

    #[test]
    fn masks_per_sensor() {
        let lake = square_lake();
        assert_eq!(lake.clean_pixel_count(SensorKind::Modis), 100);
        // VIIRS cells of 1.5: [1.5, 10.5] fully inside -> 6x6
        assert_eq!(lake.clean_pixel_count(SensorKind::Viirs), 36);
        let vm = lake.patch_mask(SensorKind::Viirs).unwrap();
        assert_eq!(vm.shape(), (12, 12));
        assert!(*vm.get(1, 1) && !*vm.get(7, 7) && !*vm.get(0, 0));
        let se = lake.embedding_mask(SensorKind::Sar).unwrap();
        assert_eq!(se.count_true(), 100);
    }

    #[test]
    fn lake_serde_round_trip() {
        let lake = square_lake();
        let json = serde_json::to_string(&lake).unwrap();
        assert!(!json.contains("patch_masks"));
        let back: Lake = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lake);
    }
}
