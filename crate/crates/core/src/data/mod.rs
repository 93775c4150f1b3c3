//! Sensor inputs, lake geometry, acquisition calendars, synthetic seasons and
//! the on-disk dataset format.

mod calendar;
mod dataset;
mod geometry;
mod grid;
mod labels;
mod observation;
mod sensor;
pub mod store;
pub mod synth;

pub use calendar::{AcquisitionCalendar, SeasonWindow};
pub use dataset::{Dataset, Lake, LakeWinter, EMBEDDING_SIZE};
pub use geometry::{build_clean_pixel_mask, contains_point, is_self_intersecting, polygon_area, GridSpec, LakeGeometry};
pub use grid::Grid;
pub use labels::{DayLabel, PixelClass};
pub use observation::{
    filter_by_cloud_fraction, mask_bbox, pad_to_patch, patch_offset, CleanPixel, CleanPixelValues, Raster,
    SensorObservation, CLOUD_THRESHOLD,
};
pub use sensor::SensorKind;
pub use synth::{
    generate_synthetic_dataset, generate_synthetic_season, SensorSimConfig, SyntheticDataset, SyntheticDatasetConfig,
    SyntheticSeason, SyntheticSeasonConfig,
};
