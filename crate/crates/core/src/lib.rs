//! Multi-sensor lake ice monitoring: per-sensor encoders feeding a shared
//! embedding, auxiliary frozen/water segmentation, windowed temporal
//! regression of the open-water fraction, and ice-on/ice-off extraction.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod report;
pub mod temporal;
pub mod training;

pub use error::{Error, ErrorClass, Result};
