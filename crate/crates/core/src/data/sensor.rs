use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Satellite sensors with a dedicated input branch.
///
/// Adding a sensor means adding a variant here plus its constants below and an
/// encoder choice in `model::Branch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    #[serde(rename = "MODIS")]
    Modis,
    #[serde(rename = "VIIRS")]
    Viirs,
    #[serde(rename = "SAR")]
    Sar,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Modis, SensorKind::Viirs, SensorKind::Sar];

    /// Spectral bands (optical) or polarisations (SAR) fed to the network.
    pub fn channels(self) -> usize {
        match self {
            SensorKind::Modis => 12,
            SensorKind::Viirs => 5,
            SensorKind::Sar => 2,
        }
    }

    /// `(rows, cols)` of the network input patch.
    pub fn patch_shape(self) -> (usize, usize) {
        match self {
            SensorKind::Modis | SensorKind::Viirs => (12, 12),
            SensorKind::Sar => (128, 128),
        }
    }

    pub fn is_optical(self) -> bool {
        !matches!(self, SensorKind::Sar)
    }

    /// Rank used when several sensors imaged the same day and one embedding has
    /// to fill a window slot; lower wins (SAR > VIIRS > MODIS).
    pub fn slot_priority(self) -> u8 {
        match self {
            SensorKind::Sar => 0,
            SensorKind::Viirs => 1,
            SensorKind::Modis => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Modis => "MODIS",
            SensorKind::Viirs => "VIIRS",
            SensorKind::Sar => "SAR",
        }
    }

    /// Single-letter tag as used in alternation logs ("MVMV...").
    pub fn letter(self) -> char {
        match self {
            SensorKind::Modis => 'M',
            SensorKind::Viirs => 'V',
            SensorKind::Sar => 'S',
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MODIS" | "M" => Ok(SensorKind::Modis),
            "VIIRS" | "V" => Ok(SensorKind::Viirs),
            "SAR" | "S1" | "S1-SAR" | "S" => Ok(SensorKind::Sar),
            other => Err(Error::Config(format!("unknown sensor '{other}'"))),
        }
    }
}
