use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// Per-pixel segmentation classes; the discriminant is the channel index of
/// the segmentation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PixelClass {
    Frozen = 0,
    NonFrozen = 1,
    Background = 2,
}

impl PixelClass {
    pub const ALL: [PixelClass; 3] = [PixelClass::Frozen, PixelClass::NonFrozen, PixelClass::Background];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        PixelClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelClass::Frozen => "frozen",
            PixelClass::NonFrozen => "non_frozen",
            PixelClass::Background => "background",
        }
    }
}

/// Ground truth for one lake on one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayLabel {
    pub date: NaiveDate,
    pub water_fraction: f64,
    pub is_transition: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pixel_labels: Option<Grid<PixelClass>>,
}

impl DayLabel {
    pub fn new(date: NaiveDate, water_fraction: f64, is_transition: bool) -> Result<Self> {
        let label = DayLabel {
            date,
            water_fraction,
            is_transition,
            per_pixel_labels: None,
        };
        label.validate()?;
        Ok(label)
    }

    pub fn with_pixel_labels(mut self, map: Grid<PixelClass>) -> Result<Self> {
        self.per_pixel_labels = Some(map);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.water_fraction) {
            return Err(Error::Data(format!(
                "{}: water fraction {} outside [0, 1]",
                self.date, self.water_fraction
            )));
        }
        if self.is_transition && self.per_pixel_labels.is_some() {
            return Err(Error::Data(format!("{}: transition day carries a pixel map", self.date)));
        }
        if !self.is_transition && self.water_fraction != 0.0 && self.water_fraction != 1.0 {
            return Err(Error::Data(format!(
                "{}: non-transition day with water fraction {}",
                self.date, self.water_fraction
            )));
        }
        Ok(())
    }

    /// Uniform class of a non-transition day.
    pub fn day_class(&self) -> Option<PixelClass> {
        if self.is_transition {
            None
        } else if self.water_fraction == 1.0 {
            Some(PixelClass::NonFrozen)
        } else {
            Some(PixelClass::Frozen)
        }
    }

    /// Class map on a grid whose clean lake pixels are `clean`; `None` on
    /// transition days. A stored map of the same shape takes precedence.
    pub fn class_map(&self, clean: &Grid<bool>) -> Option<Grid<PixelClass>> {
        let class = self.day_class()?;
        if let Some(map) = &self.per_pixel_labels {
            if map.shape() == clean.shape() {
                return Some(map.clone());
            }
        }
        Some(clean.map(|&c| if c { class } else { PixelClass::Background }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 2, 1).unwrap()
    }

    #[test]
    fn non_transition_requires_binary_fraction() {
        assert!(DayLabel::new(d(), 0.0, false).is_ok());
        assert!(DayLabel::new(d(), 1.0, false).is_ok());
        assert!(DayLabel::new(d(), 0.25, false).is_err());
        assert!(DayLabel::new(d(), 0.25, true).is_ok());
        assert!(DayLabel::new(d(), 1.2, true).is_err());
    }

    #[test]
    fn transition_day_cannot_carry_map() {
        let map = Grid::filled(2, 2, PixelClass::Frozen);
        assert!(DayLabel::new(d(), 0.75, true).unwrap().with_pixel_labels(map).is_err());
    }

    #[test]
    fn class_map_marks_background() {
        let clean = Grid::from_vec(1, 3, vec![true, false, true]);
        let map = DayLabel::new(d(), 0.0, false).unwrap().class_map(&clean).unwrap();
        assert_eq!(
            map.as_slice(),
            &[PixelClass::Frozen, PixelClass::Background, PixelClass::Frozen]
        );
        assert!(DayLabel::new(d(), 0.5, true).unwrap().class_map(&clean).is_none());
    }
}
