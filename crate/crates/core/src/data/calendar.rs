use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::observation::SensorObservation;
use super::sensor::SensorKind;
use crate::error::{Error, Result};

/// Inclusive date range of one winter season.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl SeasonWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("season ends ({end}) before it starts ({start})")));
        }
        Ok(SeasonWindow { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }

    pub fn num_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        self.start.iter_days().take(self.num_days())
    }
}

/// Usable acquisition dates per sensor within one season.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionCalendar {
    season: SeasonWindow,
    dates: BTreeMap<SensorKind, Vec<NaiveDate>>,
}

impl AcquisitionCalendar {
    pub fn new(season: SeasonWindow, dates: BTreeMap<SensorKind, Vec<NaiveDate>>) -> Result<Self> {
        for (sensor, list) in &dates {
            if let Some(d) = list.iter().find(|d| !season.contains(**d)) {
                return Err(Error::Data(format!("{sensor} date {d} outside season")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Data(format!("{sensor} dates not strictly increasing")));
            }
        }
        Ok(AcquisitionCalendar { season, dates })
    }

    /// Collects the (deduplicated) dates of the given observations.
    pub fn from_observations<'a>(
        season: SeasonWindow,
        observations: impl IntoIterator<Item = &'a SensorObservation>,
    ) -> Result<Self> {
        let mut sets: BTreeMap<SensorKind, BTreeSet<NaiveDate>> = BTreeMap::new();
        for o in observations {
            sets.entry(o.sensor).or_default().insert(o.date);
        }
        let dates = sets.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
        Self::new(season, dates)
    }

    pub fn season(&self) -> SeasonWindow {
        self.season
    }

    pub fn dates(&self, sensor: SensorKind) -> &[NaiveDate] {
        self.dates.get(&sensor).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sensors(&self) -> impl Iterator<Item = SensorKind> + '_ {
        self.dates.keys().copied()
    }

    /// Mean gap in days between consecutive distinct acquisition days of the
    /// selected sensors; a day seen by several sensors counts once.
    pub fn effective_temporal_resolution(&self, sensors: &[SensorKind]) -> Result<f64> {
        let union: BTreeSet<NaiveDate> = sensors.iter().flat_map(|s| self.dates(*s).iter().copied()).collect();
        if union.len() < 2 {
            return Err(Error::InsufficientAcquisitions);
        }
        let first = *union.first().expect("non-empty");
        let last = *union.last().expect("non-empty");
        Ok((last - first).num_days() as f64 / (union.len() - 1) as f64)
    }
}
