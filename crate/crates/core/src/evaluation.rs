//! Segmentation metrics, water-fraction series and ice-on/ice-off dates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{Grid, LakeWinter, PixelClass, SensorKind};
use crate::error::{Error, Result};
use crate::model::{argmax_classes, FusionModel, Normalization};
use crate::temporal::EnsembleStats;

/// Largest offset, in days, accepted as a match to a reference date.
pub const GCOS_TOLERANCE_DAYS: i64 = 2;

/// Default freeze threshold on the open-water fraction.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; PixelClass::COUNT]; PixelClass::COUNT],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: PixelClass, predicted: PixelClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    /// Adds every pixel where `mask` is set.
    pub fn accumulate(&mut self, truth: &Grid<PixelClass>, predicted: &Grid<PixelClass>, mask: &Grid<bool>) -> Result<()> {
        if truth.shape() != predicted.shape() || truth.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "labels {:?}, predictions {:?}, mask {:?}",
                truth.shape(),
                predicted.shape(),
                mask.shape()
            )));
        }
        for ((t, p), m) in truth.iter().zip(predicted.iter()).zip(mask.iter()) {
            if *m {
                self.add(*t, *p);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn trace(&self) -> u64 {
        (0..PixelClass::COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// Percentage of correctly classified pixels.
    pub fn mean_pixel_accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Data("confusion matrix is empty".into())),
            n => Ok(100.0 * self.trace() as f64 / n as f64),
        }
    }

    /// IoU of one class, `None` when the class never occurs in the labels.
    pub fn class_iou(&self, class: PixelClass) -> Option<f64> {
        let k = class.index();
        let row: u64 = self.counts[k].iter().sum();
        if row == 0 {
            return None;
        }
        let col: u64 = (0..PixelClass::COUNT).map(|i| self.counts[i][k]).sum();
        let tp = self.counts[k][k];
        Some(tp as f64 / (row + col - tp) as f64)
    }

    /// Percentage IoU averaged over the classes present in the labels.
    pub fn mean_iou(&self) -> Result<f64> {
        let ious: Vec<f64> = PixelClass::ALL.iter().filter_map(|&c| self.class_iou(c)).collect();
        if ious.is_empty() {
            return Err(Error::Data("no labelled class present".into()));
        }
        Ok(100.0 * ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Segmentation of every labelled, non-transition observation of `sensor`,
/// scored on the embedding grid over valid lake pixels.
pub fn evaluate_segmentation(
    model: &FusionModel,
    norm: &Normalization,
    lake_winters: &[&LakeWinter],
    sensor: SensorKind,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for lw in lake_winters {
        for obs in lw.observations.iter().filter(|o| o.sensor == sensor) {
            let Some(labels) = lw.embedding_labels(obs) else {
                continue;
            };
            let mask = evaluation_mask(lw, obs)?;
            let probs = model.segment(&model.embed(sensor, &norm.apply(obs)?)?)?;
            cm.accumulate(&labels, &argmax_classes(&probs), &mask)?;
        }
    }
    Ok(cm)
}

/// Pixels scored for one observation: cloud-free clean pixels for optical
/// sensors, the lake's clean pixels on the embedding grid for SAR.
pub fn evaluation_mask(lw: &LakeWinter, obs: &crate::data::SensorObservation) -> Result<Grid<bool>> {
    if obs.sensor.is_optical() {
        Ok(obs.valid_mask().clone())
    } else {
        lw.lake
            .embedding_mask(obs.sensor)
            .cloned()
            .ok_or_else(|| Error::Data(format!("lake {} has no {} grid", lw.lake.id(), obs.sensor)))
    }
}

/// Origin of a fraction series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesSource {
    Label,
    Prediction,
    EnsembleMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterFractionSeries {
    pub lake_id: String,
    pub winter: String,
    pub source: SeriesSource,
    points: Vec<(NaiveDate, f64)>,
}

impl WaterFractionSeries {
    /// Requires strictly increasing dates and fractions in `[0, 1]`.
    pub fn new(
        lake_id: impl Into<String>,
        winter: impl Into<String>,
        source: SeriesSource,
        points: Vec<(NaiveDate, f64)>,
    ) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Data("series dates must be strictly increasing".into()));
        }
        if let Some((d, f)) = points.iter().find(|(_, f)| !(0.0..=1.0).contains(f)) {
            return Err(Error::Data(format!("{d}: fraction {f} outside [0, 1]")));
        }
        Ok(WaterFractionSeries {
            lake_id: lake_id.into(),
            winter: winter.into(),
            source,
            points,
        })
    }

    /// Sorts raw observations and collapses same-date entries to their mean.
    pub fn from_observations(
        lake_id: impl Into<String>,
        winter: impl Into<String>,
        source: SeriesSource,
        observations: impl IntoIterator<Item = (NaiveDate, f64)>,
    ) -> Result<Self> {
        let mut by_day: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
        for (d, f) in observations {
            let e = by_day.entry(d).or_insert((0.0, 0));
            e.0 += f;
            e.1 += 1;
        }
        let points = by_day.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect();
        Self::new(lake_id, winter, source, points)
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Ice-on / ice-off dates for one series and threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenologyEvents {
    pub threshold: f64,
    pub ice_on: Option<NaiveDate>,
    pub ice_off: Option<NaiveDate>,
    /// Starts of every persistent below-threshold run, earliest first.
    pub ice_on_candidates: Vec<NaiveDate>,
    /// Starts of every persistent above-threshold run after the first ice-on.
    pub ice_off_candidates: Vec<NaiveDate>,
}

/// Ice-on is the first observation below `threshold` whose next observation
/// is also below it; ice-off is the first later observation above it whose
/// next observation is also above it. Comparisons are strict.
pub fn extract_ice_dates(series: &WaterFractionSeries, threshold: f64) -> Result<PhenologyEvents> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    let p = series.points();
    if p.len() < 2 {
        return Err(Error::InsufficientAcquisitions);
    }
    let below = |i: usize| p[i].1 < threshold && p[i + 1].1 < threshold;
    let above = |i: usize| p[i].1 > threshold && p[i + 1].1 > threshold;
    let run_start = |i: usize, f: &dyn Fn(usize) -> bool| f(i) && (i == 0 || !f(i - 1));

    let on_idx: Vec<usize> = (0..p.len() - 1).filter(|&i| run_start(i, &below)).collect();
    let first_on = on_idx.first().copied();
    let off_idx: Vec<usize> = match first_on {
        Some(on) => (on + 1..p.len() - 1).filter(|&i| run_start(i, &above)).collect(),
        None => Vec::new(),
    };
    Ok(PhenologyEvents {
        threshold,
        ice_on: first_on.map(|i| p[i].0),
        ice_off: off_idx.first().map(|&i| p[i].0),
        ice_on_candidates: on_idx.iter().map(|&i| p[i].0).collect(),
        ice_off_candidates: off_idx.iter().map(|&i| p[i].0).collect(),
    })
}

/// A reference event: one day or an inclusive range of days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceDate {
    Day(NaiveDate),
    Range(NaiveDate, NaiveDate),
}

impl ReferenceDate {
    /// Signed days from the nearest endpoint; zero inside a range.
    pub fn offset(&self, predicted: NaiveDate) -> i64 {
        match *self {
            ReferenceDate::Day(d) => (predicted - d).num_days(),
            ReferenceDate::Range(a, b) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if predicted < lo {
                    (predicted - lo).num_days()
                } else if predicted > hi {
                    (predicted - hi).num_days()
                } else {
                    0
                }
            }
        }
    }
}

impl std::fmt::Display for ReferenceDate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceDate::Day(d) => write!(f, "{d}"),
            ReferenceDate::Range(a, b) => write!(f, "{a}..{b}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReferenceEvents {
    pub ice_on: Option<ReferenceDate>,
    pub ice_off: Option<ReferenceDate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    IceOn,
    IceOff,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::IceOn => "ice-on",
            EventKind::IceOff => "ice-off",
        }
    }
}

/// One row of a reference comparison. `offset` is `None` when either side
/// lacks the event, which counts as "not detected".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventComparison {
    pub event: EventKind,
    pub reference: Option<ReferenceDate>,
    pub predicted: Option<NaiveDate>,
    pub offset: Option<i64>,
    pub pass: bool,
}

pub fn compare_to_reference(events: &PhenologyEvents, reference: &ReferenceEvents) -> Vec<EventComparison> {
    [
        (EventKind::IceOn, reference.ice_on, events.ice_on),
        (EventKind::IceOff, reference.ice_off, events.ice_off),
    ]
    .into_iter()
    .map(|(event, reference, predicted)| {
        let offset = match (reference, predicted) {
            (Some(r), Some(p)) => Some(r.offset(p)),
            _ => None,
        };
        EventComparison {
            event,
            reference,
            predicted,
            offset,
            pass: offset.is_some_and(|o| o.abs() <= GCOS_TOLERANCE_DAYS),
        }
    })
    .collect()
}

/// Per-sensor segmentation scores across ensemble members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub sensor: SensorKind,
    pub macc: EnsembleStats,
    pub miou: EnsembleStats,
}

/// Aggregates member confusion matrices into per-sensor (μ, σ) rows.
pub fn summarize_segmentation(
    members: &[BTreeMap<SensorKind, ConfusionMatrix>],
) -> Result<Vec<SegmentationSummary>> {
    let first = members.first().ok_or_else(|| Error::Data("no ensemble members".into()))?;
    first
        .keys()
        .map(|&sensor| {
            let mut macc = Vec::new();
            let mut miou = Vec::new();
            for m in members {
                let cm = m
                    .get(&sensor)
                    .ok_or_else(|| Error::Data(format!("member lacks {sensor} scores")))?;
                macc.push(cm.mean_pixel_accuracy()?);
                miou.push(cm.mean_iou()?);
            }
            Ok(SegmentationSummary {
                sensor,
                macc: EnsembleStats::from_values(&macc)?,
                miou: EnsembleStats::from_values(&miou)?,
            })
        })
        .collect()
}

/// Fixed-width table: sensor, mAcc μ/σ, mIoU μ/σ (percent; σ is the
/// population variance across members).
pub fn format_metrics_table(title: &str, rows: &[SegmentationSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<8}{:>10}{:>10}{:>10}{:>10}", "sensor", "mAcc_mu", "mAcc_sig", "mIoU_mu", "mIoU_sig");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
            r.sensor.name(),
            r.macc.mean,
            r.macc.variance,
            r.miou.mean,
            r.miou.variance
        );
    }
    s
}

/// One lake-winter's events at one threshold, compared to a reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenologyRow {
    pub lake_id: String,
    pub winter: String,
    pub threshold: f64,
    pub comparisons: Vec<EventComparison>,
    pub candidates: PhenologyEvents,
}

/// CSV: lake, winter, event, reference, threshold, predicted, candidates,
/// offset, gcos_pass. Missing values are `not detected`.
pub fn format_phenology_table(rows: &[PhenologyRow]) -> String {
    let mut s = String::from("lake,winter,event,reference,threshold,predicted,candidates,offset_days,gcos_pass\n");
    for r in rows {
        for c in &r.comparisons {
            let cands = match c.event {
                EventKind::IceOn => &r.candidates.ice_on_candidates,
                EventKind::IceOff => &r.candidates.ice_off_candidates,
            };
            let cands: Vec<String> = cands.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{:.2},{},{},{},{}",
                r.lake_id,
                r.winter,
                c.event.name(),
                c.reference.map(|d| d.to_string()).unwrap_or_else(|| "none".into()),
                r.threshold,
                c.predicted.map(|d| d.to_string()).unwrap_or_else(|| "not detected".into()),
                cands.join(" "),
                c.offset.map(|o| format!("{o:+}")).unwrap_or_else(|| "not detected".into()),
                c.pass
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, n).unwrap()
    }

    fn series(values: &[f64]) -> WaterFractionSeries {
        let pts = values.iter().enumerate().map(|(i, &f)| (d(i as u32 + 1), f)).collect();
        WaterFractionSeries::new("l", "w", SeriesSource::Label, pts).unwrap()
    }

    #[test]
    fn worked_series_both_thresholds() {
        let s = series(&[1.0, 0.8, 0.25, 0.05, 0.0, 0.0, 0.4, 0.7]);
        let e = extract_ice_dates(&s, 0.3).unwrap();
        assert_eq!((e.ice_on, e.ice_off), (Some(d(3)), Some(d(7))));
        let e = extract_ice_dates(&s, 0.1).unwrap();
        assert_eq!((e.ice_on, e.ice_off), (Some(d(4)), Some(d(7))));
    }

    #[test]
    fn open_water_has_no_events() {
        let e = extract_ice_dates(&series(&[1.0, 0.9, 0.95, 1.0]), 0.3).unwrap();
        assert_eq!((e.ice_on, e.ice_off), (None, None));
        assert!(e.ice_on_candidates.is_empty());
    }

    #[test]
    fn single_day_dip_does_not_persist() {
        let e = extract_ice_dates(&series(&[1.0, 0.1, 0.9, 0.0, 0.0, 1.0]), 0.3).unwrap();
        assert_eq!(e.ice_on, Some(d(4)));
        assert_eq!(e.ice_off, None);
    }

    #[test]
    fn candidates_list_every_run() {
        let e = extract_ice_dates(&series(&[1.0, 0.0, 0.0, 0.9, 0.9, 0.0, 0.1, 0.8, 0.9]), 0.3).unwrap();
        assert_eq!(e.ice_on_candidates, vec![d(2), d(6)]);
        assert_eq!(e.ice_off_candidates, vec![d(4), d(8)]);
        assert_eq!((e.ice_on, e.ice_off), (Some(d(2)), Some(d(4))));
    }

    #[test]
    fn too_short_series_errors() {
        assert!(matches!(extract_ice_dates(&series(&[0.0]), 0.3), Err(Error::InsufficientAcquisitions)));
    }

    #[test]
    fn duplicates_collapse() {
        let s = WaterFractionSeries::from_observations("l", "w", SeriesSource::Prediction, vec![(d(2), 0.2), (d(1), 1.0), (d(2), 0.4)])
            .unwrap();
        assert_eq!(s.points(), &[(d(1), 1.0), (d(2), 0.30000000000000004)]);
    }

    #[test]
    fn reference_offsets() {
        let jan = |n| NaiveDate::from_ymd_opt(2017, 1, n).unwrap();
        let dec = |n| NaiveDate::from_ymd_opt(2016, 12, n).unwrap();
        assert_eq!(ReferenceDate::Day(jan(1)).offset(jan(3)), 2);
        assert_eq!(ReferenceDate::Range(dec(15), dec(17)).offset(dec(16)), 0);
        assert_eq!(ReferenceDate::Range(dec(15), dec(17)).offset(jan(17)), 31);
        assert_eq!(ReferenceDate::Range(dec(15), dec(17)).offset(dec(12)), -3);
        let events = PhenologyEvents {
            threshold: 0.3,
            ice_on: Some(jan(3)),
            ice_off: None,
            ice_on_candidates: vec![jan(3)],
            ice_off_candidates: vec![],
        };
        let reference = ReferenceEvents {
            ice_on: Some(ReferenceDate::Day(jan(1))),
            ice_off: Some(ReferenceDate::Day(jan(20))),
        };
        let c = compare_to_reference(&events, &reference);
        assert_eq!((c[0].offset, c[0].pass), (Some(2), true));
        assert_eq!((c[1].offset, c[1].pass), (None, false));
    }

    #[test]
    fn confusion_metrics() {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in [(0, 0), (0, 1), (1, 1), (1, 0)] {
            cm.add(PixelClass::from_index(t).unwrap(), PixelClass::from_index(p).unwrap());
        }
        assert_eq!(cm.mean_pixel_accuracy().unwrap(), 50.0);
        assert!((cm.mean_iou().unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!(ConfusionMatrix::default().mean_pixel_accuracy().is_err());
        let mut diag = ConfusionMatrix::default();
        diag.add(PixelClass::Frozen, PixelClass::Frozen);
        diag.add(PixelClass::Background, PixelClass::Background);
        assert_eq!(diag.mean_pixel_accuracy().unwrap(), 100.0);
        assert_eq!(diag.mean_iou().unwrap(), 100.0);
    }

    #[test]
    fn uniform_off_diagonal_toy() {
        // 10 correct per class, 1 error into each other class: 30/36 correct,
        // IoU = 10 / (12 + 12 - 10) = 10/14 per class
        let mut cm = ConfusionMatrix::default();
        for t in 0..3 {
            for p in 0..3 {
                cm.counts[t][p] = if t == p { 10 } else { 1 };
            }
        }
        assert!((cm.mean_pixel_accuracy().unwrap() - 100.0 * 30.0 / 36.0).abs() < 1e-12);
        assert!((cm.mean_iou().unwrap() - 100.0 * 10.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn single_member_summary_has_zero_variance() {
        let mut cm = ConfusionMatrix::default();
        cm.add(PixelClass::Frozen, PixelClass::Frozen);
        let m: BTreeMap<_, _> = [(SensorKind::Sar, cm)].into_iter().collect();
        let s = summarize_segmentation(&[m.clone(), m]).unwrap();
        assert_eq!(s[0].macc.variance, 0.0);
        assert!(format_metrics_table("t", &s).contains("SAR"));
    }
}
