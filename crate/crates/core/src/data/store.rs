//! On-disk dataset layout.
//!
//! ```text
//! <root>/dataset.json
//! <root>/<lake>_<winter>/manifest.json
//! <root>/<lake>_<winter>/obs/<SENSOR>_<date>.lif       values, H×W×C
//! <root>/<lake>_<winter>/obs/<SENSOR>_<date>.mask.lif  validity, H×W×1
//! ```
//!
//! Array payloads start with the 4-byte magic `LIF1` and three little-endian
//! `u32` (H, W, C), followed by H·W·C little-endian `f32` in HWC order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calendar::SeasonWindow;
use super::dataset::{Dataset, Lake, LakeWinter};
use super::grid::Grid;
use super::labels::{DayLabel, PixelClass};
use super::observation::{Raster, SensorObservation};
use super::sensor::SensorKind;
use super::synth::SyntheticDatasetConfig;
use crate::error::{Error, Result};

pub const LIF_MAGIC: &[u8; 4] = b"LIF1";
const LAKE_WINTER_FORMAT: &str = "lakeice-lake-winter/1";
const DATASET_FORMAT: &str = "lakeice-dataset/1";

pub fn encode_lif(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raster.data().len() * 4);
    out.extend_from_slice(LIF_MAGIC);
    for d in [raster.rows(), raster.cols(), raster.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lif(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 16 || &bytes[..4] != LIF_MAGIC {
        return Err(Error::Data("not a LIF1 payload".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| Error::Data("LIF1 dimensions overflow".into()))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Data(format!(
            "LIF1 payload {h}x{w}x{c} needs {} bytes, file has {}",
            16 + 4 * n,
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Raster::from_vec(h, w, c, data)
}

pub fn write_lif(path: &Path, raster: &Raster) -> Result<()> {
    fs::write(path, encode_lif(raster))?;
    Ok(())
}

pub fn read_lif(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode_lif(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn mask_to_raster(mask: &Grid<bool>) -> Raster {
    let data = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Raster::from_vec(mask.rows(), mask.cols(), 1, data).expect("mask shape")
}

fn raster_to_mask(r: &Raster) -> Result<Grid<bool>> {
    if r.channels() != 1 {
        return Err(Error::Data("mask payload must have one channel".into()));
    }
    Ok(Grid::from_vec(r.rows(), r.cols(), r.data().iter().map(|&v| v != 0.0).collect()))
}

fn classes_to_raster(map: &Grid<PixelClass>) -> Raster {
    let data = map.iter().map(|c| c.index() as f32).collect();
    Raster::from_vec(map.rows(), map.cols(), 1, data).expect("label shape")
}

fn raster_to_classes(r: &Raster) -> Result<Grid<PixelClass>> {
    if r.channels() != 1 {
        return Err(Error::Data("label payload must have one channel".into()));
    }
    let classes = r
        .data()
        .iter()
        .map(|&v| PixelClass::from_index(v as usize).filter(|_| v >= 0.0 && v.fract() == 0.0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Data("label payload holds an unknown class".into()))?;
    Ok(Grid::from_vec(r.rows(), r.cols(), classes))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    sensor: SensorKind,
    date: NaiveDate,
    file: String,
    mask_file: String,
    cloud_free_fraction: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    date: NaiveDate,
    water_fraction: f64,
    is_transition: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LakeWinterManifest {
    format: String,
    lake: Lake,
    winter: String,
    season: SeasonWindow,
    observations: Vec<ObservationRecord>,
    labels: Vec<LabelRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    lake_winters: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<SyntheticDatasetConfig>,
}

fn observation_stem(o: &SensorObservation, used: &mut BTreeMap<String, usize>) -> String {
    let base = format!("{}_{}", o.sensor.name(), o.date);
    let k = used.entry(base.clone()).or_insert(0);
    *k += 1;
    if *k == 1 {
        base
    } else {
        format!("{base}_{}", *k - 1)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes one lake-winter directory (created if missing).
pub fn save_lake_winter(dir: &Path, lw: &LakeWinter) -> Result<()> {
    fs::create_dir_all(dir.join("obs"))?;
    let mut used = BTreeMap::new();
    let mut observations = Vec::with_capacity(lw.observations.len());
    for o in &lw.observations {
        let stem = observation_stem(o, &mut used);
        let file = format!("obs/{stem}.lif");
        let mask_file = format!("obs/{stem}.mask.lif");
        write_lif(&dir.join(&file), o.values())?;
        write_lif(&dir.join(&mask_file), &mask_to_raster(o.valid_mask()))?;
        observations.push(ObservationRecord {
            sensor: o.sensor,
            date: o.date,
            file,
            mask_file,
            cloud_free_fraction: o.cloud_free_fraction(),
        });
    }
    let mut labels = Vec::with_capacity(lw.labels.len());
    for l in lw.labels.values() {
        let label_file = match &l.per_pixel_labels {
            Some(map) => {
                let f = format!("labels/{}.lif", l.date);
                fs::create_dir_all(dir.join("labels"))?;
                write_lif(&dir.join(&f), &classes_to_raster(map))?;
                Some(f)
            }
            None => None,
        };
        labels.push(LabelRecord {
            date: l.date,
            water_fraction: l.water_fraction,
            is_transition: l.is_transition,
            label_file,
        });
    }
    let manifest = LakeWinterManifest {
        format: LAKE_WINTER_FORMAT.into(),
        lake: lw.lake.clone(),
        winter: lw.winter.clone(),
        season: lw.season,
        observations,
        labels,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn parse_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_lake_winter(dir: &Path) -> Result<LakeWinter> {
    let manifest: LakeWinterManifest = parse_manifest(&dir.join("manifest.json"))?;
    if manifest.format != LAKE_WINTER_FORMAT {
        return Err(Error::Data(format!("unsupported manifest format '{}'", manifest.format)));
    }
    let lake = manifest.lake;
    let mut observations = Vec::with_capacity(manifest.observations.len());
    for rec in &manifest.observations {
        let values = read_lif(&dir.join(&rec.file))?;
        let mask = raster_to_mask(&read_lif(&dir.join(&rec.mask_file))?)?;
        let obs = SensorObservation::new(
            rec.sensor,
            rec.date,
            lake.id(),
            values,
            mask,
            lake.clean_pixel_count(rec.sensor),
        )?;
        if (obs.cloud_free_fraction() - rec.cloud_free_fraction).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "{}: cloud-free fraction {} disagrees with mask ({})",
                rec.file,
                rec.cloud_free_fraction,
                obs.cloud_free_fraction()
            )));
        }
        observations.push(obs);
    }
    let mut labels = Vec::with_capacity(manifest.labels.len());
    for rec in &manifest.labels {
        let mut label = DayLabel::new(rec.date, rec.water_fraction, rec.is_transition)?;
        if let Some(f) = &rec.label_file {
            label = label.with_pixel_labels(raster_to_classes(&read_lif(&dir.join(f))?)?)?;
        }
        labels.push(label);
    }
    LakeWinter::new(lake, manifest.winter, manifest.season, observations, labels)
}

/// Writes every lake-winter plus a top-level index.
pub fn save_dataset(root: &Path, dataset: &Dataset, generator: Option<&SyntheticDatasetConfig>) -> Result<()> {
    fs::create_dir_all(root)?;
    for lw in &dataset.lake_winters {
        save_lake_winter(&root.join(lw.key()), lw)?;
    }
    let index = DatasetManifest {
        format: DATASET_FORMAT.into(),
        lake_winters: dataset.lake_winters.iter().map(LakeWinter::key).collect(),
        generator: generator.cloned(),
    };
    write_json(&root.join("dataset.json"), &index)
}

/// Loads a dataset root; without an index every subdirectory holding a
/// `manifest.json` is read.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let index_path = root.join("dataset.json");
    let dirs: Vec<PathBuf> = if index_path.exists() {
        let index: DatasetManifest = parse_manifest(&index_path)?;
        if index.format != DATASET_FORMAT {
            return Err(Error::Data(format!("unsupported dataset format '{}'", index.format)));
        }
        index.lake_winters.iter().map(|k| root.join(k)).collect()
    } else {
        let entries = fs::read_dir(root).map_err(|e| Error::Data(format!("{}: {e}", root.display())))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").is_file())
            .collect();
        dirs.sort();
        dirs
    };
    if dirs.is_empty() {
        return Err(Error::Data(format!("{}: no lake-winter directories", root.display())));
    }
    let lake_winters = dirs.iter().map(|d| load_lake_winter(d)).collect::<Result<Vec<_>>>()?;
    Dataset::new(lake_winters)
}

/// Generator settings recorded in a dataset index, if any.
pub fn load_generator_config(root: &Path) -> Result<Option<SyntheticDatasetConfig>> {
    let index: DatasetManifest = parse_manifest(&root.join("dataset.json"))?;
    Ok(index.generator)
}

/// Content hash over every observation and label, independent of file layout.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for lw in &dataset.lake_winters {
        h.update(lw.key().as_bytes());
        h.update(serde_json::to_vec(&lw.lake).expect("lake serializes"));
        h.update(lw.season.start.to_string().as_bytes());
        h.update(lw.season.end.to_string().as_bytes());
        for o in &lw.observations {
            h.update(o.sensor.name().as_bytes());
            h.update(o.date.to_string().as_bytes());
            h.update(encode_lif(o.values()));
            h.update(encode_lif(&mask_to_raster(o.valid_mask())));
        }
        for l in lw.labels.values() {
            h.update(l.date.to_string().as_bytes());
            h.update(l.water_fraction.to_le_bytes());
            h.update([l.is_transition as u8]);
            if let Some(map) = &l.per_pixel_labels {
                h.update(encode_lif(&classes_to_raster(map)));
            }
        }
    }
    hex::encode(h.finalize())
}
