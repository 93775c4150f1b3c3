//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use lakeice::data::store::{dataset_fingerprint, load_dataset, load_generator_config, save_dataset};
use lakeice::data::{generate_synthetic_dataset, Dataset, LakeWinter, SyntheticDatasetConfig};
use lakeice::evaluation::{
    compare_to_reference, extract_ice_dates, format_metrics_table, format_phenology_table, summarize_segmentation,
    PhenologyRow, ReferenceDate, ReferenceEvents, SeriesSource, WaterFractionSeries,
};
use lakeice::report::{
    embedding_csv, embedding_points, plot_embedding, plot_timeseries, summarize_projection, timeseries_csv, tsne,
    TsneConfig,
};
use lakeice::temporal::{combine_ensemble, write_predictions_csv, DailyPrediction};
use lakeice::training::{
    make_split, parse_stages, CheckpointMeta, ExperimentSplit, Pipeline, SplitSpec, Stage, TrainConfig,
};
use lakeice::{Error, Result};
use log::info;

use crate::manifest::RunManifest;
use crate::{Partition, PhenologyArgs, PlotArgs, PlotKind, Preset, RunArgs, SynthArgs, TrainArgs, OUTPUT_ROOT_ENV};

fn output_dir(explicit: Option<&PathBuf>, command: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("lakeice-out"))
            .join(command),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

pub fn synth(a: &SynthArgs, args: &[String]) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticDatasetConfig::desk(a.seed.unwrap_or(7)),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let out = output_dir(a.out.as_ref(), "synth");
    let generated = generate_synthetic_dataset(&config)?;
    save_dataset(&out, &generated.dataset, Some(&config))?;
    let mut m = RunManifest::new("synth", args);
    m.seed = Some(config.seed);
    m.dataset_fingerprint = Some(dataset_fingerprint(&generated.dataset));
    m.outputs = generated.dataset.lake_winters.iter().map(LakeWinter::key).collect();
    m.write(&out)?;
    println!("{} lake-winters written to {}", generated.dataset.lake_winters.len(), out.display());
    Ok(())
}

/// Checkpoints in the order later stages supersede earlier ones.
const CHECKPOINT_PREFERENCE: [Stage; 4] = [Stage::Regression, Stage::Finetune, Stage::OpticalPretrain, Stage::SarPretrain];

fn member_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run).map_err(|e| Error::Data(format!("{}: {e}", run.display())))?;
    let mut members: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter_map(|p| {
            let i = p.file_name()?.to_str()?.strip_prefix("member-")?.parse().ok()?;
            Some((i, p))
        })
        .collect();
    members.sort();
    if members.is_empty() {
        return Err(Error::Data(format!("{}: no member-<i> directories", run.display())));
    }
    Ok(members.into_iter().map(|(_, p)| p).collect())
}

/// The most advanced checkpoint of one member, restricted to `allowed`.
fn load_latest(dir: &Path, allowed: &[Stage]) -> Result<Option<(CheckpointMeta, Pipeline)>> {
    for stage in CHECKPOINT_PREFERENCE.iter().filter(|s| allowed.contains(s)) {
        let path = dir.join(format!("{}.ckpt", stage.tag()));
        if path.is_file() {
            return Pipeline::load(&path).map(Some);
        }
    }
    Ok(None)
}

fn check_provenance(meta: &CheckpointMeta, fingerprint: &str, split: Option<&ExperimentSplit>) -> Result<()> {
    if meta.dataset_fingerprint.as_deref().is_some_and(|f| f != fingerprint) {
        return Err(Error::Contract("checkpoint was trained on a different dataset".into()));
    }
    if let (Some(expected), Some(found)) = (split, meta.split.as_ref()) {
        if expected != found {
            return Err(Error::Contract(format!(
                "checkpoint split holds out '{}', requested '{}'",
                found.holdout, expected.holdout
            )));
        }
    }
    Ok(())
}

fn effective_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => match a.preset {
            Preset::Published => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        },
    };
    if let Some(s) = a.epoch_scale {
        config.epoch_scale = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn train(a: &TrainArgs, args: &[String]) -> Result<()> {
    let config = effective_config(a)?;
    if a.print_config {
        print!("{}", config.to_json());
        return Ok(());
    }
    let (Some(data), Some(split)) = (&a.data, &a.split) else {
        return Err(Error::Config("--data and --split are required".into()));
    };
    if a.ensemble == 0 {
        return Err(Error::Config("--ensemble must be at least 1".into()));
    }
    let stages = parse_stages(&a.stages)?;
    let spec: SplitSpec = split.parse()?;
    let dataset = load_dataset(data)?;
    let fingerprint = dataset_fingerprint(&dataset);
    let split = make_split(&dataset, spec.mode, &spec.key)?;
    let train = split.train_set(&dataset)?;
    let out = output_dir(a.out.as_ref(), "train");
    create_dir(&out)?;
    write_file(&out.join("config.json"), config.to_json())?;

    let mut outputs = Vec::new();
    let needs_step_one = Stage::STEP_ONE.iter().any(|s| stages.contains(s));
    for i in 0..a.ensemble {
        let member_config = config.with_seed(config.seed.wrapping_add(i as u64));
        let dir = out.join(format!("member-{i}"));
        let mut pipeline = if needs_step_one {
            Pipeline::new(&member_config, &train)?
        } else {
            let (meta, mut p) = load_latest(&dir, &Stage::STEP_ONE)?.ok_or(Error::MissingStepOneWeights)?;
            check_provenance(&meta, &fingerprint, Some(&split))?;
            if meta.config.encoder != member_config.encoder || meta.config.seed != member_config.seed {
                return Err(Error::Contract(format!(
                    "{}: step-1 checkpoint was trained with a different configuration",
                    dir.display()
                )));
            }
            p.config = member_config.clone();
            p
        };
        create_dir(&dir)?;
        for &stage in &stages {
            pipeline.run(&train, &[stage].into_iter().collect())?;
            if !pipeline.completed.contains(&stage) {
                continue;
            }
            let mut meta = pipeline.checkpoint_meta(stage);
            meta.split = Some(split.clone());
            meta.dataset_fingerprint = Some(fingerprint.clone());
            let path = pipeline.save(&dir, &meta)?;
            info!("member {i}: wrote {}", path.display());
            outputs.push(relative(&path, &out));
        }
    }
    let mut m = RunManifest::new("train", args);
    m.config_hash = Some(config.hash());
    m.seed = Some(config.seed);
    m.dataset_fingerprint = Some(fingerprint);
    m.outputs = outputs;
    m.write(&out)?;
    println!("{} member(s) trained in {}", a.ensemble, out.display());
    Ok(())
}

/// A loaded run: members sharing one split, plus the partition to process.
struct LoadedRun {
    members: Vec<Pipeline>,
    split: ExperimentSplit,
    config_hash: String,
    seed: u64,
    fingerprint: String,
}

fn load_run(a: &RunArgs, allowed: &[Stage]) -> Result<(Dataset, LoadedRun)> {
    let dataset = load_dataset(&a.data)?;
    let fingerprint = dataset_fingerprint(&dataset);
    let mut members = Vec::new();
    let mut first_meta: Option<CheckpointMeta> = None;
    for dir in member_dirs(&a.run)? {
        let (meta, p) = load_latest(&dir, allowed)?.ok_or_else(|| match allowed {
            [Stage::Regression] => Error::MissingPrerequisite(format!("{}: no regression checkpoint", dir.display())),
            _ => Error::MissingStepOneWeights,
        })?;
        check_provenance(&meta, &fingerprint, first_meta.as_ref().and_then(|m| m.split.as_ref()))?;
        first_meta.get_or_insert(meta);
        members.push(p);
    }
    let meta = first_meta.expect("at least one member");
    let split = meta
        .split
        .ok_or_else(|| Error::Contract("checkpoint records no split".into()))?;
    Ok((
        dataset,
        LoadedRun {
            members,
            split,
            config_hash: meta.config_hash,
            seed: meta.config.seed,
            fingerprint,
        },
    ))
}

impl LoadedRun {
    fn partition<'a>(&self, dataset: &'a Dataset, p: Partition) -> Result<Vec<&'a LakeWinter>> {
        match p {
            Partition::Train => self.split.train_set(dataset),
            Partition::Test => self.split.test_set(dataset),
        }
    }

    fn predict(&self, lw: &LakeWinter) -> Result<Vec<DailyPrediction>> {
        let per_member = self.members.iter().map(|m| m.predict(lw)).collect::<Result<Vec<_>>>()?;
        combine_ensemble(&per_member)
    }

    fn manifest(&self, command: &str, args: &[String]) -> RunManifest {
        let mut m = RunManifest::new(command, args);
        m.config_hash = Some(self.config_hash.clone());
        m.seed = Some(self.seed);
        m.dataset_fingerprint = Some(self.fingerprint.clone());
        m
    }
}

pub fn predict(a: &RunArgs, args: &[String]) -> Result<()> {
    let (dataset, run) = load_run(a, &[Stage::Regression])?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let dir = out.join("predictions");
    create_dir(&dir)?;
    let mut outputs = Vec::new();
    for lw in run.partition(&dataset, a.partition)? {
        let preds = run.predict(lw)?;
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &preds)?;
        let path = dir.join(format!("{}.csv", lw.key()));
        write_file(&path, buf)?;
        outputs.push(relative(&path, &out));
    }
    let mut m = run.manifest("predict", args);
    m.outputs = outputs;
    m.write(&out)?;
    println!("predictions written to {}", dir.display());
    Ok(())
}

/// Mean absolute error of the fused prediction on non-transition label days.
fn fused_mae(lw: &LakeWinter, preds: &[DailyPrediction]) -> (f64, usize) {
    preds
        .iter()
        .filter_map(|p| lw.label(p.date).filter(|l| !l.is_transition).map(|l| (p.fused - l.water_fraction).abs()))
        .fold((0.0, 0), |(s, n), e| (s + e, n + 1))
}

pub fn eval(a: &RunArgs, args: &[String]) -> Result<()> {
    let (dataset, run) = load_run(a, &CHECKPOINT_PREFERENCE)?;
    let part = run.partition(&dataset, a.partition)?;
    let scores = run.members.iter().map(|m| m.evaluate(&part)).collect::<Result<Vec<_>>>()?;
    let summary = summarize_segmentation(&scores)?;
    let title = format!(
        "segmentation, {} partition of {:?} holdout '{}', {} member(s)",
        match a.partition {
            Partition::Train => "train",
            Partition::Test => "test",
        },
        run.split.mode,
        run.split.holdout,
        run.members.len()
    );
    let mut report = format_metrics_table(&title, &summary);
    let mut mae = None;
    if run.members.iter().all(|m| m.regressor.is_some()) {
        let (mut sum, mut n) = (0.0, 0);
        for lw in &part {
            let (s, k) = fused_mae(lw, &run.predict(lw)?);
            sum += s;
            n += k;
        }
        if n > 0 {
            let v = sum / n as f64;
            report.push_str(&format!("fused water-fraction MAE (non-transition days, n={n}): {v:.4}\n"));
            mae = Some(v);
        }
    }
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    write_file(&out.join("metrics.txt"), &report)?;
    let json = serde_json::json!({ "segmentation": summary, "fused_mae": mae });
    write_file(&out.join("metrics.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    let mut m = run.manifest("eval", args);
    m.outputs = vec!["metrics.txt".into(), "metrics.json".into()];
    m.write(&out)?;
    print!("{report}");
    Ok(())
}

fn reference_file(path: &Path) -> Result<BTreeMap<String, ReferenceEvents>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Daily generating curves keyed by lake-winter, when the dataset records
/// its generator.
fn generator_truth(data: &Path) -> Result<Option<BTreeMap<String, Vec<(NaiveDate, f64)>>>> {
    let Some(config) = load_generator_config(data)? else {
        return Ok(None);
    };
    let mut out = BTreeMap::new();
    for c in config.expand()? {
        let series = c.season.days().map(|d| (d, c.true_fraction(d))).collect();
        out.insert(format!("{}_{}", c.lake_id, c.winter), series);
    }
    Ok(Some(out))
}

fn events_as_reference(series: &WaterFractionSeries, threshold: f64) -> Result<ReferenceEvents> {
    let e = extract_ice_dates(series, threshold)?;
    Ok(ReferenceEvents {
        ice_on: e.ice_on.map(ReferenceDate::Day),
        ice_off: e.ice_off.map(ReferenceDate::Day),
    })
}

pub fn phenology(a: &PhenologyArgs, args: &[String]) -> Result<()> {
    if a.threshold.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config("thresholds must lie in [0, 1]".into()));
    }
    let (dataset, run) = load_run(&a.run, &[Stage::Regression])?;
    let explicit = a.reference.as_deref().map(reference_file).transpose()?;
    let truth = generator_truth(&a.run.data)?;
    let mut rows = Vec::new();
    for lw in run.partition(&dataset, a.run.partition)? {
        let preds = run.predict(lw)?;
        let series = WaterFractionSeries::from_observations(
            lw.lake.id(),
            &lw.winter,
            SeriesSource::EnsembleMean,
            preds.iter().map(|p| (p.date, p.fused)),
        )?;
        for &threshold in &a.threshold {
            let reference = if let Some(map) = &explicit {
                map.get(&lw.key()).copied().unwrap_or_default()
            } else if let Some(curve) = truth.as_ref().and_then(|t| t.get(&lw.key())) {
                let s = WaterFractionSeries::new(lw.lake.id(), &lw.winter, SeriesSource::Label, curve.clone())?;
                events_as_reference(&s, threshold)?
            } else {
                let s = WaterFractionSeries::new(lw.lake.id(), &lw.winter, SeriesSource::Label, lw.label_series())?;
                events_as_reference(&s, threshold)?
            };
            let events = extract_ice_dates(&series, threshold)?;
            rows.push(PhenologyRow {
                lake_id: lw.lake.id().into(),
                winter: lw.winter.clone(),
                threshold,
                comparisons: compare_to_reference(&events, &reference),
                candidates: events,
            });
        }
    }
    let table = format_phenology_table(&rows);
    let out = a.run.out.clone().unwrap_or_else(|| a.run.run.clone());
    create_dir(&out)?;
    write_file(&out.join("phenology.csv"), &table)?;
    let mut m = run.manifest("phenology", args);
    m.outputs = vec!["phenology.csv".into()];
    m.write(&out)?;
    print!("{table}");
    Ok(())
}

pub fn plot(a: &PlotArgs, args: &[String]) -> Result<()> {
    let allowed: &[Stage] = match a.kind {
        PlotKind::Timeseries => &[Stage::Regression],
        PlotKind::Embedding => &CHECKPOINT_PREFERENCE,
    };
    let (dataset, run) = load_run(&a.run, allowed)?;
    let part = run.partition(&dataset, a.run.partition)?;
    if part.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let out = a.run.out.clone().unwrap_or_else(|| a.run.run.clone()).join("plots");
    create_dir(&out)?;
    let mut outputs = Vec::new();
    match a.kind {
        PlotKind::Timeseries => {
            for lw in &part {
                let preds = run.predict(lw)?;
                let reference =
                    WaterFractionSeries::new(lw.lake.id(), &lw.winter, SeriesSource::Label, lw.label_series())?;
                let stem = format!("timeseries-{}", lw.key());
                plot_timeseries(&out.join(format!("{stem}.svg")), &reference, &preds)?;
                write_file(&out.join(format!("{stem}.csv")), timeseries_csv(&reference, &preds))?;
                outputs.extend([format!("plots/{stem}.svg"), format!("plots/{stem}.csv")]);
            }
        }
        PlotKind::Embedding => {
            let points = embedding_points(&run.members[0], &part)?;
            let vectors: Vec<Vec<f64>> = points.iter().map(|p| p.vector.clone()).collect();
            for dims in [2, 3] {
                let cfg = TsneConfig {
                    dims,
                    perplexity: a.perplexity,
                    iterations: a.iterations,
                    seed: run.seed,
                    ..TsneConfig::default()
                };
                let (coords, perplexity) = tsne(&vectors, &cfg)?;
                let stem = format!("embedding-{dims}d");
                plot_embedding(&out.join(format!("{stem}.svg")), &format!("t-SNE ({dims}-D)"), &coords, &points)?;
                write_file(&out.join(format!("{stem}.csv")), embedding_csv(&coords, &points))?;
                let summary = summarize_projection(&coords, &points, &cfg, perplexity);
                write_file(&out.join(format!("{stem}.json")), serde_json::to_string_pretty(&summary)? + "\n")?;
                outputs.extend(["svg", "csv", "json"].map(|ext| format!("plots/{stem}.{ext}")));
            }
        }
    }
    let mut m = run.manifest("plot", args);
    m.outputs = outputs;
    m.write(out.parent().unwrap_or(&out))?;
    println!("plots written to {}", out.display());
    Ok(())
}
