//! Staged training on a small synthetic dataset: ordering contracts,
//! freezing, checkpoints, splits and ensembles.

mod common;

use std::collections::BTreeSet;

use common::{small_config, small_dataset};
use lakeice::data::SensorKind;
use lakeice::model::{Branch, ParamGroup};
use lakeice::nn::Params;
use lakeice::training::{make_split, train_ensemble, Pipeline, SplitMode, Stage};
use lakeice::Error;

#[test]
fn stage_ordering_is_enforced() {
    let synth = small_dataset(1);
    let split = make_split(&synth.dataset, SplitMode::Lowo, "2017-18").unwrap();
    let train = split.train_set(&synth.dataset).unwrap();
    let mut p = Pipeline::new(&small_config(1), &train).unwrap();
    assert!(matches!(p.train_regression(&train), Err(Error::MissingStepOneWeights)));
    assert!(matches!(p.finetune_shared_with_sar(&train), Err(Error::MissingPrerequisite(_))));
    p.pretrain_optical_and_shared(&train).unwrap();
    assert!(matches!(p.finetune_shared_with_sar(&train), Err(Error::MissingPrerequisite(_))));
    assert!(matches!(p.train_regression(&train), Err(Error::MissingStepOneWeights)));
}

#[test]
fn optical_alternation_and_descent() {
    let synth = small_dataset(2);
    let split = make_split(&synth.dataset, SplitMode::Lowo, "2017-18").unwrap();
    let train = split.train_set(&synth.dataset).unwrap();
    let mut cfg = small_config(2);
    cfg.epoch_scale = 0.2;
    let mut p = Pipeline::new(&cfg, &train).unwrap();
    let report = p.pretrain_optical_and_shared(&train).unwrap().clone();
    let letters: String = report.alternation.iter().map(|s| s.letter()).collect();
    assert_eq!(letters, "MV".repeat(4));
    // same-sensor epochs compared, so the alternation does not mask progress
    assert!(report.epoch_losses[6] < report.epoch_losses[0], "{:?}", report.epoch_losses);
    assert!(report.epoch_losses[7] < report.epoch_losses[1], "{:?}", report.epoch_losses);
}

#[test]
fn finetune_leaves_optical_encoders_untouched_and_checkpoints_round_trip() {
    let synth = small_dataset(3);
    let split = make_split(&synth.dataset, SplitMode::Lowo, "2017-18").unwrap();
    let train = split.train_set(&synth.dataset).unwrap();
    let test = split.test_set(&synth.dataset).unwrap();
    let mut p = Pipeline::new(&small_config(3), &train).unwrap();
    p.pretrain_sar_encoder(&train).unwrap();
    p.pretrain_optical_and_shared(&train).unwrap();
    let optical = |p: &Pipeline| -> Vec<Vec<f64>> {
        p.model
            .groups_params(&[ParamGroup::Encoder(SensorKind::Modis), ParamGroup::Encoder(SensorKind::Viirs)])
            .into_iter()
            .map(|t| t.data().to_vec())
            .collect()
    };
    let before = optical(&p);
    p.finetune_shared_with_sar(&train).unwrap();
    assert_eq!(optical(&p), before);
    assert!(p.model.sar_aux_head.is_none());
    assert!(matches!(p.model.branches.get(&SensorKind::Sar), Some(Branch::Sar(_))));
    assert_eq!(p.model.resize_layer().trainable_parameters(), 0);
    p.train_regression(&train).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = p.save(dir.path(), &p.checkpoint_meta(Stage::Regression)).unwrap();
    assert_eq!(path.file_name().unwrap(), "regression.ckpt");
    let (meta, q) = Pipeline::load(&path).unwrap();
    assert_eq!(meta.stage, Stage::Regression);
    assert_eq!(meta.config_hash, p.config.hash());
    let flat = |p: &Pipeline| -> Vec<(String, Vec<f64>)> {
        let mut v: Vec<_> = p.model.params().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();
        v.extend(p.regressor.as_ref().unwrap().params().into_iter().map(|(n, t)| (n, t.data().to_vec())));
        v
    };
    assert_eq!(flat(&p), flat(&q));
    for lw in &test {
        assert_eq!(p.predict(lw).unwrap(), q.predict(lw).unwrap());
    }
    let embeddings = p.embed_lake_winter(test[0]).unwrap();
    assert!(embeddings.iter().all(|e| e.values.shape() == [6, 12, 12]));
}

#[test]
fn splits_hold_out_exactly_one_key() {
    let synth = small_dataset(4);
    let ds = &synth.dataset;
    let lolo = make_split(ds, SplitMode::Lolo, "ALPHA").unwrap();
    let train = lolo.train_set(ds).unwrap();
    assert!(train.iter().all(|lw| lw.lake.id() != "alpha"));
    assert!(lolo.test_set(ds).unwrap().iter().all(|lw| lw.lake.id() == "alpha"));
    assert_eq!(train.len() + lolo.test.len(), ds.lake_winters.len());
    let lowo = make_split(ds, SplitMode::Lowo, "2016-17").unwrap();
    assert!(lowo.train_set(ds).unwrap().iter().all(|lw| lw.winter == "2017-18"));
    assert!(matches!(make_split(ds, SplitMode::Lolo, "sihl"), Err(Error::Config(_))));
}

#[test]
fn identical_seeds_give_zero_ensemble_spread() {
    let synth = small_dataset(5);
    let split = make_split(&synth.dataset, SplitMode::Lowo, "2017-18").unwrap();
    let train = split.train_set(&synth.dataset).unwrap();
    let test = split.test_set(&synth.dataset).unwrap();
    let stages: BTreeSet<Stage> = [Stage::OpticalPretrain].into_iter().collect();
    let same = train_ensemble(&small_config(5), &train, &test, &[9, 9, 9], &stages).unwrap();
    for row in &same.segmentation {
        assert_eq!(row.macc.variance, 0.0);
        assert_eq!(row.miou.variance, 0.0);
    }
    let distinct = train_ensemble(&small_config(5), &train, &test, &[1, 2, 3], &stages).unwrap();
    assert!(distinct.segmentation.iter().all(|r| r.macc.variance >= 0.0));
    assert!(distinct.segmentation.iter().any(|r| r.macc.variance > 0.0));
}
