//! Property tests for geometry, padding, losses, windows, fusion and
//! phenology extraction.

mod common;

use chrono::{Duration, NaiveDate};
use common::ymd;
use lakeice::data::{
    build_clean_pixel_mask, mask_bbox, pad_to_patch, patch_offset, CleanPixel, CleanPixelValues, Grid, GridSpec,
    SensorKind,
};
use lakeice::evaluation::{extract_ice_dates, SeriesSource, WaterFractionSeries};
use lakeice::losses::{intra_day_coherence_loss, line_loss, regression_loss, LossWeights, RegressionBatch};
use lakeice::model::EmbeddingTensor;
use lakeice::nn::{BilinearResize, Tensor};
use lakeice::temporal::{build_window_at, fuse_daily, Regressor, RegressorConfig};
use proptest::prelude::*;

/// Star-shaped polygon around `centre` with radii in `[1, 3]`.
fn star_polygon(centre: [f64; 2], radii: &[f64]) -> Vec<[f64; 2]> {
    let n = radii.len();
    radii
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [centre[0] + r * a.cos(), centre[1] + r * a.sin()]
        })
        .collect()
}

fn day(offset: i64) -> NaiveDate {
    ymd(2017, 1, 1) + Duration::days(offset)
}

/// Open water, a frozen dip, then open water again.
fn v_series(down: usize, low: usize, up: usize, depth: f64) -> Vec<(NaiveDate, f64)> {
    let total = down + low + up;
    (0..total)
        .map(|i| {
            let f = if i < down {
                1.0 - (1.0 - depth) * i as f64 / down as f64
            } else if i < down + low {
                depth
            } else {
                depth + (1.0 - depth) * (i - down - low + 1) as f64 / up as f64
            };
            (day(i as i64), f.clamp(0.0, 1.0))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_mask_count_invariant_to_rotation_and_translation(
        radii in prop::collection::vec(1.0f64..3.0, 5..10),
        centre in (4.2f64..5.8, 4.2f64..5.8),
        shift in 1usize..5,
        dx in 0usize..6,
        dy in 0usize..6,
    ) {
        let grid = GridSpec::new([0.0, 0.0], 1.0, 16, 16);
        let poly = star_polygon([centre.0, centre.1], &radii);
        let base = build_clean_pixel_mask(&poly, &grid).unwrap().count_true();
        let mut rotated = poly.clone();
        rotated.rotate_left(shift % poly.len());
        prop_assert_eq!(build_clean_pixel_mask(&rotated, &grid).unwrap().count_true(), base);
        let moved: Vec<[f64; 2]> = poly.iter().map(|p| [p[0] + dx as f64, p[1] + dy as f64]).collect();
        prop_assert_eq!(build_clean_pixel_mask(&moved, &grid).unwrap().count_true(), base);
    }

    #[test]
    fn pad_round_trip(
        cells in prop::collection::btree_set((0usize..12, 0usize..12), 1..40),
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let sensor = SensorKind::Modis;
        let pixels: Vec<CleanPixel> = cells
            .iter()
            .map(|&(row, col)| CleanPixel {
                row,
                col,
                values: (0..sensor.channels()).map(|_| rand::Rng::random_range(&mut r, 0.01f32..1.0)).collect(),
                cloud_free: rand::Rng::random_bool(&mut r, 0.7),
            })
            .collect();
        let input = CleanPixelValues { rows: 12, cols: 12, pixels };
        let obs = pad_to_patch(&input, sensor, "x", day(0)).unwrap();
        let seen = Grid::from_fn(12, 12, |r, c| cells.contains(&(r, c)));
        let (dr, dc) = patch_offset((12, 12), mask_bbox(&seen).unwrap(), sensor.patch_shape()).unwrap();
        for p in &input.pixels {
            prop_assert_eq!(obs.values().pixel(p.row - dr, p.col - dc), &p.values[..]);
            prop_assert_eq!(*obs.valid_mask().get(p.row - dr, p.col - dc), p.cloud_free);
        }
        let written: usize = (0..obs.values().rows())
            .flat_map(|r| (0..obs.values().cols()).map(move |c| (r, c)))
            .filter(|&(r, c)| obs.values().pixel(r, c).iter().any(|v| *v != 0.0))
            .count();
        prop_assert_eq!(written, input.pixels.len());
    }

    #[test]
    fn line_loss_shift_invariant(y in prop::collection::vec(-1.0f64..1.0, 2..8), delta in -2.0f64..2.0) {
        let shifted: Vec<f64> = y.iter().map(|v| v + delta).collect();
        let a = line_loss(&y).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - line_loss(&shifted).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn idc_scales_quadratically(
        y in prop::collection::vec(0.0f64..1.0, 4),
        groups in prop::collection::vec(0i64..3, 4),
        s in -3.0f64..3.0,
    ) {
        let mut g = groups.clone();
        g.sort();
        let days: Vec<NaiveDate> = g.iter().map(|&d| day(d)).collect();
        let scaled: Vec<f64> = y.iter().map(|v| v * s).collect();
        let base = intra_day_coherence_loss(&y, &days).unwrap();
        prop_assert!((intra_day_coherence_loss(&scaled, &days).unwrap() - s * s * base).abs() < 1e-12);
    }

    #[test]
    fn regression_loss_monotone_in_weights(
        y in prop::collection::vec(0.0f64..1.0, 4),
        t in prop::collection::vec(0.0f64..1.0, 4),
        beta in 0.0f64..1.0,
        gamma in 0.0f64..1.0,
        db in 0.0f64..1.0,
        dg in 0.0f64..1.0,
    ) {
        let days = vec![day(0), day(0), day(1), day(2)];
        let batch = RegressionBatch::new(y, t, days).unwrap();
        let lo = regression_loss(&batch, LossWeights { beta, gamma }).unwrap();
        let hi = regression_loss(&batch, LossWeights { beta: beta + db, gamma: gamma + dg }).unwrap();
        prop_assert!(hi >= lo - 1e-15);
    }

    #[test]
    fn resize_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = common::rng(seed);
        let x = common::random_tensor(&[2, 16, 16], &mut r);
        let y = common::random_tensor(&[2, 16, 16], &mut r);
        let rs = BilinearResize::new((16, 16), (6, 6));
        let combo = Tensor::from_vec(&[2, 16, 16], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect());
        let lhs = rs.forward(&combo);
        let (rx, ry) = (rs.forward(&x), rs.forward(&y));
        for ((l, p), q) in lhs.data().iter().zip(rx.data()).zip(ry.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-6);
        }
    }

    #[test]
    fn fuse_of_repeats_is_identity_and_order_free(x in 0.0f64..1.0, ys in prop::collection::vec(0.0f64..1.0, 1..3)) {
        let same: Vec<(SensorKind, f64)> = SensorKind::ALL.into_iter().map(|s| (s, x)).collect();
        prop_assert!((fuse_daily(day(0), &same).unwrap().fused - x).abs() < 1e-15);
        let preds: Vec<(SensorKind, f64)> = SensorKind::ALL.into_iter().zip(ys.iter().copied()).collect();
        let mut rev = preds.clone();
        rev.reverse();
        let f = fuse_daily(day(0), &preds).unwrap().fused;
        prop_assert!((f - fuse_daily(day(0), &rev).unwrap().fused).abs() < 1e-15);
    }

    #[test]
    fn threshold_monotonicity(
        down in 2usize..15,
        low in 1usize..10,
        up in 2usize..15,
        depth in 0.0f64..0.2,
        t1 in 0.2f64..0.9,
        dt in 0.01f64..0.1,
    ) {
        let s = WaterFractionSeries::new("x", "w", SeriesSource::Label, v_series(down, low, up, depth)).unwrap();
        let lo = extract_ice_dates(&s, t1).unwrap();
        let hi = extract_ice_dates(&s, (t1 + dt).min(1.0)).unwrap();
        if let (Some(a), Some(b)) = (lo.ice_on, hi.ice_on) {
            prop_assert!(b <= a);
        }
        if let (Some(a), Some(b)) = (lo.ice_off, hi.ice_off) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn duplicate_observations_do_not_move_events(
        down in 2usize..12,
        low in 1usize..8,
        up in 2usize..12,
        dups in prop::collection::vec(any::<prop::sample::Index>(), 1..6),
    ) {
        let pts = v_series(down, low, up, 0.05);
        let base = WaterFractionSeries::new("x", "w", SeriesSource::Label, pts.clone()).unwrap();
        let mut with_dups = pts.clone();
        for i in &dups {
            with_dups.push(pts[i.index(pts.len())]);
        }
        with_dups.sort_by_key(|p| p.0);
        let dup = WaterFractionSeries::from_observations("x", "w", SeriesSource::Label, with_dups).unwrap();
        prop_assert_eq!(extract_ice_dates(&base, 0.3).unwrap(), extract_ice_dates(&dup, 0.3).unwrap());
    }

    #[test]
    fn window_building_is_total(offsets in prop::collection::vec(0i64..60, 1..25)) {
        let mut sorted = offsets.clone();
        sorted.sort();
        let series: Vec<EmbeddingTensor> = sorted
            .iter()
            .enumerate()
            .map(|(i, &o)| EmbeddingTensor {
                values: Tensor::full(&[1, 1, 1], i as f64),
                sensor: SensorKind::ALL[i % 3],
                date: day(o),
            })
            .collect();
        for i in 0..series.len() {
            let w = build_window_at(&series, i, 7).unwrap();
            prop_assert_eq!(w.slots.len(), 7);
            prop_assert_eq!(w.center_slot().index, i);
        }
    }
}

#[test]
fn regression_ignores_provenance_metadata() {
    let mut r = common::rng(5);
    let cfg = RegressorConfig::miniature();
    let reg = Regressor::new(cfg.clone(), 3).unwrap();
    let shape = cfg.embedding_shape();
    let series: Vec<EmbeddingTensor> = (0..6)
        .map(|i| EmbeddingTensor {
            values: common::random_tensor(&shape, &mut r),
            sensor: SensorKind::Modis,
            date: day(i),
        })
        .collect();
    let scrubbed: Vec<EmbeddingTensor> = series
        .iter()
        .map(|e| EmbeddingTensor {
            sensor: SensorKind::Sar,
            date: e.date + Duration::days(400),
            ..e.clone()
        })
        .collect();
    for i in 0..series.len() {
        let a = reg.regress_fraction(&build_window_at(&series, i, cfg.window).unwrap(), &series).unwrap();
        let b = reg.regress_fraction(&build_window_at(&scrubbed, i, cfg.window).unwrap(), &scrubbed).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn v_series_fixture_has_both_events() {
    let s = WaterFractionSeries::new("x", "w", SeriesSource::Label, v_series(5, 3, 5, 0.0)).unwrap();
    let e = extract_ice_dates(&s, 0.3).unwrap();
    assert!(e.ice_on.is_some() && e.ice_off.is_some());
}
