mod common;

use common::{gradcheck, RegFixture, SegFixture};
use lakeice::losses::LossWeights;
use lakeice::nn::Params;

#[test]
fn segmentation_gradients_match_finite_differences() {
    let fx = SegFixture::new(11);
    let (_, analytic) = fx.loss_and_grads(&fx.model);
    let report = gradcheck(&fx.model, &analytic, |m| fx.loss_and_grads(m).0, 120, 1);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
    assert_eq!(report.checked, 120);
}

#[test]
fn regression_gradients_match_finite_differences() {
    let fx = RegFixture::new(12);
    let windows: Vec<Vec<_>> = fx.windows.iter().map(|w| w.iter().collect()).collect();
    let weights = LossWeights::default();
    let mut analytic = fx.model.zeroed();
    fx.model.batch_step(&windows, &fx.targets, &fx.days, weights, &mut analytic).unwrap();
    let loss = |m: &lakeice::temporal::Regressor| m.batch_loss(&windows, &fx.targets, &fx.days, weights).unwrap().total;
    let report = gradcheck(&fx.model, &analytic, loss, 120, 2);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
    assert_eq!(report.checked, 120);
}
