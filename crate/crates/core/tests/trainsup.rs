mod common;

use ndarray::Array3;
use shiftadapt::dataio::Label;
use shiftadapt::nets::{Classifier, Family, NetworkSpec};
use shiftadapt::trainsup::{
    evaluate_classifier, evaluate_model, grid_search, report_from_scores, select_best,
    train_classifier, GridAxes, GridReport, TrainConfig, TrainError,
};

use common::{half_bright, logistic_accuracy, split, stack};

fn tiny(family: Family) -> NetworkSpec {
    NetworkSpec::new(family, (2, 32, 32))
        .with_width(2)
        .with_latent(8)
        .with_seed(3)
}

#[test]
fn separable_split_is_fit_exactly() {
    let train = half_bright(8, (2, 32, 32), 1);
    assert_eq!(
        logistic_accuracy(&train, 200),
        1.0,
        "oracle: data must be linearly separable"
    );
    let data = split(train, Vec::new(), Vec::new());
    let mut cfg = TrainConfig::new(1e-2, 50);
    cfg.batch_size = 8;
    let result = train_classifier(&data, &tiny(Family::Residual18), &cfg).unwrap();
    assert_eq!(result.loss_curve.len(), 50);
    assert!(result.loss_curve.iter().all(|l| l.is_finite()));
    let report = evaluate_classifier(&result.checkpoint, &data.train, "train").unwrap();
    assert_eq!(report.metrics.accuracy, Some(1.0));
}

#[test]
fn config_and_data_preconditions() {
    let data = split(half_bright(2, (2, 32, 32), 2), Vec::new(), Vec::new());
    let zero = TrainConfig::new(1e-3, 0);
    assert!(matches!(
        train_classifier(&data, &tiny(Family::Residual18), &zero),
        Err(TrainError::Config(_))
    ));
    let negative = TrainConfig::new(-1.0, 1);
    assert!(matches!(
        train_classifier(&data, &tiny(Family::Residual18), &negative),
        Err(TrainError::Config(_))
    ));
    let normals: Vec<_> = data
        .train
        .iter()
        .filter(|s| s.label == Label::Normal)
        .cloned()
        .collect();
    let one_class = split(normals, Vec::new(), Vec::new());
    assert!(matches!(
        train_classifier(
            &one_class,
            &tiny(Family::Residual18),
            &TrainConfig::new(1e-3, 1)
        ),
        Err(TrainError::SingleClass(_))
    ));
}

#[test]
fn training_is_deterministic() {
    let data = split(
        half_bright(4, (2, 32, 32), 3),
        half_bright(2, (2, 32, 32), 4),
        Vec::new(),
    );
    let mut cfg = TrainConfig::new(1e-3, 3);
    cfg.batch_size = 3;
    cfg.seed = 9;
    let a = train_classifier(&data, &tiny(Family::CompoundB3).with_width(8), &cfg).unwrap();
    let b = train_classifier(&data, &tiny(Family::CompoundB3).with_width(8), &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.val_accuracy_curve, b.val_accuracy_curve);
    assert_eq!(a.checkpoint, b.checkpoint);
}

#[test]
fn loss_is_non_increasing_on_constant_classes() {
    let mut train = Vec::new();
    for i in 0..8 {
        let (label, v) = if i % 2 == 0 {
            (Label::Normal, -1.0)
        } else {
            (Label::Demented, 1.0)
        };
        train.push(stack(
            &format!("c{i}"),
            label,
            Array3::from_elem((2, 32, 32), v),
        ));
    }
    let data = split(train, Vec::new(), Vec::new());
    // Full-batch steps at the smaller grid learning rate.
    let mut cfg = TrainConfig::new(2e-5, 15);
    cfg.batch_size = 8;
    let r = train_classifier(&data, &tiny(Family::Residual18), &cfg).unwrap();
    for w in r.loss_curve.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "loss rose: {:?}", r.loss_curve);
    }
    assert!(r.loss_curve.last() < r.loss_curve.first());
}

#[test]
fn replaying_fixture_matrices_selects_known_best() {
    let report = GridReport::from_csv(include_str!("fixtures/grid_accuracy.csv")).unwrap();
    assert_eq!(report.cells.len(), 4 * 2 * 4);
    let best = report.best().unwrap();
    assert_eq!(best.model, "grouped_residual50");
    assert_eq!(best.learning_rate, 2e-4);
    assert_eq!(best.epochs, 50);
    assert_eq!(best.val_accuracy, 0.85306);
    let summary = report.summary().unwrap();
    assert_eq!(summary.best, *best);
}

#[test]
fn grid_search_covers_every_cell_and_matches_retraining() {
    let data = split(
        half_bright(4, (2, 32, 32), 5),
        half_bright(3, (2, 32, 32), 6),
        Vec::new(),
    );
    let axes = GridAxes {
        specs: vec![tiny(Family::Residual18), tiny(Family::Residual18_3d)],
        learning_rates: vec![1e-2, 1e-3],
        epoch_budgets: vec![1, 3],
    };
    let mut base = TrainConfig::new(1.0, 1);
    base.batch_size = 4;
    let fast = grid_search(&data, &axes, &base, false).unwrap();
    assert_eq!(fast.report.cells.len(), 2 * 2 * 2);
    let brute = fast
        .report
        .cells
        .iter()
        .map(|c| c.val_accuracy)
        .fold(f64::MIN, f64::max);
    assert_eq!(fast.best.val_accuracy, brute);
    assert_eq!(select_best(&fast.report.cells), Some(&fast.best));
    let exact = grid_search(&data, &axes, &base, true).unwrap();
    assert_eq!(fast.report, exact.report);
    assert_eq!(fast.best_checkpoint.tensors, exact.best_checkpoint.tensors);
    let recomputed = evaluate_model(
        &Classifier::from_checkpoint(&fast.best_checkpoint).unwrap(),
        &data.val,
        "val",
    )
    .unwrap();
    assert_eq!(recomputed.metrics.accuracy, Some(fast.best.val_accuracy));
}

#[test]
fn report_edge_cases() {
    let labels = [true, true, false, false];
    let perfect = report_from_scores(&[2.0, 1.0, -1.0, -3.0], &labels, "d", "m").unwrap();
    assert_eq!(perfect.metrics.accuracy, Some(1.0));
    assert_eq!(perfect.metrics.f1, Some(1.0));
    let flipped = report_from_scores(&[-2.0, -1.0, 1.0, 3.0], &labels, "d", "m").unwrap();
    assert_eq!(flipped.metrics.accuracy, Some(0.0));
    assert_eq!(flipped.metrics.sensitivity, Some(0.0));
    let one_class = report_from_scores(&[1.0, -1.0], &[true, true], "d", "m").unwrap();
    assert_eq!(one_class.metrics.auc, None);
    assert!(one_class.undefined.contains(&"auc".to_string()));
    assert_eq!(one_class.metrics.accuracy, Some(0.5));
}

#[test]
fn consistency_fixture_counts() {
    // 123 TP, 16 FN, 85 TN, 21 FP.
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for (truth, pred, n) in [
        (true, true, 123),
        (true, false, 16),
        (false, false, 85),
        (false, true, 21),
    ] {
        for _ in 0..n {
            labels.push(truth);
            scores.push(if pred { 1.0 } else { -1.0 });
        }
    }
    let r = report_from_scores(&scores, &labels, "d", "m").unwrap();
    let acc = r.metrics.accuracy.unwrap();
    assert!((acc - 208.0 / 245.0).abs() < 1e-12);
    assert!((acc - 0.84897).abs() < 1e-4);
}
