use super::*;
use crate::dataset::{build_dataset, synth_corpus, Class, SplitRatios, Splits, SynthConfig};
use crate::model::ArchitectureConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_splits(n: usize) -> Splits {
    let originals = synth_corpus(&SynthConfig { size: 32, ..Default::default() }, n).unwrap();
    let classes = ["Orig", "MedF"].map(|c| c.parse::<Class>().unwrap());
    build_dataset(&originals, &classes, 32, &SplitRatios::default(), 1).unwrap()
}

fn toy_model(seed: u64) -> Model {
    let cfg = ArchitectureConfig {
        input_size: 32,
        num_classes: 2,
        base_width: 4,
        ..Default::default()
    };
    Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn short_run_report_is_consistent() {
    let splits = toy_splits(20);
    let mut model = toy_model(0);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 8,
        ..Default::default()
    };
    let report = train(&mut model, &splits.train, &splits.validation, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 3);
    assert_eq!(report.stop_reason, StopReason::MaxEpochs);
    // 13 originals x 2 classes = 26 items = 4 batches of 8
    assert_eq!(report.total_iterations, 12);
    assert_eq!(report.validation_confusion.row_sums(), vec![2, 2]);
    let schedule = [0.01, 0.001, 0.0001, 0.00001];
    let lrs = report.learning_rates();
    assert_eq!(lrs[..], schedule[..lrs.len()]);
    assert!(report.curve_csv().lines().count() == 4);
}

#[test]
fn same_seed_same_report() {
    let splits = toy_splits(12);
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    let mut a = toy_model(3);
    let mut b = toy_model(3);
    let ra = train(&mut a, &splits.train, &splits.validation, &cfg).unwrap();
    let rb = train(&mut b, &splits.train, &splits.validation, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(a, b);
}

#[test]
fn frozen_bank_survives_training() {
    let splits = toy_splits(12);
    let mut model = toy_model(4);
    let before = model.param(crate::model::HPF_PARAM).unwrap().value.clone();
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    train(&mut model, &splits.train, &splits.validation, &cfg).unwrap();
    let after = &model.param(crate::model::HPF_PARAM).unwrap().value;
    assert!(before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn full_batch_loss_falls_for_small_steps() {
    let splits = toy_splits(8);
    let cfg = ArchitectureConfig {
        input_size: 32,
        num_classes: 2,
        base_width: 4,
        init_std: 0.1,
        ..Default::default()
    };
    let mut model = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let images: Vec<_> = splits.train.items.iter().map(|i| &i.image).collect();
    let x = model.images_to_batch(&images).unwrap();
    let labels = splits.train.labels();
    let mut opt = OptimizerState::new(model.params(), 1e-3, 0.9, 0.0005);
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let loss = model.loss_and_gradients(&x, &labels).unwrap();
        assert!(loss < prev, "{loss} !< {prev}");
        prev = loss;
        opt.step(model.params_mut()).unwrap();
    }
}

#[test]
fn evaluate_counts_every_item() {
    let splits = toy_splits(12);
    let model = toy_model(6);
    let (acc, m) = evaluate(&model, &splits.test, 5).unwrap();
    assert_eq!(m.total() as usize, splits.test.len());
    assert_eq!(m.row_sums(), splits.test.class_counts().iter().map(|&c| c as u64).collect::<Vec<_>>());
    assert!((acc - m.trace() as f64 / m.total() as f64).abs() < 1e-15);
}

#[test]
fn rejects_empty_and_mismatched_sets() {
    let splits = toy_splits(6);
    let mut model = toy_model(7);
    let empty = LabeledSet {
        classes: splits.train.classes.clone(),
        items: vec![],
    };
    assert!(train(&mut model, &empty, &splits.validation, &TrainConfig::default()).is_err());
    let cfg = ArchitectureConfig {
        input_size: 32,
        num_classes: 3,
        base_width: 4,
        ..Default::default()
    };
    let mut three = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(train(&mut three, &splits.train, &splits.validation, &TrainConfig::default()).is_err());
}

#[test]
fn stall_flag_and_early_stop() {
    // an all-constant input cannot be learned: accuracy stays at chance
    let splits = toy_splits(10);
    let mut flat = splits.train.clone();
    for item in &mut flat.items {
        item.image = crate::imageops::GrayImage::filled(32, 32, 100);
    }
    let mut model = toy_model(8);
    let cfg = TrainConfig {
        max_epochs: 20,
        batch_size: 13,
        stall_epochs: 3,
        stop_when_stalled: true,
        ..Default::default()
    };
    let report = train(&mut model, &flat, &splits.validation, &cfg).unwrap();
    let at = report.stalled_at.expect("flagged");
    assert!(at >= 3 && at < 20);
    assert_eq!(report.stop_reason, StopReason::Stalled);
    assert_eq!(report.epochs.len(), at);
    assert!(report.stalled());
}
