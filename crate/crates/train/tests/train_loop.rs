use dekan_core::ModelConfig;
use dekan_data::{split_dataset, synth_generate};
use dekan_train::{train_on, EarlyStopping, TrainConfig, TrainError};
use proptest::prelude::*;

fn small_config() -> TrainConfig {
    let model = ModelConfig {
        embed_dim: 16,
        decoder_channels: vec![16, 16, 8, 8, 8],
        ..ModelConfig::desk()
    };
    TrainConfig {
        batch_size: 2,
        epochs: 3,
        seed: 11,
        ..TrainConfig::with_model(&model)
    }
}

#[test]
fn constant_validation_loss_stops_after_patience_plus_one_epochs() {
    let mut stop = EarlyStopping::new(5);
    let mut epochs = 0;
    for _ in 0..100 {
        epochs += 1;
        stop.observe(0.7);
        if stop.should_stop() {
            break;
        }
    }
    assert_eq!(epochs, 6);
}

#[test]
fn improvement_resets_patience() {
    let mut stop = EarlyStopping::new(2);
    assert!(stop.observe(1.0));
    assert!(!stop.observe(1.0));
    assert!(stop.observe(0.5));
    assert!(!stop.observe(0.6));
    assert!(!stop.should_stop());
    assert!(!stop.observe(0.5));
    assert!(stop.should_stop());
}

proptest! {
    #[test]
    fn best_is_the_running_minimum(losses in proptest::collection::vec(0.0f64..10.0, 1..50)) {
        let mut stop = EarlyStopping::new(losses.len() + 1);
        let mut min = f64::INFINITY;
        for &l in &losses {
            let improved = stop.observe(l);
            prop_assert_eq!(improved, l < min);
            min = min.min(l);
            prop_assert_eq!(stop.best(), min);
        }
    }
}

#[test]
fn identical_runs_produce_identical_logs_and_checkpoints() {
    let pairs = synth_generate(5, 64, 3).unwrap();
    let (train, val) = split_dataset(pairs, 0.8, 3).unwrap();
    let cfg = small_config();
    let a = train_on(&cfg, &train, &val, |_| {}).unwrap();
    let b = train_on(&cfg, &train, &val, |_| {}).unwrap();
    assert_eq!(a.log.len(), 3);
    assert_eq!(a.log, b.log);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());

    let best_loss = a
        .log
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.best.best_val_loss, best_loss);
    assert_eq!(a.log[a.best.epoch as usize].val_loss, best_loss);
    assert!(a.log.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert_eq!(a.log[0].lr, cfg.lr);
    assert_eq!(a.log[2].lr, cfg.min_lr);
}

#[test]
fn a_different_seed_changes_the_run() {
    let pairs = synth_generate(4, 64, 3).unwrap();
    let (train, val) = split_dataset(pairs, 0.5, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let a = train_on(&cfg, &train, &val, |_| {}).unwrap();
    let b = train_on(&TrainConfig { seed: 12, ..cfg }, &train, &val, |_| {}).unwrap();
    assert_ne!(a.log[0].train_loss, b.log[0].train_loss);
}

#[test]
fn empty_splits_are_rejected() {
    let pairs = synth_generate(2, 64, 0).unwrap();
    let err = train_on(&small_config(), &pairs, &[], |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::EmptyDataset));
}

#[test]
fn best_checkpoint_evaluates_like_its_log_row() {
    let pairs = synth_generate(5, 64, 8).unwrap();
    let (train, val) = split_dataset(pairs, 0.6, 8).unwrap();
    let cfg = small_config();
    let out = train_on(&cfg, &train, &val, |_| {}).unwrap();
    let row = out.log[out.best.epoch as usize];
    let mut model = out.best.model().unwrap();
    let report = dekan_train::evaluate(&mut model, &val, cfg.threshold).unwrap();
    assert!((report.metrics.dice - row.val_dice).abs() <= 1e-6);
    assert!((report.mean_loss - row.val_loss).abs() <= 1e-6);
    let mut model = out.best.model().unwrap();
    let report = dekan_train::evaluate(&mut model, &train, cfg.threshold).unwrap();
    assert!((report.metrics.dice - row.train_dice).abs() <= 1e-6);
}
