use dekan_core::ModelConfig;
use dekan_train::{TrainConfig, TrainError};

#[test]
fn defaults_follow_the_published_training_setup() {
    let c = TrainConfig::default();
    assert_eq!(c.batch_size, 32);
    assert_eq!(c.lr, 1e-4);
    assert_eq!(c.momentum, 0.9);
    assert_eq!(c.weight_decay, 1e-4);
    assert_eq!(c.min_lr, 1e-5);
    assert_eq!(c.epochs, 200);
    assert_eq!(c.train_fraction, 0.8);
    assert_eq!(c.early_stop_patience, 20);
    c.validate().unwrap();
    assert_eq!(c.model_config(), ModelConfig::desk());
}

#[test]
fn full_model_round_trips_through_flat_fields() {
    let c = TrainConfig::with_model(&ModelConfig::full());
    assert_eq!(c.model_config(), ModelConfig::full());
    assert_eq!(c.augment_spec(), dekan_data::AugmentSpec::default());
}

#[test]
fn toml_round_trip() {
    let mut c = TrainConfig::default();
    c.seed = 42;
    c.import_weights = Some("w.bin".into());
    c.decoder_channels = vec![64, 32, 32, 16, 8];
    assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
}

#[test]
fn partial_file_fills_defaults() {
    let c = TrainConfig::from_toml("epochs = 3\nbatch_size = 2\n").unwrap();
    assert_eq!((c.epochs, c.batch_size, c.lr), (3, 2, 1e-4));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(
        TrainConfig::from_toml("learning_rate = 0.1"),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn overrides_use_file_syntax() {
    let c = TrainConfig::default()
        .apply_overrides(&[
            "epochs=7".into(),
            "lr = 0.01".into(),
            "data_root=some/dir".into(),
            "decoder_channels=[8,8,8,8,8]".into(),
        ])
        .unwrap();
    assert_eq!(c.epochs, 7);
    assert_eq!(c.lr, 0.01);
    assert_eq!(c.data_root, std::path::PathBuf::from("some/dir"));
    assert_eq!(c.decoder_channels, vec![8; 5]);
    assert!(TrainConfig::default()
        .apply_overrides(&["epochs".into()])
        .is_err());
    assert!(TrainConfig::default()
        .apply_overrides(&["nope=1".into()])
        .is_err());
}

#[test]
fn invariants_are_enforced() {
    let bad = [
        TrainConfig {
            lr: 1e-5,
            ..TrainConfig::default()
        },
        TrainConfig {
            min_lr: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            early_stop_patience: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            image_height: 60,
            ..TrainConfig::default()
        },
        TrainConfig {
            blur_kernel_min: 4,
            ..TrainConfig::default()
        },
    ];
    for c in bad {
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }
}
