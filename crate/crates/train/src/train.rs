//! The training loop.

use std::fmt::Write as _;
use std::path::Path;

use dekan_core::{combined_loss_with_grad, Dekan, Mode, Parameterized};
use dekan_data::{load_dataset, make_training_batch, split_dataset, SamplePair};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{import_weights, Checkpoint};
use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::eval::score_samples;
use crate::optim::{cosine_lr, Sgd, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
    /// Dice on the training split, scored like validation (eval mode, unaugmented inputs).
    pub train_dice: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_loss,val_dice,train_dice";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.9},{:.9},{:.9},{:.9}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_dice, self.train_dice
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(s, "{}", e.csv_row());
    }
    s
}

/// Stops once validation loss has failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch; returns whether it set a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// State at the epoch with the lowest validation loss.
    pub best: Checkpoint,
    /// State after the final epoch run.
    pub last: Checkpoint,
    pub model: Dekan<f32>,
    pub stopped_early: bool,
}

/// Trains on explicit train/validation splits.
pub fn train_on(
    config: &TrainConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model: Dekan<f32> = Dekan::new(config.model_config())?;
    if let Some(path) = &config.import_weights {
        import_weights(&mut model, path)?;
    }
    let spec = config.augment_spec();
    let (h, w) = (config.image_height, config.image_width);
    let mut sgd = Sgd::new(SgdConfig {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut log = Vec::new();
    let mut best = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let train_refs: Vec<&SamplePair> = train.iter().collect();
    let val_refs: Vec<&SamplePair> = val.iter().collect();

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr, config.min_lr)?;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<&SamplePair> = idx.iter().map(|&i| &train[i]).collect();
            let batch = make_training_batch::<f32>(&pairs, &spec, h, w, &mut rng)?;
            model.zero_grad();
            let logits = model.forward(&batch.x_aug, &batch.x_orig, Mode::Train)?;
            let (loss, grad) = combined_loss_with_grad(&logits, &batch.target)?;
            if !loss.total.is_finite() {
                return Err(TrainError::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            model.backward(&grad)?;
            sgd.step(&mut model, lr)
                .map_err(|e| TrainError::Numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
            loss_sum += loss.total * pairs.len() as f64;
            seen += pairs.len();
        }

        let val_report = score_samples(&mut model, &val_refs, config.threshold)?;
        let train_report = score_samples(&mut model, &train_refs, config.threshold)?;
        if !val_report.mean_loss.is_finite() {
            return Err(TrainError::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            val_loss: val_report.mean_loss,
            val_dice: val_report.metrics.dice,
            train_dice: train_report.metrics.dice,
        };
        on_epoch(&entry);
        log.push(entry);
        if stopper.observe(entry.val_loss) {
            best = Some(Checkpoint::capture(
                &model,
                &sgd,
                epoch as u32,
                entry.val_loss,
                &rng,
            ));
        }
        if stopper.should_stop() {
            break;
        }
    }

    let stopped_early = log.len() < config.epochs;
    let last_epoch = log.len() as u32 - 1;
    let last = Checkpoint::capture(&model, &sgd, last_epoch, stopper.best(), &rng);
    Ok(TrainOutcome {
        log,
        best: best.expect("the first epoch always improves on infinity"),
        last,
        model,
        stopped_early,
    })
}

/// Loads `config.data_root`, splits it, trains, and writes
/// `config.toml`, `log.csv`, `best.ckpt` and `last.ckpt` into `config.output_dir`.
pub fn train(config: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    config.validate()?;
    let pairs = load_dataset(&config.data_root)?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (train_split, val_split) = split_dataset(pairs, config.train_fraction, config.seed)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| TrainError::io(out, e))?;
    write(&out.join("config.toml"), config.to_toml().as_bytes())?;
    let outcome = train_on(config, &train_split, &val_split, &mut on_epoch)?;
    write(&out.join("log.csv"), log_csv(&outcome.log).as_bytes())?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    Ok(outcome)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| TrainError::io(path, e))
}
