use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dekan_core::gradcheck::{run_suite, SuiteTolerances};
use dekan_core::Parameterized;
use dekan_data::{load_dataset, synth_generate, write_dataset};
use dekan_train::{evaluate, predict_file, train, Checkpoint, Result, TrainConfig, TrainError};

#[derive(Parser)]
#[command(
    name = "dekan",
    version,
    about = "Dual-encoder KAN segmentation: train, evaluate, predict"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; `--set key=value` overrides any field.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Dataset root (overrides `data_root`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        import_weights: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset: text summary, then one CSV row per sample.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Write `<stem>_mask.png` and `<stem>_overlay.png` for one image.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Generate a synthetic dataset in the `images/` + `masks/` layout.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and the whole network (f64).
    Gradcheck {
        /// Per-op relative error tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-3)]
        end_to_end_tolerance: f64,
    },
    /// Print a checkpoint's model config and parameter count.
    Info {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train {
            config,
            overrides,
            data,
            out,
            import_weights,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            cfg = cfg.apply_overrides(&overrides)?;
            if let Some(d) = data {
                cfg.data_root = d;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if import_weights.is_some() {
                cfg.import_weights = import_weights;
            }
            println!("{}", dekan_train::train::LOG_HEADER);
            let outcome = train(&cfg, |e| println!("{}", e.csv_row()))?;
            if outcome.stopped_early {
                println!("early stop after {} epochs", outcome.log.len());
            }
            println!(
                "best epoch {} (val loss {:.6}); checkpoints in {}",
                outcome.best.epoch,
                outcome.best.best_val_loss,
                cfg.output_dir.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            threshold,
        } => {
            let mut model = Checkpoint::load(&ckpt)?.model()?;
            let pairs = load_dataset(&data)?;
            let report = evaluate(&mut model, &pairs, threshold)?;
            print!("{}\n{}", report.text(), report.csv());
        }
        Command::Predict {
            ckpt,
            image,
            out,
            threshold,
        } => {
            let mut model = Checkpoint::load(&ckpt)?.model()?;
            let (mask, overlay) = predict_file(&mut model, &image, &out, threshold)?;
            println!("{}\n{}", mask.display(), overlay.display());
        }
        Command::Synth {
            count,
            size,
            seed,
            out,
        } => {
            let pairs = synth_generate(count, size, seed)?;
            write_dataset(&out, &pairs)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Gradcheck {
            tolerance,
            end_to_end_tolerance,
        } => {
            let reports = run_suite(SuiteTolerances {
                ops: tolerance,
                end_to_end: end_to_end_tolerance,
            })?;
            let mut failed = 0;
            for r in &reports {
                println!("{r}");
                failed += usize::from(!r.passed());
            }
            println!("{} checks, {failed} failed", reports.len());
            if failed > 0 {
                return Ok(3);
            }
        }
        Command::Info { ckpt } => {
            let c = Checkpoint::load(&ckpt)?;
            let model = c.model()?;
            print!(
                "{}",
                toml::to_string(&c.model_config).map_err(|e| TrainError::Config(e.to_string()))?
            );
            println!("parameters = {}", model.parameter_count());
            println!("epoch = {}", c.epoch);
            println!("best_val_loss = {}", c.best_val_loss);
        }
    }
    Ok(0)
}
