use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use echocaps::checkpoint::Checkpoint;
use echocaps::config::RunConfig;
use echocaps::dataset::{self, read_images, read_traces, write_images, write_traces};
use echocaps::harness::{self, evaluate, run_training, split_images};
use echocaps::imagefile::read_png;
use echocaps::model::ArchTag;
use echocaps::{Error, Result};
use echocaps_core::echosim::gen_dataset;
use echocaps_core::numerics::Tensor;
use echocaps_core::{HeightClass, InputVariant};

#[derive(Parser)]
#[command(
    name = "echocaps",
    version,
    about = "Ultrasonic object height classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled raw-trace dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of traces (default: n_total from the config).
        #[arg(long)]
        n: Option<usize>,
        /// Dataset seed (default: data_seed from the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn raw traces into 16-bit PNG images.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write single-channel magnitude images.
        #[arg(long)]
        absolute: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train on an image directory with the equalized split.
    Train {
        #[arg(long)]
        arch: Option<ArchTag>,
        #[arg(long)]
        variant: Option<InputVariant>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path (default: <arch>-<variant>.ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also append the per-epoch rows to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix on the holdout split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluate every image instead of the holdout split.
        #[arg(long)]
        all: bool,
    },
    /// Single-measurement latency of preprocessing plus inference.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw-trace directory; simulated traces are used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_warm: Option<usize>,
        #[arg(long)]
        n_measure: Option<usize>,
    },
    /// Classify one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Train and compare complex and absolute input on one simulated split.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the two checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run_config_of(ckpt: &Checkpoint) -> Result<RunConfig> {
    RunConfig::parse(&ckpt.config_text)
        .map_err(|m| Error::Data(format!("checkpoint config is unreadable: {m}")))
}

fn print_matrix_report(accuracy: f64, matrix: &harness::ConfusionMatrix) {
    print!("{matrix}");
    println!(
        "accuracy={:.4} ({}/{})",
        accuracy,
        matrix.correct(),
        matrix.total()
    );
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            out,
            config,
            n,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            let n = n.unwrap_or(cfg.n_total);
            let traces = gen_dataset(n, seed.unwrap_or(cfg.data_seed), &cfg.signal)?;
            write_traces(&out, &traces)?;
            println!("wrote {n} traces to {}", out.display());
        }
        Command::Preprocess {
            data,
            out,
            absolute,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traces = read_traces(&data, &cfg.signal)?;
            let variant = if absolute {
                InputVariant::Absolute
            } else {
                InputVariant::Complex
            };
            let pre = dataset::preprocess_traces(&traces, &cfg.signal, variant)?;
            write_images(&out, &pre.images)?;
            println!(
                "wrote {} {variant} images to {} ({} clipped components)",
                pre.images.len(),
                out.display(),
                pre.clipped
            );
        }
        Command::Train {
            arch,
            variant,
            config,
            seed,
            data,
            out,
            log,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.arch = arch.unwrap_or(cfg.arch);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            let set = read_images(&data)?;
            let (train, validation) = split_images(&set, &cfg.split())?;
            let out =
                out.unwrap_or_else(|| PathBuf::from(format!("{}-{}.ckpt", cfg.arch, cfg.variant)));
            let mut log_file = match &log {
                Some(p) => Some(BufWriter::new(
                    File::create(p).map_err(echocaps::Error::io(p))?,
                )),
                None => None,
            };
            let outcome = run_training(&cfg, &train, &validation, &mut |r| {
                println!("{r}");
                if let Some(f) = log_file.as_mut() {
                    let _ = writeln!(f, "{r}").and_then(|_| f.flush());
                }
            })?;
            outcome.best.save(&out)?;
            println!(
                "best epoch {} val_accuracy={:.4}, checkpoint {} sha256={}",
                outcome.best_epoch,
                outcome.best_accuracy,
                out.display(),
                outcome.best.digest()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            all,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let set = read_images(&data)?;
            ckpt.model.check_variant(set.variant)?;
            let set = if all {
                set
            } else {
                split_images(&set, &run_config_of(&ckpt)?.split())?.1
            };
            let e = evaluate(&ckpt.model, &set)?;
            print_matrix_report(e.accuracy, &e.matrix);
        }
        Command::Bench {
            checkpoint,
            data,
            n_warm,
            n_measure,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = run_config_of(&ckpt)?;
            let traces = match data {
                Some(dir) => read_traces(&dir, &cfg.signal)?,
                None => gen_dataset(32, cfg.data_seed, &cfg.signal)?,
            };
            let report = harness::bench_latency(
                &ckpt.model,
                &cfg.signal,
                &traces,
                n_warm.unwrap_or(cfg.n_warm),
                n_measure.unwrap_or(cfg.n_measure),
            )?;
            println!("{report}");
        }
        Command::Predict { checkpoint, image } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let img = read_png(&image)?;
            ckpt.model.check_variant(img.variant())?;
            let x = Tensor::stack(&[&img.to_tensor()]).map_err(Error::from)?;
            let scores = ckpt.model.scores(&x)?.remove(0);
            let class = echocaps_core::stem::argmax_lowest(&scores);
            let label = match ckpt.model.arch_tag() {
                ArchTag::CapsNet => "norms",
                ArchTag::Cnn => "probabilities",
            };
            let name = HeightClass::from_index(class).map_or("?", HeightClass::name);
            let values: Vec<String> = HeightClass::ALL
                .iter()
                .zip(&scores)
                .map(|(c, s)| format!("{}={s:.6}", c.name()))
                .collect();
            println!("{name}");
            println!("{label} {}", values.join(" "));
        }
        Command::Ablation { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let prepared = harness::prepare(&cfg)?;
            let report = harness::run_ablation(&cfg, &prepared, &mut |v, r| println!("{v} {r}"))?;
            for row in &report.rows {
                println!("{} {}:", row.variant, report.arch);
                print_matrix_report(row.evaluation.accuracy, &row.evaluation.matrix);
                if let Some(dir) = &out {
                    std::fs::create_dir_all(dir).map_err(echocaps::Error::io(dir))?;
                    row.outcome
                        .best
                        .save(&dir.join(format!("{}-{}.ckpt", report.arch, row.variant)))?;
                }
            }
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
