use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pqd_core::config::{RunConfig, Snr};
use pqd_core::gradcheck::{BatteryConfig, DEFAULT_INSTANCES, DEFAULT_TOLERANCE};
use pqd_core::pipeline;
use pqd_core::signal::DisturbanceClass;

/// Power-quality disturbance synthesis, S-Transform imaging and GSResNet
/// classification.
///
/// Set PQD_THREADS to cap the worker pool.
#[derive(Parser)]
#[command(name = "pqd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that read a run configuration. Each one
/// overrides the matching key of the `--config` document.
#[derive(Args, Clone, Default)]
struct RunFlags {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SNR condition in dB, or "inf"/"clean" for the noiseless set.
    /// Repeat for several conditions.
    #[arg(long = "snr", value_name = "DB")]
    snr: Vec<String>,
    /// Image side in pixels (also the model input size).
    #[arg(long)]
    px: Option<usize>,
    /// Comma-separated class list such as "V1,V7,V12", or "all".
    #[arg(long)]
    classes: Option<String>,
    /// Records per class.
    #[arg(long)]
    per_class: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if !self.snr.is_empty() {
            cfg.snr = self.snr.iter().map(|s| s.parse::<Snr>()).collect::<Result<_, _>>()?;
        }
        if let Some(px) = self.px {
            cfg.image_px = px;
            cfg.model.input_px = px;
        }
        if let Some(c) = &self.classes {
            cfg.classes = DisturbanceClass::parse_list(c)?;
        }
        if let Some(n) = self.per_class {
            cfg.per_class = n;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize waveform records for every class and SNR condition.
    Generate(RunFlags),
    /// Render waveform records to jet-colormapped S-Transform PNGs.
    Render {
        /// Waveform directory (one condition, or a folder of conditions).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        px: usize,
    },
    /// Train a model on one rendered image dataset.
    Train {
        /// Image dataset directory containing manifest.jsonl.
        #[arg(long)]
        images: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Score a checkpoint on an image dataset.
    Eval {
        /// Checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Score every image instead of the checkpoint's test split.
        #[arg(long)]
        all: bool,
        /// Where to write metrics.json and confusion.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one PNG.
    Predict {
        #[arg(long)]
        model: PathBuf,
        file: PathBuf,
        /// Print the prediction as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of every layer's backward pass.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_INSTANCES)]
        instances: usize,
    },
    /// generate, render, train and eval for every SNR condition.
    RunAll(RunFlags),
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PQD_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PQD_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("PQD_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn stderr_log(line: &str) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    let mut log = stderr_log;
    match cli.command {
        Command::Generate(flags) => {
            let cfg = flags.resolve()?;
            let sets = pipeline::generate(&cfg, &cfg.out_dir, &mut log)?;
            for s in sets {
                println!("{} -> {}", s.condition, s.dir.display());
                for (c, n) in s.counts {
                    println!("  {:<4} {n}", c.label());
                }
            }
        }
        Command::Render { input, out, px } => {
            let done = pipeline::render(&input, &out, px, &mut log)?;
            for (dir, m) in done {
                println!("{}: {} images", dir.display(), m.entries.len());
            }
        }
        Command::Train { images, run } => {
            let cfg = run.resolve()?;
            let model_dir = run.out.clone().unwrap_or_else(|| cfg.out_dir.join("model"));
            let report = pipeline::train_on_images(&cfg, &images, &model_dir, &mut log)?;
            println!("checkpoint written to {}", model_dir.display());
            if let Some(m) = report.metrics {
                print!("{}", m.table());
            }
        }
        Command::Eval { model, images, all, out } => {
            let m = pipeline::eval_checkpoint(&model, &images, all, out.as_deref())?;
            print!("{}", m.table());
        }
        Command::Predict { model, file, json } => {
            let p = pipeline::predict_file(&model, &file)?;
            if json {
                println!("{}", serde_json::to_string(&p)?);
            } else {
                println!("{} ({:.4})", p.label, p.confidences[p.class_index]);
            }
        }
        Command::Gradcheck {
            seed,
            tolerance,
            instances,
        } => {
            let reports = pipeline::gradcheck(
                &BatteryConfig {
                    seed,
                    instances,
                    tolerance,
                },
                &mut log,
            )?;
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if failed.is_empty() {
                println!("all {} checks passed at tolerance {tolerance:e}", reports.len());
            } else {
                println!("{} of {} checks failed: {}", failed.len(), reports.len(), failed.join(", "));
                return Ok(false);
            }
        }
        Command::RunAll(flags) => {
            let cfg = flags.resolve()?;
            let summary = pipeline::run_all(&cfg, &mut log)?;
            println!("condition  overall accuracy (%)");
            for c in &summary.conditions {
                println!("{:<10} {:>8.2}", c.condition, 100.0 * c.overall_accuracy);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
