//! Stage orchestration behind the `pqd` subcommands.
//!
//! A full run lays its outputs out as
//!
//! ```text
//! <out>/config.json                 resolved run configuration
//! <out>/<condition>/waveforms/      raw records + waveforms.jsonl
//! <out>/<condition>/images/         PNG spectrograms + manifest.jsonl
//! <out>/<condition>/model/          checkpoint, history.csv
//! <out>/<condition>/metrics.json    test-split metrics
//! <out>/<condition>/confusion.csv
//! <out>/summary.json, summary.csv   overall accuracy per condition
//! ```
//!
//! where `<condition>` is `clean` or `snr<dB>`. Each condition trains its
//! own model on its own noisy images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{RunConfig, Snr};
use crate::error::{Error, Result};
use crate::gradcheck::{run_check, BatteryConfig, LayerReport, BATTERY};
use crate::imaging::{build_image_dataset, DatasetManifest, IMAGE_MANIFEST};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Gsresnet};
use crate::signal::{generate_dataset, read_waveform_set, write_waveform_set, DisturbanceClass, WAVEFORM_MANIFEST};
use crate::train::trainer::write_history_csv;
use crate::train::{evaluate, load_image_dataset, predict_png, stratified_split, train, EpochRecord, Metrics, Prediction};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Line-oriented progress sink; the CLI sends it to stderr.
pub type Log<'a> = &'a mut dyn FnMut(&str);

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedSet {
    pub condition: String,
    pub dir: PathBuf,
    pub counts: Vec<(DisturbanceClass, usize)>,
}

/// Synthesize every configured class and SNR condition into
/// `out/<condition>/`.
pub fn generate(cfg: &RunConfig, out: &Path, log: Log) -> Result<Vec<GeneratedSet>> {
    cfg.validate()?;
    let mut sets = Vec::new();
    for snr in &cfg.snr {
        let condition = snr.condition_name();
        let dir = out.join(&condition);
        let waves = generate_dataset(&cfg.classes, cfg.per_class, snr.0, &cfg.timebase, cfg.seed)?;
        write_waveform_set(&dir, &waves)?;
        let counts = cfg.classes.iter().map(|&c| (c, waves.iter().filter(|w| w.label == c).count())).collect();
        log(&format!("generate {condition}: {} records in {}", waves.len(), dir.display()));
        sets.push(GeneratedSet { condition, dir, counts });
    }
    Ok(sets)
}

/// Directories under `root` (or `root` itself) holding `marker`.
fn dataset_dirs(root: &Path, marker: &str) -> Result<Vec<(Option<String>, PathBuf)>> {
    if root.join(marker).exists() {
        return Ok(vec![(None, root.to_path_buf())]);
    }
    let mut found = Vec::new();
    if root.is_dir() {
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.join(marker).exists() {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
                found.push((name, path));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Precondition(format!(
            "no {marker} found in {} or its subdirectories",
            root.display()
        )));
    }
    Ok(found)
}

/// Render the waveform set(s) under `wave_dir` into PNG datasets. A
/// directory of condition subfolders is mirrored under `out`.
pub fn render(wave_dir: &Path, out: &Path, px: usize, log: Log) -> Result<Vec<(PathBuf, DatasetManifest)>> {
    let mut done = Vec::new();
    for (name, dir) in dataset_dirs(wave_dir, WAVEFORM_MANIFEST)? {
        let target = name.map_or_else(|| out.to_path_buf(), |n| out.join(n));
        let waves: Vec<_> = read_waveform_set(&dir)?.into_iter().map(|(r, w)| (r.id, w)).collect();
        let manifest = build_image_dataset(&waves, &target, px)?;
        log(&format!("render {}: {} images at {px} px", target.display(), manifest.entries.len()));
        done.push((target, manifest));
    }
    Ok(done)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub train_count: usize,
    /// Test-split metrics; `None` when the split leaves no test samples.
    pub metrics: Option<Metrics>,
}

fn write_metrics(metrics: &Metrics, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    metrics.write_json(&dir.join(METRICS_FILE))?;
    metrics.write_confusion_csv(&dir.join(CONFUSION_FILE))
}

/// Split, train and checkpoint a fresh model on one image dataset.
pub fn train_on_images(cfg: &RunConfig, image_dir: &Path, model_dir: &Path, log: Log) -> Result<TrainReport> {
    cfg.validate()?;
    if !image_dir.join(IMAGE_MANIFEST).exists() {
        return Err(Error::Precondition(format!(
            "{} has no {IMAGE_MANIFEST}; point at a single rendered condition",
            image_dir.display()
        )));
    }
    let data = load_image_dataset(image_dir, cfg.model.input_px)?;
    let (train_idx, test_idx) = stratified_split(&data.labels(), cfg.train.split_ratio, cfg.seed)?;
    log(&format!(
        "train {}: {} train / {} test images, {} epochs",
        image_dir.display(),
        train_idx.len(),
        test_idx.len(),
        cfg.train.epochs
    ));
    let mut model = Gsresnet::<f32>::build(&cfg.model, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let history = train(&mut model, &data, &train_idx, &test_idx, &train_cfg, |r| {
        let test = r.test_acc.map_or("-".to_string(), |a| format!("{:.4}", a));
        log(&format!(
            "epoch {:>3}/{} lr {:.3e} loss {:.5} train_acc {:.4} test_acc {test}",
            r.epoch, train_cfg.epochs, r.lr, r.train_loss, r.train_acc
        ));
    })?;
    let meta = CheckpointMeta {
        seed: Some(cfg.seed),
        split_ratio: Some(cfg.train.split_ratio),
        epochs_trained: history.len(),
        class_labels: data.class_labels.clone(),
    };
    save_checkpoint(&model, &meta, model_dir)?;
    write_history_csv(&model_dir.join(HISTORY_FILE), &history)?;
    let metrics = if test_idx.is_empty() {
        None
    } else {
        let m = evaluate(&model, &data, &test_idx)?;
        write_metrics(&m, model_dir)?;
        Some(m)
    };
    Ok(TrainReport {
        history,
        train_count: train_idx.len(),
        metrics,
    })
}

/// Evaluate a checkpoint. Unless `all` is set, only the test split recorded
/// in the checkpoint (same seed and ratio) is scored.
pub fn eval_checkpoint(model_dir: &Path, image_dir: &Path, all: bool, out: Option<&Path>) -> Result<Metrics> {
    let (model, meta) = load_checkpoint::<f32>(model_dir)?;
    let data = load_image_dataset(image_dir, model.config().input_px)?;
    let idx: Vec<usize> = match (all, meta.seed, meta.split_ratio) {
        (false, Some(seed), Some(ratio)) => stratified_split(&data.labels(), ratio, seed)?.1,
        _ => (0..data.samples.len()).collect(),
    };
    let metrics = evaluate(&model, &data, &idx)?;
    if let Some(dir) = out {
        write_metrics(&metrics, dir)?;
    }
    Ok(metrics)
}

pub fn predict_file(model_dir: &Path, image: &Path) -> Result<Prediction> {
    let (model, meta) = load_checkpoint::<f32>(model_dir)?;
    let labels = if meta.class_labels.is_empty() {
        DisturbanceClass::ALL.iter().map(|c| c.label().to_string()).collect()
    } else {
        meta.class_labels
    };
    predict_png(&model, image, &labels)
}

/// Gradient-check battery; one report per layer.
pub fn gradcheck(cfg: &BatteryConfig, log: Log) -> Result<Vec<LayerReport>> {
    let mut out = Vec::new();
    for name in BATTERY {
        let r = run_check(name, cfg)?;
        log(&format!(
            "{:<16} {:>3} instances  max rel err {:.3e}  {}",
            r.name,
            r.instances,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        ));
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionResult {
    pub condition: String,
    pub snr_db: Snr,
    pub overall_accuracy: f64,
    pub test_count: u64,
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub conditions: Vec<ConditionResult>,
}

impl RunSummary {
    pub fn csv(&self) -> String {
        let mut s = String::from("condition,snr_db,overall_accuracy,test_count\n");
        for c in &self.conditions {
            let snr = c.snr_db.0.map_or("inf".to_string(), |d| d.to_string());
            let _ = writeln!(s, "{},{snr},{},{}", c.condition, c.overall_accuracy, c.test_count);
        }
        s
    }
}

/// generate, render, train and evaluate for every SNR condition.
pub fn run_all(cfg: &RunConfig, log: Log) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.json"))?;
    let mut conditions = Vec::new();
    for &snr in &cfg.snr {
        let condition = snr.condition_name();
        let root = out.join(&condition);
        let single = RunConfig {
            snr: vec![snr],
            ..cfg.clone()
        };
        let wave_root = root.join("waveforms");
        generate(&single, &wave_root, log)?;
        let image_dir = root.join("images");
        render(&wave_root.join(&condition), &image_dir, cfg.image_px, log)?;
        let report = train_on_images(cfg, &image_dir, &root.join("model"), log)?;
        let metrics = report.metrics.ok_or_else(|| {
            Error::Precondition(format!("{condition}: the split left no test samples to evaluate"))
        })?;
        write_metrics(&metrics, &root)?;
        log(&format!("{condition}: overall accuracy {:.2}%", 100.0 * metrics.overall_accuracy));
        conditions.push(ConditionResult {
            condition,
            snr_db: snr,
            overall_accuracy: metrics.overall_accuracy,
            test_count: metrics.total,
            final_train_loss: report.history.last().map(|r| r.train_loss),
        });
    }
    let summary = RunSummary {
        seed: cfg.seed,
        conditions,
    };
    let path = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    let csv = out.join("summary.csv");
    fs::write(&csv, summary.csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(summary)
}
