use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{cosine_lr, Metrics, Nadam, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{DatasetManifest, RgbImage, IMAGE_MANIFEST};
use crate::model::Gsresnet;
use crate::seed::{derived_rng, Stream};
use crate::signal::DisturbanceClass;
use crate::tensor::loss::softmax_cross_entropy;
use crate::tensor::{Mode, Tensor};

/// A decoded image in `(3, px, px)` layout with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub px: usize,
    pub samples: Vec<Sample>,
    /// Label names in class-index order.
    pub class_labels: Vec<String>,
}

impl ImageDataset {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stack the selected samples into an `(N, 3, px, px)` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let per = 3 * self.px * self.px;
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].image);
        }
        Tensor::new(&[idx.len(), 3, self.px, self.px], data)
    }
}

/// Every image listed in `dir/manifest.jsonl`, decoded and resized to `px`.
pub fn load_image_dataset(dir: &Path, px: usize) -> Result<ImageDataset> {
    let manifest_path = dir.join(IMAGE_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Precondition(format!(
            "{} not found; render a dataset first",
            manifest_path.display()
        )));
    }
    let manifest = DatasetManifest::read(&manifest_path)?;
    let samples = manifest
        .entries
        .par_iter()
        .map(|e| {
            let mut img = RgbImage::read_png(&dir.join(&e.image_path))?;
            if img.height != px || img.width != px {
                img = img.resize_bilinear(px, px)?;
            }
            Ok(Sample {
                image: img.to_chw(),
                label: e.class_label.index(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageDataset {
        px,
        samples,
        class_labels: DisturbanceClass::ALL.iter().map(|c| c.label().to_string()).collect(),
    })
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when there is no test set.
    pub test_acc: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,lr,train_loss,train_acc,test_acc\n");
    for r in history {
        let test = r.test_acc.map_or(String::new(), |a| format!("{a}"));
        let _ = writeln!(s, "{},{:e},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, test);
    }
    s
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

const EVAL_CHUNK: usize = 32;

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode predictions for the selected samples.
pub fn predict_indices(model: &Gsresnet<f32>, data: &ImageDataset, idx: &[usize]) -> Result<Vec<usize>> {
    let k = model.config().num_classes;
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = model.infer(&data.batch(chunk)?)?;
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Confusion matrix and accuracies over the selected samples, BN frozen.
pub fn evaluate(model: &Gsresnet<f32>, data: &ImageDataset, idx: &[usize]) -> Result<Metrics> {
    let k = model.config().num_classes;
    if data.class_labels.len() != k {
        return Err(Error::Config(format!(
            "model has {k} outputs but the dataset defines {} classes",
            data.class_labels.len()
        )));
    }
    let predicted = predict_indices(model, data, idx)?;
    let truth: Vec<usize> = idx.iter().map(|&i| data.samples[i].label).collect();
    Metrics::from_predictions(&truth, &predicted, &data.class_labels)
}

/// Train for `cfg.epochs` epochs on `train_idx`, evaluating on `test_idx`
/// after every epoch. `progress` receives each finished epoch.
pub fn train(
    model: &mut Gsresnet<f32>,
    data: &ImageDataset,
    train_idx: &[usize],
    test_idx: &[usize],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if cfg.epochs > 0 && train_idx.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if data.px != model.config().input_px {
        return Err(Error::Config(format!(
            "dataset images are {} px, model expects {}",
            data.px,
            model.config().input_px
        )));
    }
    let k = model.config().num_classes;
    if let Some(s) = data.samples.iter().find(|s| s.label >= k) {
        return Err(Error::Config(format!("label {} out of range for {k} classes", s.label)));
    }
    let mut opt = Nadam::from_config(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut order = train_idx.to_vec();
        order.shuffle(&mut derived_rng(cfg.seed, Stream::Shuffle, epoch as u64, 0));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.batch(batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.samples[i].label).collect();
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    lr,
                });
            }
            loss_sum += loss * batch.len() as f64;
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            model.backward(&dlogits)?;
            opt.step(&mut model.params_mut(), lr)?;
        }
        let test_acc = if test_idx.is_empty() {
            None
        } else {
            Some(evaluate(model, data, test_idx)?.overall_accuracy)
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            test_acc,
        };
        progress(&record);
        history.push(record);
    }
    Ok(history)
}
