use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::imaging::RgbImage;
use crate::model::Gsresnet;
use crate::tensor::loss::softmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class_index: usize,
    pub label: String,
    /// Softmax over all classes, in class-index order.
    pub confidences: Vec<f64>,
}

/// Classify an in-memory image, resizing it to the model's input size.
pub fn predict_image(model: &Gsresnet<f32>, image: &RgbImage, class_labels: &[String]) -> Result<Prediction> {
    let px = model.config().input_px;
    let resized;
    let img = if image.height != px || image.width != px {
        resized = image.resize_bilinear(px, px)?;
        &resized
    } else {
        image
    };
    let x = Tensor::new(&[1, 3, px, px], img.to_chw())?;
    let confidences = softmax(&model.infer(&x)?)?.remove(0);
    let class_index = confidences
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > confidences[best] { i } else { best });
    let label = class_labels
        .get(class_index)
        .cloned()
        .unwrap_or_else(|| format!("class{class_index}"));
    Ok(Prediction {
        class_index,
        label,
        confidences,
    })
}

pub fn predict_png(model: &Gsresnet<f32>, path: &Path, class_labels: &[String]) -> Result<Prediction> {
    predict_image(model, &RgbImage::read_png(path)?, class_labels)
}
