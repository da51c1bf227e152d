//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/index.json    format tag, ModelConfig, metadata, tensor table
//! <dir>/weights.bin   every tensor as little-endian f32, in table order
//! ```
//!
//! The table lists each tensor's id, kind (`param` or `buffer`), shape and
//! element offset into `weights.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gsresnet, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_FORMAT: &str = "pqd-gsresnet-checkpoint/1";
pub const INDEX_FILE: &str = "index.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Provenance carried along with the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub seed: Option<u64>,
    pub split_ratio: Option<f64>,
    pub epochs_trained: usize,
    /// Class labels in logit order.
    pub class_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    id: String,
    kind: TensorKind,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    format: String,
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(model: &Gsresnet<T>, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    let all = model
        .params()
        .into_iter()
        .map(|p| (&p.id, TensorKind::Param, &p.value))
        .chain(model.buffers().into_iter().map(|b| (&b.id, TensorKind::Buffer, &b.value)));
    for (id, kind, value) in all {
        tensors.push(TensorEntry {
            id: id.clone(),
            kind,
            shape: value.shape().to_vec(),
            offset,
        });
        offset += value.len();
        for v in value.data() {
            blob.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let index = Index {
        format: CHECKPOINT_FORMAT.to_string(),
        config: model.config().clone(),
        meta: meta.clone(),
        tensors,
    };
    let index_path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(&index_path, e))?;
    fs::write(&index_path, text + "\n").map_err(|e| Error::io(&index_path, e))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, blob).map_err(|e| Error::io(&weights_path, e))
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Gsresnet<T>, CheckpointMeta)> {
    let fail = |message: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        message,
    };
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::json(&index_path, e))?;
    if index.format != CHECKPOINT_FORMAT {
        return Err(fail(format!(
            "unsupported format {:?}, expected {CHECKPOINT_FORMAT:?}",
            index.format
        )));
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(fail(format!("{WEIGHTS_FILE} length {} is not a multiple of 4", bytes.len())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut model = Gsresnet::<T>::build(&index.config, 0)?;
    let expected = model.params().len() + model.buffers().len();
    if expected != index.tensors.len() {
        return Err(fail(format!(
            "index lists {} tensors, config implies {expected}",
            index.tensors.len()
        )));
    }
    let mut entries = index.tensors.iter();
    let mut fill = |id: &str, kind: TensorKind, dst: &mut Tensor<T>| -> Result<()> {
        let entry = entries.next().expect("count checked above");
        if entry.id != id || entry.kind != kind || entry.shape != dst.shape() {
            return Err(fail(format!(
                "tensor {:?} {:?} does not match expected {id:?} {:?}",
                entry.id,
                entry.shape,
                dst.shape()
            )));
        }
        let src = floats
            .get(entry.offset..entry.offset + dst.len())
            .ok_or_else(|| fail(format!("tensor {id:?} runs past the end of {WEIGHTS_FILE}")))?;
        for (d, &s) in dst.data_mut().iter_mut().zip(src) {
            *d = T::of(s as f64);
        }
        Ok(())
    };
    for p in model.params_mut() {
        fill(&p.id, TensorKind::Param, &mut p.value)?;
    }
    for b in model.buffers_mut() {
        fill(&b.id, TensorKind::Buffer, &mut b.value)?;
    }
    Ok((model, index.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Gsresnet::<f32>::build(&ModelConfig::tiny(), 4).unwrap();
        // Move BN running stats away from their initial values.
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 37 % 11) as f32) / 11.0);
        m.forward(&x, Mode::Train).unwrap();
        let meta = CheckpointMeta {
            seed: Some(4),
            split_ratio: Some(0.7),
            epochs_trained: 3,
            class_labels: vec!["V1".into(), "V2".into(), "V3".into()],
        };
        save_checkpoint(&m, &meta, dir.path()).unwrap();
        let (back, meta_back) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.config(), m.config());
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(a.value, b.value);
        }
        for (a, b) in back.buffers().iter().zip(m.buffers()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(back.infer(&x).unwrap(), m.infer(&x).unwrap());

        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(&back, &meta_back, dir2.path()).unwrap();
        for f in [INDEX_FILE, WEIGHTS_FILE] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = Gsresnet::<f32>::build(&ModelConfig::tiny(), 4).unwrap();
        save_checkpoint(&m, &CheckpointMeta::default(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let bytes = fs::read(&w).unwrap();
        fs::write(&w, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(Error::Checkpoint { .. })));
        let idx = dir.path().join(INDEX_FILE);
        let text = fs::read_to_string(&idx).unwrap().replace(CHECKPOINT_FORMAT, "other/9");
        fs::write(&idx, text).unwrap();
        assert!(load_checkpoint::<f32>(dir.path()).is_err());
        assert!(load_checkpoint::<f32>(&dir.path().join("missing")).is_err());
    }
}
