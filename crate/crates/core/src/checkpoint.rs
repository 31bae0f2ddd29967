//! Model checkpoints: `<path>.json` manifest plus `<path>.bin`, the
//! parameters then the batchnorm buffers as little-endian `f32` in manifest
//! order.

use std::fs;
use std::path::Path;

use lse_autodiff::{Real, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::append_ext;
use crate::error::{io_err, LseError, Result};
use crate::model::{LseModel, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "lse-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub tau: f64,
    pub surrogate_alpha: f64,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: u64,
    pub sha256: String,
    pub training: Option<TrainingMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: LseModel<f32>,
    pub training: Option<TrainingMeta>,
}

fn entries<T: Real>(model: &LseModel<T>) -> Vec<(String, &Tensor<T>)> {
    let names = LseModel::<T>::param_names().into_iter().chain(LseModel::<T>::buffer_names());
    names.zip(model.params().into_iter().chain(model.buffers())).collect()
}

/// Writes `model` (narrowed to `f32`) next to `path`.
pub fn save_checkpoint<T: Real>(
    model: &LseModel<T>,
    training: Option<&TrainingMeta>,
    path: &Path,
) -> Result<CheckpointManifest> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in entries(model) {
        for v in t.data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        tau: model.config.tau,
        surrogate_alpha: model.config.surrogate_alpha,
        model: model.config.clone(),
        tensors,
        blob_bytes: blob.len() as u64,
        sha256: hex::encode(Sha256::digest(&blob)),
        training: training.cloned(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let bp = append_ext(path, "bin");
    fs::write(&bp, &blob).map_err(io_err(&bp))?;
    let mp = append_ext(path, "json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&mp))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let mp = append_ext(path, "json");
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(LseError::Structure(format!("{} is not a checkpoint manifest", mp.display())));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(LseError::Version {
            what: "checkpoint",
            expected: CHECKPOINT_VERSION,
            found: manifest.version,
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(path)?;
    let mut cfg = manifest.model.clone();
    cfg.tau = manifest.tau;
    cfg.surrogate_alpha = manifest.surrogate_alpha;
    let mut model = LseModel::<f32>::new(cfg, 0)?;

    let expected = LseModel::<f32>::param_names().into_iter().chain(LseModel::<f32>::buffer_names());
    let slots = {
        let (params, buffers) = (model.params(), model.buffers());
        params.into_iter().chain(buffers).map(|t| t.shape().to_vec()).collect::<Vec<_>>()
    };
    if manifest.tensors.len() != slots.len() {
        return Err(LseError::Structure(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((entry, name), shape) in manifest.tensors.iter().zip(expected).zip(&slots) {
        if entry.name != name || &entry.shape != shape {
            return Err(LseError::Structure(format!(
                "tensor {} {:?} does not match model slot {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    let floats: usize = slots.iter().map(|s| s.iter().product::<usize>()).sum();
    if manifest.blob_bytes != 4 * floats as u64 {
        return Err(LseError::Structure(format!(
            "manifest declares {} blob bytes but tensor shapes need {}",
            manifest.blob_bytes,
            4 * floats
        )));
    }

    let bp = append_ext(path, "bin");
    let blob = fs::read(&bp).map_err(io_err(&bp))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(LseError::Corrupt {
            path: bp,
            reason: format!("expected {} bytes, found {}", manifest.blob_bytes, blob.len()),
        });
    }
    if hex::encode(Sha256::digest(&blob)) != manifest.sha256 {
        return Err(LseError::Corrupt {
            path: bp,
            reason: "checksum mismatch".into(),
        });
    }
    let mut values = blob.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for t in model.params_mut() {
        t.data_mut().iter_mut().zip(values.by_ref()).for_each(|(d, v)| *d = v);
    }
    for t in model.buffers_mut() {
        t.data_mut().iter_mut().zip(values.by_ref()).for_each(|(d, v)| *d = v);
    }
    Ok(Checkpoint {
        model,
        training: manifest.training,
    })
}
