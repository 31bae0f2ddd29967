//! Dataset construction and the on-disk format.
//!
//! `<stem>.bin` holds little-endian `f32` sections, windows ordered train,
//! validation, test:
//!
//! 1. `values[n][2][K]`: normalized real/imaginary rows,
//! 2. `targets[n][3 * M + 2]`: normalized frequencies (M), amplitudes (M),
//!    phases (M), active count, SNR in dB,
//! 3. `norm[n][2]`: offset and scale of each window.
//!
//! `<stem>.json` is the [`DatasetManifest`].

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, LseError, Result};
use crate::signal::{generate_sample, split_permutation, split_sizes, GeneratorConfig, Norm, RealWindow, Sample, Target};

pub const DATASET_VERSION: u32 = 1;
const DATASET_FORMAT: &str = "lse-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = LseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(LseError::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// Generation indices of the windows in each partition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub indices: SplitIndices,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub m_max: usize,
    pub counts: Counts,
    pub split_indices: SplitIndices,
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// Section order of the blob, for readers in other languages.
    pub layout: Vec<String>,
    pub blob_bytes: u64,
    pub sha256: String,
}

/// Active-component count of generation index `index`.
fn count_of(index: usize, per_count: usize) -> usize {
    index / per_count + 1
}

pub fn build_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let total = cfg.total_windows();
    let samples: Vec<Sample> = (0..total)
        .into_par_iter()
        .map(|idx| generate_sample(cfg, cfg.seed, idx as u64, count_of(idx, cfg.windows_per_count), None))
        .collect::<Result<_>>()?;
    let perm = split_permutation(total, cfg.seed);
    let [n_train, n_val, _] = split_sizes(total, cfg.split);
    let mut indices = SplitIndices::default();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    for (pos, &idx) in perm.iter().enumerate() {
        let s = slots[idx].take().expect("permutation visits each index once");
        let (bucket, ids) = if pos < n_train {
            (&mut train, &mut indices.train)
        } else if pos < n_train + n_val {
            (&mut val, &mut indices.val)
        } else {
            (&mut test, &mut indices.test)
        };
        bucket.push(s);
        ids.push(idx as u64);
    }
    Ok(Dataset {
        config: cfg.clone(),
        train,
        val,
        test,
        indices,
    })
}

/// Fresh single-SNR test windows spread evenly over active-component counts.
pub fn build_snr_test_set(cfg: &GeneratorConfig, snr_db: f64, n_windows: usize, seed: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let m = cfg.max_components;
    (0..n_windows)
        .into_par_iter()
        .map(|idx| generate_sample(cfg, seed, idx as u64, 1 + idx % m, Some(snr_db)))
        .collect()
}

fn manifest_path(stem: &Path) -> PathBuf {
    append_ext(stem, "json")
}

fn blob_path(stem: &Path) -> PathBuf {
    append_ext(stem, "bin")
}

pub(crate) fn append_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn target_width(m: usize) -> usize {
    3 * m + 2
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    fn encode_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        for s in self.all() {
            s.window.values.iter().for_each(|&v| put(v));
        }
        for s in self.all() {
            let t = &s.target;
            t.freqs.iter().chain(&t.amps).chain(&t.phases).for_each(|&v| put(v));
            put(t.m_active as f64);
            put(t.snr_db);
        }
        for s in self.all() {
            put(s.window.norm.offset);
            put(s.window.norm.scale);
        }
        out
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<DatasetManifest> {
        let blob = self.encode_blob();
        let cfg = &self.config;
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            k: cfg.window_len,
            m_max: cfg.max_components,
            counts: Counts {
                train: self.train.len(),
                val: self.val.len(),
                test: self.test.len(),
            },
            split_indices: self.indices.clone(),
            seed: cfg.seed,
            generator: cfg.clone(),
            layout: vec![
                format!("values f32le [n][2][{}]", cfg.window_len),
                format!(
                    "targets f32le [n][{}] = freqs_norm[{m}], amps[{m}], phases[{m}], m_active, snr_db",
                    target_width(cfg.max_components),
                    m = cfg.max_components
                ),
                "norm f32le [n][2] = offset, scale".into(),
                "window order: train, val, test".into(),
            ],
            blob_bytes: blob.len() as u64,
            sha256: hex::encode(Sha256::digest(&blob)),
        };
        let bp = blob_path(stem);
        fs::write(&bp, &blob).map_err(io_err(&bp))?;
        let mp = manifest_path(stem);
        fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&mp))?;
        Ok(manifest)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mp = manifest_path(stem);
        let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format != DATASET_FORMAT {
            return Err(LseError::Structure(format!("{} is not a dataset manifest", mp.display())));
        }
        if manifest.version != DATASET_VERSION {
            return Err(LseError::Version {
                what: "dataset",
                expected: DATASET_VERSION,
                found: manifest.version,
            });
        }
        let (k, m) = (manifest.k, manifest.m_max);
        if k != manifest.generator.window_len || m != manifest.generator.max_components {
            return Err(LseError::Structure("manifest shape disagrees with generator config".into()));
        }
        let c = &manifest.counts;
        let n = c.train + c.val + c.test;
        let floats = n * (2 * k + target_width(m) + 2);
        if manifest.blob_bytes != (floats * 4) as u64 {
            return Err(LseError::Structure(format!(
                "manifest declares {} blob bytes but shapes need {}",
                manifest.blob_bytes,
                floats * 4
            )));
        }
        let bp = blob_path(stem);
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
        let vals: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let (windows, rest) = vals.split_at(n * 2 * k);
        let (targets, norms) = rest.split_at(n * target_width(m));
        let mut samples = (0..n).map(|j| {
            let t = &targets[j * target_width(m)..(j + 1) * target_width(m)];
            Sample {
                window: RealWindow {
                    values: windows[j * 2 * k..(j + 1) * 2 * k].to_vec(),
                    len: k,
                    norm: Norm {
                        offset: norms[2 * j],
                        scale: norms[2 * j + 1],
                    },
                },
                target: Target {
                    freqs: t[..m].to_vec(),
                    amps: t[m..2 * m].to_vec(),
                    phases: t[2 * m..3 * m].to_vec(),
                    m_active: t[3 * m] as usize,
                    snr_db: t[3 * m + 1],
                },
            }
        });
        let train = samples.by_ref().take(c.train).collect();
        let val = samples.by_ref().take(c.val).collect();
        let test = samples.collect();
        Ok(Dataset {
            config: manifest.generator,
            train,
            val,
            test,
            indices: manifest.split_indices,
        })
    }
}
