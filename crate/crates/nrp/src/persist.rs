//! On-disk formats for models and embeddings.
//!
//! A model directory holds `model.json` (manifest: format version, variant,
//! layer list with hyperparameters and running statistics, parameter byte
//! offsets), `weights.bin` (all trainable parameters in canonical order as
//! little-endian 8-byte IEEE-754 floats), and `fingerprint.json` (content
//! hash plus provenance). `model.json` and `weights.bin` are canonical:
//! saving the same model twice yields byte-identical files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    Activation, BatchNormLayer, DenseLayer, DropoutLayer, Layer, Model, ModifiedBatchNorm,
    Variant,
};
use crate::similarity::{EmbeddingSet, Metric, SourceTag};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerManifest {
    Dense {
        in_width: usize,
        out_width: usize,
        param_offset: usize,
        param_count: usize,
    },
    Tanh,
    Identity,
    BatchNorm {
        width: usize,
        epsilon: f64,
        momentum: f64,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        param_offset: usize,
        param_count: usize,
    },
    ScalarBatchNorm {
        width: usize,
        epsilon: f64,
        momentum: f64,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        param_offset: usize,
        param_count: usize,
    },
    Dropout {
        keep_prob: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    variant: Variant,
    ortho_regularized: Vec<usize>,
    last_hidden: usize,
    layers: Vec<LayerManifest>,
}

/// Provenance record for a saved model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFingerprint {
    /// SHA-256 over `model.json` bytes followed by `weights.bin` bytes.
    pub content_hash: String,
    pub created_unix: u64,
    pub variant: Variant,
    pub seed: Option<u64>,
}

fn content_hash(manifest_bytes: &[u8], weight_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(manifest_bytes);
    hasher.update(weight_bytes);
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Manifest(format!(
            "weight payload length {} not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_model(model: &Model, dir: &Path) -> Result<ModelFingerprint> {
    save_model_seeded(model, dir, None)
}

pub fn save_model_seeded(
    model: &Model,
    dir: &Path,
    seed: Option<u64>,
) -> Result<ModelFingerprint> {
    std::fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut offset = 0usize;
    for layer in &model.layers {
        let param_count = layer.param_count();
        let param_offset = offset * 8;
        let manifest = match layer {
            Layer::Dense(d) => LayerManifest::Dense {
                in_width: d.in_width(),
                out_width: d.out_width(),
                param_offset,
                param_count,
            },
            Layer::Activation(Activation::Tanh) => LayerManifest::Tanh,
            Layer::Activation(Activation::Identity) => LayerManifest::Identity,
            Layer::BatchNorm(bn) => LayerManifest::BatchNorm {
                width: bn.gamma.len(),
                epsilon: bn.epsilon,
                momentum: bn.momentum,
                running_mean: bn.running_mean.clone(),
                running_var: bn.running_var.clone(),
                param_offset,
                param_count,
            },
            Layer::ModifiedBatchNorm(bn) => LayerManifest::ScalarBatchNorm {
                width: bn.running_mean.len(),
                epsilon: bn.epsilon,
                momentum: bn.momentum,
                running_mean: bn.running_mean.clone(),
                running_var: bn.running_var.clone(),
                param_offset,
                param_count,
            },
            Layer::Dropout(d) => LayerManifest::Dropout {
                keep_prob: d.keep_prob,
            },
        };
        layers.push(manifest);
        offset += param_count;
    }
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        variant: model.variant,
        ortho_regularized: model.ortho_regularized.clone(),
        last_hidden: model.last_hidden,
        layers,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let weight_bytes = encode_f64s(&model.flat_params());
    std::fs::write(dir.join("model.json"), &manifest_bytes)?;
    std::fs::write(dir.join("weights.bin"), &weight_bytes)?;
    let fingerprint = ModelFingerprint {
        content_hash: content_hash(&manifest_bytes, &weight_bytes),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        variant: model.variant,
        seed,
    };
    std::fs::write(
        dir.join("fingerprint.json"),
        serde_json::to_vec(&fingerprint)?,
    )?;
    Ok(fingerprint)
}

pub fn load_model(dir: &Path) -> Result<(Model, ModelFingerprint)> {
    let manifest_bytes = std::fs::read(dir.join("model.json"))?;
    let weight_bytes = std::fs::read(dir.join("weights.bin"))?;
    let fingerprint: ModelFingerprint =
        serde_json::from_slice(&std::fs::read(dir.join("fingerprint.json"))?)?;
    let actual = content_hash(&manifest_bytes, &weight_bytes);
    if actual != fingerprint.content_hash {
        return Err(Error::HashMismatch {
            path: dir.to_path_buf(),
            expected: fingerprint.content_hash,
            actual,
        });
    }
    let manifest: ModelManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let params = decode_f64s(&weight_bytes)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let layer = match lm {
            LayerManifest::Dense {
                in_width,
                out_width,
                param_offset,
                param_count,
            } => {
                let start = param_offset / 8;
                let expected = in_width * out_width + out_width;
                if *param_count != expected || start + expected > params.len() {
                    return Err(Error::Manifest(format!(
                        "dense layer parameter block out of range (offset {param_offset})"
                    )));
                }
                let weights = Matrix::from_vec(
                    *in_width,
                    *out_width,
                    params[start..start + in_width * out_width].to_vec(),
                )?;
                let bias = params[start + in_width * out_width..start + expected].to_vec();
                Layer::Dense(DenseLayer { weights, bias })
            }
            LayerManifest::Tanh => Layer::Activation(Activation::Tanh),
            LayerManifest::Identity => Layer::Activation(Activation::Identity),
            LayerManifest::BatchNorm {
                width,
                epsilon,
                momentum,
                running_mean,
                running_var,
                param_offset,
                param_count,
            } => {
                let start = param_offset / 8;
                if *param_count != 2 * width || start + 2 * width > params.len() {
                    return Err(Error::Manifest(
                        "batch-norm parameter block out of range".into(),
                    ));
                }
                Layer::BatchNorm(BatchNormLayer {
                    gamma: params[start..start + width].to_vec(),
                    beta: params[start + width..start + 2 * width].to_vec(),
                    running_mean: running_mean.clone(),
                    running_var: running_var.clone(),
                    epsilon: *epsilon,
                    momentum: *momentum,
                })
            }
            LayerManifest::ScalarBatchNorm {
                epsilon,
                momentum,
                running_mean,
                running_var,
                param_offset,
                param_count,
                ..
            } => {
                let start = param_offset / 8;
                if *param_count != 1 || start >= params.len() {
                    return Err(Error::Manifest(
                        "scalar batch-norm parameter block out of range".into(),
                    ));
                }
                Layer::ModifiedBatchNorm(ModifiedBatchNorm {
                    gamma: params[start],
                    running_mean: running_mean.clone(),
                    running_var: running_var.clone(),
                    epsilon: *epsilon,
                    momentum: *momentum,
                })
            }
            LayerManifest::Dropout { keep_prob } => Layer::Dropout(DropoutLayer {
                keep_prob: *keep_prob,
            }),
        };
        layers.push(layer);
    }
    let model = Model::from_layers(
        layers,
        manifest.variant,
        manifest.ortho_regularized,
        manifest.last_hidden,
    )?;
    if model.param_count() != params.len() {
        return Err(Error::Manifest(format!(
            "weights.bin holds {} parameters, model expects {}",
            params.len(),
            model.param_count()
        )));
    }
    Ok((model, fingerprint))
}

/// Sidecar for an embedding file pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub n: usize,
    pub k: usize,
    pub source: SourceTag,
    pub model_fingerprint: Option<String>,
    pub metric_recommendation: Metric,
    /// Wall-clock seconds spent producing the vectors, when measured.
    pub vectorization_seconds: Option<f64>,
}

/// Write `embeddings.bin` (little-endian f64, row-major) and
/// `embeddings.json` into `dir`.
pub fn save_embeddings(
    set: &EmbeddingSet,
    dir: &Path,
    vectorization_seconds: Option<f64>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("embeddings.bin"),
        encode_f64s(set.vectors.as_slice()),
    )?;
    let sidecar = EmbeddingSidecar {
        n: set.len(),
        k: set.dim(),
        source: set.source,
        model_fingerprint: set.model_fingerprint.clone(),
        metric_recommendation: set.recommended_metric(),
        vectorization_seconds,
    };
    std::fs::write(dir.join("embeddings.json"), serde_json::to_vec(&sidecar)?)?;
    Ok(())
}

pub fn load_embeddings(dir: &Path) -> Result<(EmbeddingSet, EmbeddingSidecar)> {
    let sidecar: EmbeddingSidecar =
        serde_json::from_slice(&std::fs::read(dir.join("embeddings.json"))?)?;
    let values = decode_f64s(&std::fs::read(dir.join("embeddings.bin"))?)?;
    if values.len() != sidecar.n * sidecar.k {
        return Err(Error::Manifest(format!(
            "embeddings.bin holds {} values, sidecar says {}x{}",
            values.len(),
            sidecar.n,
            sidecar.k
        )));
    }
    let mut set = EmbeddingSet::new(
        Matrix::from_vec(sidecar.n, sidecar.k, values)?,
        sidecar.source,
    )?;
    set.model_fingerprint = sidecar.model_fingerprint.clone();
    Ok((set, sidecar))
}
