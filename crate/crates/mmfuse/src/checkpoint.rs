//! The MMCK1 checkpoint container: a JSON metadata section followed by a
//! float blob holding the parameters (in the training precision) and the
//! stored average image (always f32).
//!
//! Layout: `b"MMCK1"` | u32-LE metadata length | metadata JSON | parameter
//! blob | average-image blob. Parameter matrices follow canonical order with
//! shapes recorded in the metadata, so a checkpoint is self-contained.

use crate::data::ClassCatalog;
use crate::error::CheckpointError;
use crate::matrix::{Matrix, Precision, Scalar};
use crate::models::{ModelConfig, ModelKind, ModelParams};
use crate::train::{Checkpoint, TrainConfig};
use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 5] = b"MMCK1";

#[derive(Serialize, Deserialize)]
struct ShapeMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    tool_version: String,
    model: ModelKind,
    precision: Precision,
    model_config: ModelConfig,
    train_config: TrainConfig,
    classes: ClassCatalog,
    majority_class: Option<usize>,
    best_epoch: usize,
    best_dev_loss: f64,
    params: Vec<ShapeMeta>,
    avg_image: Option<ShapeMeta>,
}

/// A loaded checkpoint in whichever precision it was trained.
pub enum AnyCheckpoint {
    Single(Checkpoint<f32>),
    Double(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyCheckpoint::Single(c) => c.kind,
            AnyCheckpoint::Double(c) => c.kind,
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            AnyCheckpoint::Single(_) => Precision::Single,
            AnyCheckpoint::Double(_) => Precision::Double,
        }
    }

    pub fn classes(&self) -> &ClassCatalog {
        match self {
            AnyCheckpoint::Single(c) => &c.classes,
            AnyCheckpoint::Double(c) => &c.classes,
        }
    }
}

fn encode_blob<F: Scalar>(out: &mut Vec<u8>, m: &Matrix<F>) {
    match F::PRECISION {
        Precision::Single => {
            for &x in m.data() {
                out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
            }
        }
        Precision::Double => {
            for &x in m.data() {
                out.extend_from_slice(&x.to_f64().to_le_bytes());
            }
        }
    }
}

/// Serialize a checkpoint to bytes. Identical checkpoints produce identical
/// bytes; nothing time- or path-dependent is recorded.
pub fn to_bytes<F: Scalar>(ckpt: &Checkpoint<F>) -> Result<Vec<u8>, CheckpointError> {
    let majority_class = match &ckpt.params {
        ModelParams::Majority { class } => Some(*class),
        _ => None,
    };
    let meta = CheckpointMeta {
        format: String::from_utf8_lossy(MAGIC).to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: ckpt.kind,
        precision: F::PRECISION,
        model_config: ckpt.model_config.clone(),
        train_config: ckpt.train_config.clone(),
        classes: ckpt.classes.clone(),
        majority_class,
        best_epoch: ckpt.best_epoch,
        best_dev_loss: ckpt.best_dev_loss,
        params: ckpt
            .params
            .entries()
            .iter()
            .map(|(n, m)| ShapeMeta { name: n.to_string(), rows: m.rows(), cols: m.cols() })
            .collect(),
        avg_image: ckpt.average_image.as_ref().map(|m| ShapeMeta {
            name: "average_image".to_string(),
            rows: m.rows(),
            cols: m.cols(),
        }),
    };
    let meta_json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let mut len = [0u8; 4];
    LittleEndian::write_u32(&mut len, meta_json.len() as u32);
    out.extend_from_slice(&len);
    out.extend_from_slice(&meta_json);
    for (_, m) in ckpt.params.entries() {
        encode_blob(&mut out, m);
    }
    if let Some(avg) = &ckpt.average_image {
        encode_blob(&mut out, avg);
    }
    Ok(out)
}

/// Write atomically: temp file in the same directory, then rename.
pub fn save<F: Scalar>(path: &Path, ckpt: &Checkpoint<F>) -> Result<(), CheckpointError> {
    let bytes = to_bytes(ckpt)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn decode_matrix<F: Scalar>(
    r: &mut Reader<'_>,
    rows: usize,
    cols: usize,
    precision: Precision,
) -> Result<Matrix<F>, CheckpointError> {
    let n = rows * cols;
    let data: Vec<F> = match precision {
        Precision::Single => {
            let raw = r.take(n * 4)?;
            raw.chunks_exact(4)
                .map(|c| F::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
        Precision::Double => {
            let raw = r.take(n * 8)?;
            raw.chunks_exact(8)
                .map(|c| {
                    F::from_f64(f64::from_le_bytes([
                        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                    ]))
                })
                .collect()
        }
    };
    Matrix::from_vec(rows, cols, data)
        .map_err(|e| CheckpointError::Meta(format!("bad matrix in blob: {e}")))
}

fn load_typed<F: Scalar>(
    meta: &CheckpointMeta,
    r: &mut Reader<'_>,
) -> Result<Checkpoint<F>, CheckpointError> {
    let mut parts = Vec::with_capacity(meta.params.len());
    for s in &meta.params {
        parts.push(decode_matrix::<F>(r, s.rows, s.cols, meta.precision)?);
    }
    let params = ModelParams::from_parts(meta.model, &meta.model_config, parts, meta.majority_class)
        .map_err(|e| CheckpointError::Meta(format!("parameter reassembly failed: {e}")))?;
    let average_image = match &meta.avg_image {
        Some(s) => Some(decode_matrix::<f32>(r, s.rows, s.cols, Precision::Single)?),
        None => None,
    };
    Ok(Checkpoint {
        kind: meta.model,
        model_config: meta.model_config.clone(),
        train_config: meta.train_config.clone(),
        params,
        average_image,
        classes: meta.classes.clone(),
        best_epoch: meta.best_epoch,
        best_dev_loss: meta.best_dev_loss,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<AnyCheckpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(CheckpointError::MagicMismatch);
    }
    let len = LittleEndian::read_u32(r.take(4)?) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)?;
    if meta.format.as_bytes() != MAGIC {
        return Err(CheckpointError::MagicMismatch);
    }
    match meta.precision {
        Precision::Single => Ok(AnyCheckpoint::Single(load_typed::<f32>(&meta, &mut r)?)),
        Precision::Double => Ok(AnyCheckpoint::Double(load_typed::<f64>(&meta, &mut r)?)),
    }
}

pub fn load(path: &Path) -> Result<AnyCheckpoint, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
