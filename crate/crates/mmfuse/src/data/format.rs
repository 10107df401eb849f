//! The MMFV1 dataset directory format.
//!
//! A dataset directory holds three files:
//!
//! - `header.json` — `{"format":"MMFV1","d_t":..,"d_v":..,"granularity":
//!   "pooled"|"sequence","classes":[..]}`
//! - `manifest.jsonl` — one record per line with id, label (a class name),
//!   split, has_image, and row counts plus offsets into the feature blob.
//!   Offsets count float elements, not bytes; image fields are null when
//!   `has_image` is false.
//! - `features.bin` — flat little-endian f32 values, row-major, concatenated
//!   according to the manifest offsets.
//!
//! Loading validates the magic, label and split vocabulary, row counts
//! against the granularity, offsets against the blob length, and value
//! finiteness, producing structured errors that name the offending record.

use super::{ClassCatalog, Dataset, DatasetHeader, FeatureRecord, Split};
use crate::error::DataError;
use crate::matrix::Matrix;
use crate::models::Granularity;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "MMFV1";

#[derive(Serialize, Deserialize)]
struct HeaderJson {
    format: String,
    d_t: usize,
    d_v: usize,
    granularity: Granularity,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    label: String,
    split: String,
    has_image: bool,
    text_rows: usize,
    text_offset: usize,
    image_rows: Option<usize>,
    image_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    informative: Option<String>,
}

/// Write a dataset directory. Offsets follow record order: each record's
/// text block, then its image block when present.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let header = HeaderJson {
        format: MAGIC.to_string(),
        d_t: dataset.header.d_t,
        d_v: dataset.header.d_v,
        granularity: dataset.header.granularity,
        classes: dataset.header.classes.names().to_vec(),
    };
    fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)?)?;

    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    let mut blob = BufWriter::new(fs::File::create(dir.join("features.bin"))?);
    let mut offset = 0usize;
    for r in &dataset.records {
        let text_offset = offset;
        for &x in r.text_feats.data() {
            blob.write_f32::<LittleEndian>(x)?;
        }
        offset += r.text_feats.len();
        let (image_rows, image_offset) = match (&r.image_feats, r.has_image) {
            (Some(img), true) => {
                let image_offset = offset;
                for &x in img.data() {
                    blob.write_f32::<LittleEndian>(x)?;
                }
                offset += img.len();
                (Some(img.rows()), Some(image_offset))
            }
            // Imputed images are a training-time artifact; on disk a record
            // without a genuine image stays image-less.
            _ => (None, None),
        };
        let line = ManifestLine {
            id: r.id.clone(),
            label: dataset.header.classes.name(r.label).to_string(),
            split: r.split.as_str().to_string(),
            has_image: r.has_image,
            text_rows: r.text_feats.rows(),
            text_offset,
            image_rows,
            image_offset,
            informative: r.informative.clone(),
        };
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    blob.flush()?;
    Ok(())
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let header: HeaderJson = serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
    if header.format != MAGIC {
        return Err(DataError::MagicMismatch { found: header.format });
    }
    let classes = ClassCatalog::new(header.classes)?;
    let blob = read_blob(&dir.join("features.bin"))?;

    let manifest = BufReader::new(fs::File::open(dir.join("manifest.jsonl"))?);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in manifest.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| DataError::Manifest {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(m.id.clone()) {
            return Err(DataError::DuplicateId { id: m.id });
        }
        let label = classes
            .index_of(&m.label)
            .ok_or_else(|| DataError::UnknownLabel { id: m.id.clone(), label: m.label.clone() })?;
        let split = Split::parse(&m.split)
            .ok_or_else(|| DataError::UnknownSplit { id: m.id.clone(), split: m.split.clone() })?;
        if header.granularity == Granularity::Pooled && m.text_rows != 1 {
            return Err(DataError::PooledRows { id: m.id, rows: m.text_rows });
        }
        let text_feats = slice_matrix(&blob, &m.id, m.text_offset, m.text_rows, header.d_t)?;
        let image_feats = match (m.has_image, m.image_rows, m.image_offset) {
            (true, Some(rows), Some(off)) => {
                if header.granularity == Granularity::Pooled && rows != 1 {
                    return Err(DataError::PooledRows { id: m.id, rows });
                }
                Some(slice_matrix(&blob, &m.id, off, rows, header.d_v)?)
            }
            (false, None, None) => None,
            (has_image, _, _) => {
                return Err(DataError::ImageFieldsInconsistent {
                    id: m.id,
                    has_image,
                    offsets: if has_image { "null" } else { "present" },
                });
            }
        };
        records.push(FeatureRecord {
            id: m.id,
            label,
            split,
            has_image: m.has_image,
            text_feats,
            image_feats,
            informative: m.informative,
        });
    }

    Ok(Dataset::new(
        DatasetHeader {
            d_t: header.d_t,
            d_v: header.d_v,
            granularity: header.granularity,
            classes,
        },
        records,
    ))
}

fn read_blob(path: &Path) -> Result<Vec<f32>, DataError> {
    let bytes = fs::read(path)?;
    let mut cursor = std::io::Cursor::new(bytes);
    let mut out = Vec::with_capacity(cursor.get_ref().len() / 4);
    while (cursor.position() as usize) < cursor.get_ref().len() {
        out.push(cursor.read_f32::<LittleEndian>()?);
    }
    Ok(out)
}

fn slice_matrix(
    blob: &[f32],
    id: &str,
    offset: usize,
    rows: usize,
    cols: usize,
) -> Result<Matrix<f32>, DataError> {
    let needed = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| DataError::Truncated {
            id: id.to_string(),
            needed: usize::MAX,
            available: blob.len(),
        })?;
    if needed > blob.len() {
        return Err(DataError::Truncated { id: id.to_string(), needed, available: blob.len() });
    }
    Matrix::from_vec(rows, cols, blob[offset..needed].to_vec())
        .map_err(|source| DataError::BadFeatureValues { id: id.to_string(), source })
}
