//! IDX and CSV ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decoded IDX tensor: dimensions and values in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    /// True when the payload was unsigned bytes (already scaled to [0, 1]).
    pub byte_valued: bool,
}

/// Parses an IDX buffer: two zero bytes, a type code, the dimension count,
/// big-endian `u32` dimensions, then the big-endian payload. Unsigned byte
/// payloads are scaled by `1/255`; other types are returned as stored.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(bad(path, "file shorter than the magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(bad(
            path,
            format!(
                "bad magic {:02x}{:02x}{:02x}{:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        ));
    }
    let width = match bytes[2] {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        t => return Err(bad(path, format!("unknown IDX type code 0x{t:02x}"))),
    };
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad(path, "truncated dimension table"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(path, "dimension product overflows"))?;
    let need = count
        .checked_mul(width)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| bad(path, "payload size overflows"))?;
    if bytes.len() < need {
        return Err(bad(
            path,
            format!(
                "truncated payload: expected {} bytes, found {}",
                need - header,
                bytes.len() - header
            ),
        ));
    }
    let payload = &bytes[header..need];
    let values: Vec<f64> = match bytes[2] {
        0x08 => payload.iter().map(|&b| b as f64 / 255.0).collect(),
        0x09 => payload.iter().map(|&b| b as i8 as f64).collect(),
        0x0B => payload
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as f64)
            .collect(),
        0x0C => payload
            .chunks_exact(4)
            .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        0x0D => payload
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        _ => payload
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok(IdxTensor {
        dims,
        values,
        byte_valued: bytes[2] == 0x08,
    })
}

/// Loads an IDX image/label file pair. Every dimension after the first is
/// flattened into the feature vector.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<LabeledDataset> {
    let img = parse_idx(&std::fs::read(images)?, images)?;
    let lab = parse_idx(&std::fs::read(labels)?, labels)?;
    if img.dims.is_empty() {
        return Err(bad(images, "image file has no dimensions"));
    }
    let n = img.dims[0];
    let dim: usize = img.dims[1..].iter().product::<usize>().max(1);
    if lab.dims.len() != 1 || lab.dims[0] != n {
        return Err(bad(
            labels,
            format!("expected {n} labels, found dims {:?}", lab.dims),
        ));
    }
    let labels: Vec<usize> = if lab.byte_valued {
        // Byte labels were scaled on parse; undo it exactly.
        lab.values
            .iter()
            .map(|v| (v * 255.0).round() as usize)
            .collect()
    } else {
        lab.values
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(bad(labels, format!("invalid label value {v}")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<_>>()?
    };
    LabeledDataset::new(dim, img.values, labels, split)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Header name of the integer label column; every other column is a feature.
    pub label_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".to_string(),
        }
    }
}

/// Loads a headered CSV. Row order is preserved.
pub fn load_csv(path: &Path, schema: &CsvSchema, split: Split) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| {
            bad(
                path,
                format!("label column '{}' not found", schema.label_column),
            )
        })?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(bad(path, "no feature columns"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        for (c, cell) in rec.iter().enumerate() {
            if c == label_idx {
                let label: usize = cell
                    .parse()
                    .map_err(|_| bad(path, format!("line {line}: non-integer label '{cell}'")))?;
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    bad(
                        path,
                        format!("line {line}, column {}: non-numeric cell '{cell}'", c + 1),
                    )
                })?;
                features.push(v);
            }
        }
    }
    LabeledDataset::new(dim, features, labels, split)
}
