use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f32 values. Storage is 32-bit to match exported
/// network activations; all downstream arithmetic promotes to f64.
///
/// Invariants: rows * cols == values.len() and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    rows: usize,
    cols: usize,
    dtype: String,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::InconsistentDimensions {
                context: format!(
                    "tensor declared {rows}x{cols} but holds {} values",
                    values.len()
                ),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                index,
                context: "tensor".to_string(),
            });
        }
        Ok(Tensor2 { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.cols.max(1))
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }
}

/// Index of the row maximum, lowest index winning ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Same tie rule over f64 logits (used when logits are recomputed from a head).
pub fn argmax_f64(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

/// Loads a tensor stored as a JSON header plus a sibling `.bin` payload of
/// little-endian f32 values.
pub fn load_tensor(header_path: &Path) -> Result<Tensor2> {
    let header_text = read_file(header_path)?;
    let header: TensorHeader =
        serde_json::from_str(&header_text).map_err(|e| Error::MalformedHeader {
            path: header_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if header.dtype != "f32le" {
        return Err(Error::MalformedHeader {
            path: header_path.to_path_buf(),
            reason: format!("unsupported dtype {:?}", header.dtype),
        });
    }

    let bin = payload_path(header_path);
    let bytes = read_bytes(&bin)?;
    let expected = header.rows * header.cols;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(Error::ShapeMismatch {
            path: bin,
            expected,
            actual: bytes.len() / 4,
        });
    }

    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            index,
            context: bin.display().to_string(),
        });
    }
    Ok(Tensor2 {
        rows: header.rows,
        cols: header.cols,
        values,
    })
}

/// Writes the header/payload pair for `tensor`. Round-trips bit-exactly.
pub fn save_tensor(header_path: &Path, tensor: &Tensor2) -> Result<()> {
    let header = TensorHeader {
        rows: tensor.rows,
        cols: tensor.cols,
        dtype: "f32le".to_string(),
    };
    let text = serde_json::to_string(&header).expect("header serialization cannot fail");
    write_file(header_path, text.as_bytes())?;
    let mut bytes = Vec::with_capacity(tensor.values.len() * 4);
    for v in &tensor.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(&payload_path(header_path), &bytes)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
