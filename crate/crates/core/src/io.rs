//! On-disk formats shared by the pipeline stages.
//!
//! Binary files are little-endian with an eight byte magic prefix. JSON files
//! are written with `serde_json`, whose float printing is shortest
//! round-trip, so every `f64` survives a write/read cycle bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"LAPSMAT1";

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn magic(&mut self, magic: &'static [u8; 8]) -> Result<()> {
        let expected = std::str::from_utf8(magic).unwrap_or("?");
        if self.buf.len() < 8 || &self.buf[..8] != magic {
            return Err(LapsError::BadMagic { expected });
        }
        self.pos = 8;
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(LapsError::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    /// Checks that exactly `n` payload bytes remain before reading them.
    pub(crate) fn expect_remaining(&self, n: usize) -> Result<()> {
        let expected = self.pos + n;
        match self.buf.len() {
            found if found < expected => Err(LapsError::Truncated { expected, found }),
            found if found > expected => Err(LapsError::TrailingBytes { expected, found }),
            _ => Ok(()),
        }
    }

    pub(crate) fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        (0..n).map(|_| self.u32()).collect()
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        (0..n).map(|_| self.f32()).collect()
    }
}

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub(crate) buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn with_magic(magic: &[u8; 8], capacity: usize) -> Self {
        let mut buf = Vec::with_capacity(capacity + 8);
        buf.extend_from_slice(magic);
        ByteWriter { buf }
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LapsError::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LapsError::io(path, e))
}

pub(crate) fn checked_u32(value: usize, what: &'static str) -> Result<u32> {
    u32::try_from(value).map_err(|_| LapsError::invalid(what, format!("{value} exceeds u32")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// Resolves `target` relative to the directory containing `anchor`.
pub(crate) fn sibling(anchor: &Path, target: &str) -> PathBuf {
    let target = Path::new(target);
    if target.is_absolute() {
        return target.to_path_buf();
    }
    anchor
        .parent()
        .map(|dir| dir.join(target))
        .unwrap_or_else(|| target.to_path_buf())
}

/// Dense row-major `f32` matrix, the payload of embedding files.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LapsError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LapsError::NonFinite("matrix"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LapsError::Shape("ragged matrix rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(|i| self.row(i))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_magic(MATRIX_MAGIC, 8 + 4 * self.data.len());
        w.u32(checked_u32(self.rows, "matrix rows")?);
        w.u32(checked_u32(self.cols, "matrix cols")?);
        for &v in &self.data {
            w.f32(v);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MATRIX_MAGIC)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        r.expect_remaining(4 * rows * cols)?;
        Matrix::new(rows, cols, r.f32_vec(rows * cols)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Matrix::from_bytes(&read_bytes(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }
}

/// Annotated action boundaries for one stream.
///
/// `labels`, when present, names every interval the boundaries cut the stream
/// into: `[0, b0)`, `[b0, b1)`, ..., `[b_last, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boundaries_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl GroundTruth {
    pub fn new(boundaries_s: Vec<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let gt = GroundTruth {
            boundaries_s,
            labels,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries_s.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(LapsError::invalid(
                "ground truth",
                "boundaries must be finite and non-negative",
            ));
        }
        if self.boundaries_s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LapsError::invalid(
                "ground truth",
                "boundaries must be strictly increasing",
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.boundaries_s.len() + 1 {
                return Err(LapsError::invalid(
                    "ground truth",
                    format!(
                        "{} boundaries need {} interval labels, got {}",
                        self.boundaries_s.len(),
                        self.boundaries_s.len() + 1,
                        labels.len()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Labeled intervals `(start_s, end_s, label)`; the last one is open-ended.
    pub fn intervals(&self) -> Vec<(f64, f64, &str)> {
        let Some(labels) = &self.labels else {
            return Vec::new();
        };
        let mut edges = Vec::with_capacity(self.boundaries_s.len() + 2);
        edges.push(0.0);
        edges.extend_from_slice(&self.boundaries_s);
        edges.push(f64::INFINITY);
        edges
            .windows(2)
            .zip(labels)
            .map(|(w, l)| (w[0], w[1], l.as_str()))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let gt: GroundTruth = read_json(path)?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Per-primitive raw frame features, keyed by primitive id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameEmbeddingSet {
    pub frames: BTreeMap<String, Matrix>,
}

#[derive(Serialize, Deserialize)]
struct FrameEmbeddingIndex {
    primitives: BTreeMap<String, String>,
}

impl FrameEmbeddingSet {
    pub fn new(frames: BTreeMap<String, Matrix>) -> Result<Self> {
        let set = FrameEmbeddingSet { frames };
        set.validate()?;
        Ok(set)
    }

    pub fn dim(&self) -> Option<usize> {
        self.frames.values().next().map(|m| m.cols)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        for (id, m) in &self.frames {
            if m.rows == 0 {
                return Err(LapsError::invalid(
                    "frame embeddings",
                    format!("primitive {id} has no frames"),
                ));
            }
            if Some(m.cols) != dim {
                return Err(LapsError::invalid(
                    "frame embeddings",
                    format!("primitive {id} has dimension {}, expected {dim:?}", m.cols),
                ));
            }
        }
        Ok(())
    }

    /// Reads the JSON index and every matrix file it references.
    pub fn read(index_path: &Path) -> Result<Self> {
        let index: FrameEmbeddingIndex = read_json(index_path)?;
        let mut frames = BTreeMap::new();
        for (id, file) in index.primitives {
            let m = Matrix::read(&sibling(index_path, &file))?;
            frames.insert(id, m);
        }
        FrameEmbeddingSet::new(frames)
    }

    /// Writes one `.bin` matrix per primitive next to the index.
    pub fn write(&self, index_path: &Path) -> Result<()> {
        let dir = index_path.parent().unwrap_or(Path::new("."));
        let mut primitives = BTreeMap::new();
        for (i, (id, m)) in self.frames.iter().enumerate() {
            let file = format!("frames_{i:05}.bin");
            m.write(&dir.join(&file))?;
            primitives.insert(id.clone(), file);
        }
        write_json(index_path, &FrameEmbeddingIndex { primitives })
    }
}
