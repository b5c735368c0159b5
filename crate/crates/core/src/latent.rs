//! Paired continuous/discrete latent streams.

use std::ops::Range;
use std::path::Path;

use crate::error::{LapsError, Result};
use crate::io::{checked_u32, read_bytes, write_bytes, ByteReader, ByteWriter};

pub const LATENT_MAGIC: &[u8; 8] = b"LAPSLAT1";

/// Quantized latent vectors `z_q`, their code indices and source frames.
///
/// `vectors` is row-major `steps x dim`. Every vector is a codebook
/// prototype, so two steps with equal codes carry bit-identical vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStream {
    dim: usize,
    codebook_size: u32,
    codes: Vec<u32>,
    frame_of_step: Vec<u32>,
    vectors: Vec<f32>,
}

impl LatentStream {
    pub fn new(
        dim: usize,
        codebook_size: u32,
        codes: Vec<u32>,
        frame_of_step: Vec<u32>,
        vectors: Vec<f32>,
    ) -> Result<Self> {
        if codebook_size == 0 {
            return Err(LapsError::invalid(
                "latent stream",
                "codebook size must be positive",
            ));
        }
        if dim == 0 && !codes.is_empty() {
            return Err(LapsError::invalid(
                "latent stream",
                "latent dimension must be positive",
            ));
        }
        if frame_of_step.len() != codes.len() || vectors.len() != codes.len() * dim {
            return Err(LapsError::Shape(format!(
                "{} codes, {} frame indices and {} vector values for dim {dim}",
                codes.len(),
                frame_of_step.len(),
                vectors.len()
            )));
        }
        if let Some(c) = codes.iter().find(|&&c| c >= codebook_size) {
            return Err(LapsError::invalid(
                "latent stream",
                format!("code {c} outside codebook of size {codebook_size}"),
            ));
        }
        if frame_of_step.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LapsError::invalid(
                "latent stream",
                "frame_of_step must be strictly increasing",
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(LapsError::NonFinite("latent vectors"));
        }
        Ok(LatentStream {
            dim,
            codebook_size,
            codes,
            frame_of_step,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn frame_of_step(&self) -> &[u32] {
        &self.frame_of_step
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, t: usize) -> &[f32] {
        &self.vectors[t * self.dim..(t + 1) * self.dim]
    }

    /// Sub-stream covering latent steps `range`.
    pub fn slice(&self, range: Range<usize>) -> LatentStream {
        LatentStream {
            dim: self.dim,
            codebook_size: self.codebook_size,
            codes: self.codes[range.clone()].to_vec(),
            frame_of_step: self.frame_of_step[range.clone()].to_vec(),
            vectors: self.vectors[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.codes.len();
        let mut w = ByteWriter::with_magic(LATENT_MAGIC, 12 + 8 * n + 4 * self.vectors.len());
        w.u32(checked_u32(n, "latent steps")?);
        w.u32(checked_u32(self.dim, "latent dim")?);
        w.u32(self.codebook_size);
        self.codes.iter().for_each(|&c| w.u32(c));
        self.frame_of_step.iter().for_each(|&f| w.u32(f));
        self.vectors.iter().for_each(|&v| w.f32(v));
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(LATENT_MAGIC)?;
        let steps = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let codebook_size = r.u32()?;
        let values = steps
            .checked_mul(dim)
            .ok_or_else(|| LapsError::invalid("latent stream", "header dimensions overflow"))?;
        r.expect_remaining(8 * steps + 4 * values)?;
        let codes = r.u32_vec(steps)?;
        let frames = r.u32_vec(steps)?;
        let vectors = r.f32_vec(values)?;
        LatentStream::new(dim, codebook_size, codes, frames, vectors)
    }
}

/// Reads a `.lats` latent stream.
pub fn read_latent_stream(path: &Path) -> Result<LatentStream> {
    LatentStream::from_bytes(&read_bytes(path)?)
}

pub fn write_latent_stream(stream: &LatentStream, path: &Path) -> Result<()> {
    write_bytes(path, &stream.to_bytes()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LatentStream {
        LatentStream::new(
            2,
            4,
            vec![0, 3, 3],
            vec![0, 1, 5],
            vec![0.0, 1.0, 2.0, 3.0, 2.0, 3.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = small();
        assert_eq!(LatentStream::from_bytes(&s.to_bytes().unwrap()).unwrap(), s);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.lats");
        write_latent_stream(&s, &p).unwrap();
        assert_eq!(read_latent_stream(&p).unwrap(), s);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(LatentStream::new(1, 4, vec![4], vec![0], vec![0.0]).is_err());
        assert!(LatentStream::new(1, 4, vec![0, 1], vec![3, 3], vec![0.0, 0.0]).is_err());
        assert!(LatentStream::new(1, 4, vec![0], vec![0], vec![f32::INFINITY]).is_err());
        assert!(LatentStream::new(2, 4, vec![0], vec![0], vec![0.0]).is_err());
        assert!(LatentStream::new(0, 4, vec![], vec![], vec![]).is_ok());
    }

    #[test]
    fn header_payload_mismatch() {
        let mut bytes = small().to_bytes().unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            LatentStream::from_bytes(&bytes),
            Err(LapsError::Truncated { .. })
        ));
    }

    #[test]
    fn slice_keeps_rows_aligned() {
        let s = small().slice(1..3);
        assert_eq!(s.codes(), &[3, 3]);
        assert_eq!(s.frame_of_step(), &[1, 5]);
        assert_eq!(s.vector(1), &[2.0, 3.0]);
    }
}
