//! Segmented action primitives and the segment manifest format.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::io::{read_json, sibling, write_json};
use crate::latent::{read_latent_stream, write_latent_stream, LatentStream};

/// One detected action: its latent steps, frame/second bounds, codes and vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub source_id: String,
    /// Position of this primitive within its source stream.
    pub index: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub start_frame: u32,
    pub end_frame: u32,
    pub start_s: f64,
    pub end_s: f64,
    /// Closed by end-of-stream rather than by the deactivation rule.
    pub truncated: bool,
    pub codes: Vec<u32>,
    pub step_frames: Vec<u32>,
    pub dim: usize,
    pub vectors: Vec<f32>,
}

impl Primitive {
    /// Cuts latent steps `steps` out of `stream`.
    ///
    /// The exclusive end frame is the source frame of the first step after
    /// the segment, or one past the last frame when the segment runs to the
    /// end of the stream.
    pub fn from_stream(
        source_id: &str,
        index: usize,
        stream: &LatentStream,
        steps: Range<usize>,
        fps: f64,
        truncated: bool,
    ) -> Result<Self> {
        if steps.start >= steps.end || steps.end > stream.len() {
            return Err(LapsError::invalid(
                "primitive",
                format!(
                    "step range {steps:?} outside stream of {} steps",
                    stream.len()
                ),
            ));
        }
        let part = stream.slice(steps.clone());
        let next_frame = stream.frame_of_step().get(steps.end).copied();
        Primitive::from_parts(
            source_id,
            index,
            steps,
            Parts {
                codes: part.codes().to_vec(),
                step_frames: part.frame_of_step().to_vec(),
                dim: stream.dim(),
                vectors: part.vectors().to_vec(),
            },
            next_frame,
            fps,
            truncated,
        )
    }

    /// Assembles a primitive from already extracted rows. `next_frame` is
    /// the source frame of the step following the segment, if any.
    pub fn from_parts(
        source_id: &str,
        index: usize,
        steps: Range<usize>,
        parts: Parts,
        next_frame: Option<u32>,
        fps: f64,
        truncated: bool,
    ) -> Result<Self> {
        let Some(&first) = parts.step_frames.first() else {
            return Err(LapsError::invalid("primitive", "no latent steps"));
        };
        let last = *parts.step_frames.last().unwrap_or(&first);
        let end_frame = next_frame.unwrap_or(last + 1);
        let p = Primitive {
            source_id: source_id.to_string(),
            index,
            start_step: steps.start,
            end_step: steps.end,
            start_frame: first,
            end_frame,
            start_s: first as f64 / fps,
            end_s: end_frame as f64 / fps,
            truncated,
            codes: parts.codes,
            step_frames: parts.step_frames,
            dim: parts.dim,
            vectors: parts.vectors,
        };
        p.validate(fps)?;
        Ok(p)
    }

    /// Stable identifier `"<source_id>#<index>"`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.source_id, self.index)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn vector(&self, t: usize) -> &[f32] {
        &self.vectors[t * self.dim..(t + 1) * self.dim]
    }

    pub fn validate(&self, fps: f64) -> Result<()> {
        let bad = |reason: String| Err(LapsError::invalid("primitive", reason));
        if self.start_frame >= self.end_frame {
            return bad(format!(
                "empty frame interval [{}, {})",
                self.start_frame, self.end_frame
            ));
        }
        if self.codes.is_empty()
            || self.step_frames.len() != self.codes.len()
            || self.vectors.len() != self.codes.len() * self.dim
        {
            return bad(format!("{} has mismatched codes/vectors", self.id()));
        }
        if self.start_s != self.start_frame as f64 / fps
            || self.end_s != self.end_frame as f64 / fps
        {
            return bad(format!(
                "{} seconds disagree with frames at {fps} fps",
                self.id()
            ));
        }
        Ok(())
    }
}

/// Raw rows of a primitive: codes, their frames and `len x dim` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parts {
    pub codes: Vec<u32>,
    pub step_frames: Vec<u32>,
    pub dim: usize,
    pub vectors: Vec<f32>,
}

/// All primitives cut from one stream, plus the metadata needed to write them.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentManifest {
    pub source_id: String,
    pub fps: f64,
    pub codebook_size: u32,
    pub dim: usize,
    pub primitives: Vec<Primitive>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    source_id: String,
    fps: f64,
    codebook_size: u32,
    dim: usize,
    vectors: String,
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    start_frame: u32,
    end_frame: u32,
    start_s: f64,
    end_s: f64,
    start_step: usize,
    end_step: usize,
    #[serde(default)]
    truncated: bool,
    codes: Vec<u32>,
}

/// Path of the vector file written next to a manifest.
pub fn vectors_path(manifest: &Path) -> std::path::PathBuf {
    manifest.with_extension("lats")
}

impl SegmentManifest {
    pub fn new(
        source_id: impl Into<String>,
        fps: f64,
        codebook_size: u32,
        dim: usize,
        primitives: Vec<Primitive>,
    ) -> Self {
        SegmentManifest {
            source_id: source_id.into(),
            fps,
            codebook_size,
            dim,
            primitives,
        }
    }

    /// Codes, step frames and vectors of every primitive, concatenated.
    fn concatenated(&self) -> Result<LatentStream> {
        LatentStream::new(
            self.dim,
            self.codebook_size,
            self.primitives
                .iter()
                .flat_map(|p| p.codes.iter().copied())
                .collect(),
            self.primitives
                .iter()
                .flat_map(|p| p.step_frames.iter().copied())
                .collect(),
            self.primitives
                .iter()
                .flat_map(|p| p.vectors.iter().copied())
                .collect(),
        )
    }
}

/// Writes the JSON manifest to `path` and the vectors to its `.lats` sibling.
pub fn write_segment_manifest(manifest: &SegmentManifest, path: &Path) -> Result<()> {
    for p in &manifest.primitives {
        p.validate(manifest.fps)?;
    }
    let vectors = vectors_path(path);
    write_latent_stream(&manifest.concatenated()?, &vectors)?;
    let file = ManifestFile {
        source_id: manifest.source_id.clone(),
        fps: manifest.fps,
        codebook_size: manifest.codebook_size,
        dim: manifest.dim,
        vectors: vectors
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        segments: manifest
            .primitives
            .iter()
            .map(|p| SegmentRecord {
                start_frame: p.start_frame,
                end_frame: p.end_frame,
                start_s: p.start_s,
                end_s: p.end_s,
                start_step: p.start_step,
                end_step: p.end_step,
                truncated: p.truncated,
                codes: p.codes.clone(),
            })
            .collect(),
    };
    write_json(path, &file)
}

/// Reads a manifest and the vector file it references.
pub fn read_segment_manifest(path: &Path) -> Result<SegmentManifest> {
    let file: ManifestFile = read_json(path)?;
    let vectors = read_latent_stream(&sibling(path, &file.vectors))?;
    read_with_vectors(file, vectors)
}

/// Reads a manifest, taking vectors from an explicit `.lats` file.
pub fn read_segment_manifest_with(path: &Path, vectors: &Path) -> Result<SegmentManifest> {
    let file: ManifestFile = read_json(path)?;
    read_with_vectors(file, read_latent_stream(vectors)?)
}

fn read_with_vectors(file: ManifestFile, vectors: LatentStream) -> Result<SegmentManifest> {
    if !(file.fps.is_finite() && file.fps > 0.0) {
        return Err(LapsError::invalid(
            "segment manifest",
            "fps must be positive",
        ));
    }
    let total: usize = file.segments.iter().map(|s| s.codes.len()).sum();
    if total != vectors.len() || (total > 0 && vectors.dim() != file.dim) {
        return Err(LapsError::Shape(format!(
            "manifest lists {total} steps of dim {}, vector file holds {} of dim {}",
            file.dim,
            vectors.len(),
            vectors.dim()
        )));
    }
    let mut offset = 0;
    let mut primitives = Vec::with_capacity(file.segments.len());
    for (index, seg) in file.segments.into_iter().enumerate() {
        let part = vectors.slice(offset..offset + seg.codes.len());
        offset += seg.codes.len();
        if part.codes() != seg.codes.as_slice() {
            return Err(LapsError::invalid(
                "segment manifest",
                format!("segment {index} codes disagree with vector file"),
            ));
        }
        let p = Primitive {
            source_id: file.source_id.clone(),
            index,
            start_step: seg.start_step,
            end_step: seg.end_step,
            start_frame: seg.start_frame,
            end_frame: seg.end_frame,
            start_s: seg.start_s,
            end_s: seg.end_s,
            truncated: seg.truncated,
            codes: seg.codes,
            step_frames: part.frame_of_step().to_vec(),
            dim: file.dim,
            vectors: part.vectors().to_vec(),
        };
        p.validate(file.fps)?;
        primitives.push(p);
    }
    Ok(SegmentManifest {
        source_id: file.source_id,
        fps: file.fps,
        codebook_size: file.codebook_size,
        dim: file.dim,
        primitives,
    })
}
