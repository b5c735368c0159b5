//! Keypoint track clips and their velocities.

use std::path::Path;

use crate::error::{LapsError, Result};
use crate::io::{checked_u32, read_bytes, write_bytes, ByteReader, ByteWriter};

pub const CLIP_MAGIC: &[u8; 8] = b"LAPSKPC1";

/// `frames x points x 2` pixel tracks plus the frame rate they were sampled at.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointClip {
    frames: usize,
    points: usize,
    fps: f32,
    tracks: Vec<f32>,
}

impl KeypointClip {
    /// Builds a clip from frame-major, point-major `(x, y)` coordinates.
    pub fn new(frames: usize, points: usize, fps: f32, tracks: Vec<f32>) -> Result<Self> {
        if frames < 2 {
            return Err(LapsError::invalid(
                "clip",
                format!("need at least 2 frames, got {frames}"),
            ));
        }
        if points == 0 {
            return Err(LapsError::invalid("clip", "need at least one point"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(LapsError::invalid(
                "clip",
                format!("fps must be positive, got {fps}"),
            ));
        }
        if tracks.len() != frames * points * 2 {
            return Err(LapsError::Shape(format!(
                "{frames}x{points}x2 clip needs {} values, got {}",
                frames * points * 2,
                tracks.len()
            )));
        }
        if tracks.iter().any(|v| !v.is_finite()) {
            return Err(LapsError::NonFinite("keypoint tracks"));
        }
        Ok(KeypointClip {
            frames,
            points,
            fps,
            tracks,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Frame rate as stored on disk.
    pub fn fps_f32(&self) -> f32 {
        self.fps
    }

    pub fn fps(&self) -> f64 {
        self.fps as f64
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / self.fps()
    }

    pub fn tracks(&self) -> &[f32] {
        &self.tracks
    }

    /// Coordinates of all points in frame `t`, flattened `(x, y)` pairs.
    pub fn frame(&self, t: usize) -> &[f32] {
        let stride = self.points * 2;
        &self.tracks[t * stride..(t + 1) * stride]
    }

    pub fn position(&self, t: usize, n: usize) -> [f32; 2] {
        let f = self.frame(t);
        [f[2 * n], f[2 * n + 1]]
    }

    /// Frame-to-frame displacement of every point.
    pub fn velocities(&self) -> Velocities {
        let stride = self.points * 2;
        let data = self
            .tracks
            .iter()
            .zip(&self.tracks[stride..])
            .map(|(p, q)| q - p)
            .collect();
        Velocities {
            steps: self.frames - 1,
            points: self.points,
            data,
        }
    }

    /// The clip played backwards.
    pub fn reversed(&self) -> KeypointClip {
        let data = (0..self.frames)
            .rev()
            .flat_map(|t| self.frame(t).iter().copied())
            .collect();
        KeypointClip {
            tracks: data,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_magic(CLIP_MAGIC, 12 + 4 * self.tracks.len());
        w.u32(checked_u32(self.frames, "clip frames")?);
        w.u32(checked_u32(self.points, "clip points")?);
        w.f32(self.fps);
        for &v in &self.tracks {
            w.f32(v);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CLIP_MAGIC)?;
        let frames = r.u32()? as usize;
        let points = r.u32()? as usize;
        let fps = r.f32()?;
        let n = frames
            .checked_mul(points)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| LapsError::invalid("clip", "header dimensions overflow"))?;
        r.expect_remaining(4 * n)?;
        KeypointClip::new(frames, points, fps, r.f32_vec(n)?)
    }
}

/// Reads a `.kpc` keypoint clip.
pub fn read_keypoint_clip(path: &Path) -> Result<KeypointClip> {
    KeypointClip::from_bytes(&read_bytes(path)?)
}

pub fn write_keypoint_clip(clip: &KeypointClip, path: &Path) -> Result<()> {
    write_bytes(path, &clip.to_bytes()?)
}

/// `steps x points x 2` displacements; step `t` is frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocities {
    pub steps: usize,
    pub points: usize,
    pub data: Vec<f32>,
}

impl Velocities {
    pub fn step(&self, t: usize) -> &[f32] {
        let stride = self.points * 2;
        &self.data[t * stride..(t + 1) * stride]
    }

    pub fn get(&self, t: usize, n: usize) -> [f32; 2] {
        let s = self.step(t);
        [s[2 * n], s[2 * n + 1]]
    }
}
