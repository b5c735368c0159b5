//! Frozen surrogate for a trained motion tokenizer.
//!
//! Per velocity step the encoder flattens the `N x 2` point displacements,
//! applies a fixed seeded random projection down to one value per FSQ
//! dimension, quantizes with [`Fsq`], and lifts the grid point into the
//! `latent_dim`-dimensional prototype space with a fixed orthonormal basis
//! scaled by `sqrt(latent_dim)`. Distinct codes therefore have distinct
//! prototypes, and prototype distances equal `sqrt(latent_dim)` times grid
//! distances.
//!
//! Streams are cut into windows of `window` frames advanced by `hop` frames.
//! A window of `W` frames holds `W - 1` velocity steps. The first window
//! emits all of them; later windows emit only their last `min(hop, W - 1)`
//! steps, so overlapping windows never emit a step twice.

mod fsq;

pub use fsq::{Fsq, FsqConfig, Quantized};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clip::KeypointClip;
use crate::error::{LapsError, Result};
use crate::latent::LatentStream;
use crate::seed::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub window: usize,
    pub hop: usize,
    pub seed: u64,
    pub n_points: usize,
    /// Pixel-per-frame speed that maps to a unit pre-quantization latent.
    pub velocity_scale: f64,
    #[serde(flatten)]
    pub fsq: FsqConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            window: 16,
            hop: 16,
            seed: 0,
            n_points: 16,
            velocity_scale: 12.0,
            fsq: FsqConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(LapsError::Config(format!(
                "window must be >= 2 frames, got {}",
                self.window
            )));
        }
        if self.hop < 1 || self.hop > self.window {
            return Err(LapsError::Config(format!(
                "hop must lie in [1, window={}], got {}",
                self.window, self.hop
            )));
        }
        if self.n_points == 0 {
            return Err(LapsError::Config("n_points must be positive".into()));
        }
        if !(self.velocity_scale.is_finite() && self.velocity_scale > 0.0) {
            return Err(LapsError::Config("velocity_scale must be positive".into()));
        }
        if self.fsq.latent_dim < self.fsq.levels.len() {
            return Err(LapsError::Config(format!(
                "latent_dim {} is smaller than the {} FSQ dimensions",
                self.fsq.latent_dim,
                self.fsq.levels.len()
            )));
        }
        Ok(())
    }

    /// Velocity steps emitted by the window starting at frame `start`,
    /// relative to that frame.
    pub fn hop_region(&self, start: usize) -> std::ops::Range<usize> {
        let steps = self.window - 1;
        if start == 0 {
            0..steps
        } else {
            steps - self.hop.min(steps)..steps
        }
    }
}

#[derive(Debug, Clone)]
pub struct MotionEncoder {
    cfg: EncoderConfig,
    fsq: Fsq,
    /// `fsq dims x (2 * n_points)`, row-major, already divided by `velocity_scale`.
    projection: Vec<f64>,
    /// `codebook_size x latent_dim`, row-major.
    codebook: Vec<f32>,
}

impl MotionEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let fsq = Fsq::new(&cfg.fsq.levels)?;
        let inputs = 2 * cfg.n_points;
        let scale = 1.0 / ((inputs as f64).sqrt() * cfg.velocity_scale);
        let mut rng = keyed_rng(cfg.seed, "encoder.projection", 0);
        let projection = (0..fsq.dims() * inputs)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        let basis = orthonormal_basis(cfg.fsq.latent_dim, fsq.dims(), cfg.seed);
        let lift = (cfg.fsq.latent_dim as f64).sqrt();
        let dim = cfg.fsq.latent_dim;
        let mut codebook = Vec::with_capacity(fsq.codebook_size() as usize * dim);
        for code in 0..fsq.codebook_size() {
            let g = fsq.grid_point(code);
            codebook.extend((0..dim).map(|r| {
                let v: f64 = g.iter().enumerate().map(|(k, gk)| basis[k][r] * gk).sum();
                (v * lift) as f32
            }));
        }
        Ok(MotionEncoder {
            cfg,
            fsq,
            projection,
            codebook,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn fsq(&self) -> &Fsq {
        &self.fsq
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.fsq.latent_dim
    }

    pub fn codebook_size(&self) -> u32 {
        self.fsq.codebook_size()
    }

    /// Prototype vector `z_q` of a code.
    pub fn prototype(&self, code: u32) -> &[f32] {
        let d = self.latent_dim();
        &self.codebook[code as usize * d..(code as usize + 1) * d]
    }

    /// Pre-quantization latent for one flattened `N x 2` velocity step.
    pub fn pre_quant(&self, velocity: &[f32]) -> Vec<f64> {
        let inputs = velocity.len();
        self.projection
            .chunks(inputs)
            .map(|row| row.iter().zip(velocity).map(|(w, &v)| w * v as f64).sum())
            .collect()
    }

    pub fn encode_step(&self, velocity: &[f32]) -> u32 {
        self.fsq.quantize(&self.pre_quant(velocity)).code
    }

    /// Encodes one window of `(W - 1) x N x 2` velocities, returning the
    /// `(z_q, code)` pairs of its hop region.
    ///
    /// `start` is the window's first frame; only the first window of a
    /// stream (`start == 0`) emits every step.
    pub fn encode_window(&self, velocities: &[f32], start: usize) -> Result<Vec<(&[f32], u32)>> {
        let stride = 2 * self.cfg.n_points;
        let expected = (self.cfg.window - 1) * stride;
        if velocities.len() != expected {
            return Err(LapsError::Shape(format!(
                "window needs {} x {} x 2 = {expected} velocity values, got {}",
                self.cfg.window - 1,
                self.cfg.n_points,
                velocities.len()
            )));
        }
        Ok(self
            .cfg
            .hop_region(start)
            .map(|j| {
                let code = self.encode_step(&velocities[j * stride..(j + 1) * stride]);
                (self.prototype(code), code)
            })
            .collect())
    }

    /// Slides the window over `clip` and concatenates the emitted tokens.
    pub fn encode_stream(&self, clip: &KeypointClip) -> Result<LatentStream> {
        if clip.points() != self.cfg.n_points {
            return Err(LapsError::Shape(format!(
                "encoder expects {} points, clip has {}",
                self.cfg.n_points,
                clip.points()
            )));
        }
        let window = self.cfg.window;
        if clip.frames() < window {
            return Err(LapsError::TooShort(format!(
                "clip has {} frames, one window needs {window}",
                clip.frames()
            )));
        }
        let vel = clip.velocities();
        let stride = 2 * self.cfg.n_points;
        let mut codes = Vec::new();
        let mut frames = Vec::new();
        let mut vectors = Vec::new();
        let mut start = 0;
        while start + window <= clip.frames() {
            let slab = &vel.data[start * stride..(start + window - 1) * stride];
            let tokens = self.encode_window(slab, start)?;
            for (j, (z, code)) in self.cfg.hop_region(start).zip(tokens) {
                codes.push(code);
                frames.push((start + j) as u32);
                vectors.extend_from_slice(z);
            }
            start += self.cfg.hop;
        }
        LatentStream::new(
            self.latent_dim(),
            self.codebook_size(),
            codes,
            frames,
            vectors,
        )
    }
}

/// `cols` orthonormal vectors of length `rows` (Gram-Schmidt on seeded normals).
fn orthonormal_basis(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = keyed_rng(seed, "encoder.lift", 0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}
