//! Training-free temporal embedding of latent sequences.
//!
//! A pre-norm transformer encoder whose weights are drawn once from a
//! seeded generator and never updated. Each weight tensor has its own ChaCha
//! stream keyed by `(seed, tensor name, layer)`, so weights are reproducible
//! without being stored and do not depend on construction order.
//!
//! Forward pass for a `T x input_dim` sequence:
//!
//! 1. `h = x W_in + b_in + PE`
//! 2. per layer: `h += MHA(LN(h))`, then `h += W_2 gelu(W_1 LN(h))`
//! 3. `e = mean_t LN(h)_t`
//!
//! Attention is unmasked. All arithmetic is `f32` in a fixed order, and
//! every sequence is processed on its own, so batching cannot change results.

use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::io::{read_json, sibling, write_json, Matrix};
use crate::seed::keyed_rng;
use crate::segment::Primitive;

/// Parameter budget the default configuration is expected to land near.
pub const REFERENCE_PARAMETERS: usize = 2_300_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub seed: u64,
    pub input_dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            model_dim: 256,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            seed: 0,
            input_dim: 768,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.model_dim,
            self.layers,
            self.heads,
            self.ff_dim,
            self.input_dim,
        ];
        if dims.contains(&0) {
            return Err(LapsError::Config("embedder dimensions must be >= 1".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(LapsError::Config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.model_dim;
        let linear = |i: usize, o: usize| i * o + o;
        let block = 4 * linear(d, d) + linear(d, self.ff_dim) + linear(self.ff_dim, d) + 2 * 2 * d;
        linear(self.input_dim, d) + self.layers * block + 2 * d
    }

    /// Relative distance of the parameter count from [`REFERENCE_PARAMETERS`].
    pub fn budget_drift(&self) -> f64 {
        (self.parameter_count() as f64 - REFERENCE_PARAMETERS as f64).abs()
            / REFERENCE_PARAMETERS as f64
    }
}

/// Interleaved sinusoidal position code: `sin` on even, `cos` on odd indices.
pub fn sinusoidal_pe(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let angle = t as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEmbedding {
    pub primitive_id: String,
    pub raw: Vec<f32>,
    pub normalized: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Linear {
    weight: Array2<f32>,
    bias: Array1<f32>,
}

impl Linear {
    fn new(seed: u64, name: &str, layer: u64, fan_in: usize, fan_out: usize) -> Self {
        // Uniform on [-a, a] has variance a^2 / 3 = 1 / fan_in.
        let a = (3.0 / fan_in as f64).sqrt() as f32;
        let mut rng = keyed_rng(seed, &format!("{name}.weight"), layer);
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..=a));
        let mut rng = keyed_rng(seed, &format!("{name}.bias"), layer);
        let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-a..=a));
        Linear { weight, bias }
    }

    fn forward(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gamma: Array1<f32>,
    beta: Array1<f32>,
}

impl LayerNorm {
    const EPS: f32 = 1e-5;

    fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f32;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + Self::EPS).sqrt();
            row.iter_mut()
                .zip(self.gamma.iter().zip(&self.beta))
                .for_each(|(v, (g, b))| *v = (*v - mean) * inv * g + b);
        }
        out
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_rows(m: &mut Array2<f32>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl EncoderLayer {
    fn new(cfg: &EmbedderConfig, layer: u64) -> Self {
        let (d, f, seed) = (cfg.model_dim, cfg.ff_dim, cfg.seed);
        EncoderLayer {
            norm_attn: LayerNorm::new(d),
            query: Linear::new(seed, "attn.query", layer, d, d),
            key: Linear::new(seed, "attn.key", layer, d, d),
            value: Linear::new(seed, "attn.value", layer, d, d),
            out: Linear::new(seed, "attn.out", layer, d, d),
            norm_ff: LayerNorm::new(d),
            ff_in: Linear::new(seed, "ff.in", layer, d, f),
            ff_out: Linear::new(seed, "ff.out", layer, f, d),
        }
    }

    fn forward(&self, h: &mut Array2<f32>, heads: usize) {
        let a = self.norm_attn.forward(h);
        let (q, k, v) = (
            self.query.forward(&a.view()),
            self.key.forward(&a.view()),
            self.value.forward(&a.view()),
        );
        let d = h.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = Array2::<f32>::zeros(h.raw_dim());
        for head in 0..heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        *h += &self.out.forward(&ctx.view());

        let b = self.norm_ff.forward(h);
        let hidden = self.ff_in.forward(&b.view()).mapv(gelu);
        *h += &self.ff_out.forward(&hidden.view());
    }
}

/// Frozen random-weight transformer encoder with mean pooling.
#[derive(Debug, Clone)]
pub struct FrozenEmbedder {
    cfg: EmbedderConfig,
    input: Linear,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
}

impl FrozenEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        cfg.validate()?;
        let input = Linear::new(cfg.seed, "input", 0, cfg.input_dim, cfg.model_dim);
        let layers = (0..cfg.layers as u64)
            .map(|l| EncoderLayer::new(&cfg, l))
            .collect();
        let final_norm = LayerNorm::new(cfg.model_dim);
        Ok(FrozenEmbedder {
            cfg,
            input,
            layers,
            final_norm,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    /// Number of stored parameters (weights, biases and norm gains/offsets).
    pub fn parameter_count(&self) -> usize {
        let linear = |l: &Linear| l.weight.len() + l.bias.len();
        let norm = |n: &LayerNorm| n.gamma.len() + n.beta.len();
        linear(&self.input)
            + norm(&self.final_norm)
            + self
                .layers
                .iter()
                .map(|l| {
                    [&l.query, &l.key, &l.value, &l.out, &l.ff_in, &l.ff_out]
                        .into_iter()
                        .map(linear)
                        .sum::<usize>()
                        + norm(&l.norm_attn)
                        + norm(&l.norm_ff)
                })
                .sum::<usize>()
    }

    /// Final hidden states, `T x model_dim`.
    pub fn hidden_states(&self, seq: ArrayView2<f32>) -> Result<Array2<f32>> {
        if seq.nrows() == 0 {
            return Err(LapsError::invalid("embedder input", "empty sequence"));
        }
        if seq.ncols() != self.cfg.input_dim {
            return Err(LapsError::Shape(format!(
                "embedder expects input dim {}, got {}",
                self.cfg.input_dim,
                seq.ncols()
            )));
        }
        let d = self.cfg.model_dim;
        let mut h = self.input.forward(&seq);
        for (t, mut row) in h.rows_mut().into_iter().enumerate() {
            row.iter_mut()
                .zip(sinusoidal_pe(t, d))
                .for_each(|(v, pe)| *v += pe as f32);
        }
        for layer in &self.layers {
            layer.forward(&mut h, self.cfg.heads);
        }
        Ok(self.final_norm.forward(&h))
    }

    /// Mean-pooled embedding of a `T x input_dim` sequence.
    pub fn embed(&self, seq: ArrayView2<f32>, primitive_id: &str) -> Result<SegmentEmbedding> {
        let hidden = self.hidden_states(seq)?;
        let raw = hidden
            .mean_axis(Axis(0))
            .ok_or_else(|| LapsError::Internal("mean over empty sequence".into()))?
            .to_vec();
        let norm = raw.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(LapsError::DegenerateEmbedding(primitive_id.to_string()));
        }
        let normalized = raw.iter().map(|&v| (v as f64 / norm) as f32).collect();
        Ok(SegmentEmbedding {
            primitive_id: primitive_id.to_string(),
            raw,
            normalized,
        })
    }

    pub fn embed_primitive(&self, p: &Primitive) -> Result<SegmentEmbedding> {
        let view = ArrayView2::from_shape((p.len(), p.dim), &p.vectors)
            .map_err(|e| LapsError::Shape(e.to_string()))?;
        self.embed(view, &p.id())
    }

    /// Embeds every primitive, preserving order.
    pub fn embed_all(&self, primitives: &[Primitive]) -> Result<Vec<SegmentEmbedding>> {
        primitives
            .par_iter()
            .map(|p| self.embed_primitive(p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingIndex {
    matrix: String,
    dim: usize,
    ids: Vec<String>,
}

/// Index file that accompanies an embedding matrix: `embeddings.bin` pairs
/// with `embeddings.json`.
pub fn embedding_index_path(matrix: &Path) -> PathBuf {
    matrix.with_extension("json")
}

/// Writes raw embeddings as a matrix (one row per primitive) plus a JSON
/// index listing the primitive ids in row order.
pub fn write_embeddings(embeddings: &[SegmentEmbedding], path: &Path) -> Result<()> {
    let dim = embeddings.first().map_or(0, |e| e.raw.len());
    let rows: Vec<Vec<f32>> = embeddings.iter().map(|e| e.raw.clone()).collect();
    let m = Matrix::from_rows(&rows)?;
    m.write(path)?;
    let index = EmbeddingIndex {
        matrix: path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .ok_or_else(|| LapsError::invalid("embedding path", "no file name"))?,
        dim,
        ids: embeddings.iter().map(|e| e.primitive_id.clone()).collect(),
    };
    write_json(&embedding_index_path(path), &index)
}

/// Reads ids and the raw embedding matrix written by [`write_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let index_path = embedding_index_path(path);
    let index: EmbeddingIndex = read_json(&index_path)?;
    let m = Matrix::read(&sibling(&index_path, &index.matrix))?;
    if m.rows != index.ids.len() || (m.rows > 0 && m.cols != index.dim) {
        return Err(LapsError::Shape(format!(
            "index lists {} ids of dim {}, matrix is {}x{}",
            index.ids.len(),
            index.dim,
            m.rows,
            m.cols
        )));
    }
    Ok((index.ids, m))
}
