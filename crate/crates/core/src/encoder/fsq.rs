//! Finite scalar quantization.
//!
//! Each latent dimension `i` is squashed with `tanh` onto `(-(L_i - 1) / 2,
//! (L_i - 1) / 2)`, shifted by half a step when `L_i` is even so the grid stays
//! integer-valued, then rounded. The rounded values are integers in
//! `[-L_i / 2, (L_i - 1) / 2]`; shifting by `L_i / 2` gives the level index,
//! and the level indices read as a mixed-radix number (dimension 0 most
//! significant) give the code.

use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};

/// Widens the tanh range slightly so the outermost levels are reachable.
const EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsqConfig {
    pub levels: Vec<u32>,
    /// Dimensionality of the prototype vectors the codes are lifted into.
    pub latent_dim: usize,
}

impl Default for FsqConfig {
    fn default() -> Self {
        FsqConfig {
            levels: vec![8, 8, 8, 4],
            latent_dim: 768,
        }
    }
}

impl FsqConfig {
    pub fn codebook_size(&self) -> u64 {
        self.levels.iter().map(|&l| l as u64).product()
    }
}

/// Output of [`Fsq::quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    /// Continuous tanh-bounded values, before rounding.
    pub bounded: Vec<f64>,
    /// Rounded grid values.
    pub grid: Vec<f64>,
    pub code: u32,
}

#[derive(Debug, Clone)]
pub struct Fsq {
    levels: Vec<u32>,
    half_width: Vec<f64>,
    offset: Vec<f64>,
    shift: Vec<f64>,
    radix: Vec<u32>,
    size: u32,
}

impl Fsq {
    pub fn new(levels: &[u32]) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&l| l < 2) {
            return Err(LapsError::invalid(
                "fsq levels",
                format!("{levels:?}: every level must be >= 2"),
            ));
        }
        let size: u64 = levels.iter().map(|&l| l as u64).product();
        let size = u32::try_from(size)
            .map_err(|_| LapsError::invalid("fsq levels", "codebook does not fit in u32"))?;
        let half_width: Vec<f64> = levels
            .iter()
            .map(|&l| (l - 1) as f64 * (1.0 + EPS) / 2.0)
            .collect();
        let offset: Vec<f64> = levels
            .iter()
            .map(|&l| if l % 2 == 0 { 0.5 } else { 0.0 })
            .collect();
        let shift = offset
            .iter()
            .zip(&half_width)
            .map(|(o, h)| (o / h).atanh())
            .collect();
        let mut radix = vec![1u32; levels.len()];
        for i in (0..levels.len() - 1).rev() {
            radix[i] = radix[i + 1] * levels[i + 1];
        }
        Ok(Fsq {
            levels: levels.to_vec(),
            half_width,
            offset,
            shift,
            radix,
            size,
        })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn dims(&self) -> usize {
        self.levels.len()
    }

    pub fn codebook_size(&self) -> u32 {
        self.size
    }

    /// The tanh stage: maps any finite input into the open grid range.
    pub fn bound(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v + self.shift[i]).tanh() * self.half_width[i] - self.offset[i])
            .collect()
    }

    /// The rounding stage: nearest grid point and its code.
    ///
    /// On-grid input is a fixed point.
    pub fn snap(&self, bounded: &[f64]) -> (Vec<f64>, u32) {
        let mut code = 0;
        let grid = bounded
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let half = (self.levels[i] / 2) as f64;
                let top = (self.levels[i] - 1) as f64 - half;
                let g = b.round().clamp(-half, top);
                code += (g + half) as u32 * self.radix[i];
                g
            })
            .collect();
        (grid, code)
    }

    pub fn quantize(&self, x: &[f64]) -> Quantized {
        let bounded = self.bound(x);
        let (grid, code) = self.snap(&bounded);
        Quantized {
            bounded,
            grid,
            code,
        }
    }

    pub fn level_indices(&self, code: u32) -> Vec<u32> {
        self.radix
            .iter()
            .zip(&self.levels)
            .map(|(&r, &l)| (code / r) % l)
            .collect()
    }

    pub fn code_of(&self, indices: &[u32]) -> u32 {
        indices.iter().zip(&self.radix).map(|(&i, &r)| i * r).sum()
    }

    /// Grid point of `code` in the bounded space.
    pub fn grid_point(&self, code: u32) -> Vec<f64> {
        self.level_indices(code)
            .iter()
            .zip(&self.levels)
            .map(|(&i, &l)| i as f64 - (l / 2) as f64)
            .collect()
    }
}
