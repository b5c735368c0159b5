//! Unsupervised choice of the activation threshold.
//!
//! A cheap proxy (mean keypoint speed) is split into motion / non-motion
//! pseudo-labels with Otsu's method. The smoothed latent energy is then
//! thresholded at a grid of candidates and the candidate whose framewise F1
//! against the pseudo-labels is highest becomes `theta_on`.

use serde::{Deserialize, Serialize};

use crate::clip::KeypointClip;
use crate::detector::{ema_smooth, latent_action_energy};
use crate::error::{LapsError, Result};
use crate::latent::LatentStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub otsu_bins: usize,
    pub n_candidates: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            otsu_bins: 256,
            n_candidates: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_on: f64,
    pub theta_off: f64,
    pub hysteresis_ratio: f64,
    pub f1_at_best: f64,
    /// Proxy threshold that produced the pseudo-labels, when known.
    pub otsu_threshold: Option<f64>,
    pub sweep_table: Vec<SweepPoint>,
}

/// Mean keypoint speed per frame step, length `T - 1`.
pub fn velocity_proxy_energy(clip: &KeypointClip) -> Vec<f64> {
    let v = clip.velocities();
    let n = clip.points() as f64;
    (0..v.steps)
        .map(|t| {
            v.step(t)
                .chunks_exact(2)
                .map(|d| (d[0] as f64).hypot(d[1] as f64))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Otsu's threshold over a `bins`-bin histogram spanning `[min, max]`.
///
/// Candidate thresholds are the interior bin edges; class means come from
/// the per-bin sums of the actual samples. The first edge with the largest
/// between-class variance wins. A constant signal returns its value.
pub fn otsu_threshold(signal: &[f64], bins: usize) -> Result<f64> {
    if signal.is_empty() {
        return Err(LapsError::invalid("otsu input", "empty signal"));
    }
    if bins < 2 {
        return Err(LapsError::invalid(
            "otsu input",
            format!("need >= 2 bins, got {bins}"),
        ));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(LapsError::NonFinite("otsu input"));
    }
    let lo = signal.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(lo);
    }
    let width = (hi - lo) / bins as f64;
    let mut count = vec![0usize; bins];
    let mut sum = vec![0.0f64; bins];
    for &v in signal {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        count[b] += 1;
        sum[b] += v;
    }
    let total = signal.len() as f64;
    let total_sum: f64 = sum.iter().sum();
    let (mut n0, mut s0) = (0usize, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 1usize);
    for k in 1..bins {
        n0 += count[k - 1];
        s0 += sum[k - 1];
        let n1 = signal.len() - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (w0, w1) = (n0 as f64 / total, n1 as f64 / total);
        let gap = s0 / n0 as f64 - (total_sum - s0) / n1 as f64;
        let between = w0 * w1 * gap * gap;
        if between > best.0 {
            best = (between, k);
        }
    }
    Ok(lo + best.1 as f64 * width)
}

/// `label[t] = proxy[t] > tau`.
pub fn pseudo_labels(proxy: &[f64], tau: f64) -> Vec<bool> {
    proxy.iter().map(|&p| p > tau).collect()
}

/// Framewise F1 of `pred` against `truth`, with label `true` as positive.
pub fn binary_f1(pred: impl IntoIterator<Item = bool>, truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, &t) in pred.into_iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// `n` quantiles of `values` at evenly spaced levels from 0 to 1, deduplicated.
pub fn candidate_grid(values: &[f64], n: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() || n == 0 {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| {
            let pos = if n == 1 {
                0
            } else {
                (i * last + (n - 1) / 2) / (n - 1)
            };
            sorted[pos]
        })
        .collect();
    grid.dedup();
    grid
}

/// Picks the candidate maximizing framewise F1; ties go to the smallest.
pub fn sweep_theta_on(
    smoothed: &[f64],
    labels: &[bool],
    candidates: &[f64],
    ratio: f64,
) -> Result<CalibrationResult> {
    if smoothed.len() != labels.len() {
        return Err(LapsError::Shape(format!(
            "{} energy samples vs {} pseudo-labels",
            smoothed.len(),
            labels.len()
        )));
    }
    if candidates.is_empty() {
        return Err(LapsError::invalid("threshold sweep", "no candidates"));
    }
    if !labels.iter().any(|&l| l) {
        return Err(LapsError::DegenerateLabels);
    }
    let mut grid = candidates.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let sweep_table: Vec<SweepPoint> = grid
        .iter()
        .map(|&theta| SweepPoint {
            theta,
            f1: binary_f1(smoothed.iter().map(|&y| y > theta), labels),
        })
        .collect();
    let best = sweep_table.iter().fold(
        sweep_table[0],
        |best, p| if p.f1 > best.f1 { *p } else { best },
    );
    Ok(CalibrationResult {
        theta_on: best.theta,
        theta_off: ratio * best.theta,
        hysteresis_ratio: ratio,
        f1_at_best: best.f1,
        otsu_threshold: None,
        sweep_table,
    })
}

/// Smoothed energy of a stream plus the proxy sampled at each energy sample's frame.
///
/// Energy sample `k` belongs to latent step `k + 1`, whose source frame
/// indexes the per-frame proxy.
pub fn aligned_signals(
    clip: &KeypointClip,
    stream: &LatentStream,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let energy = latent_action_energy(stream)?;
    let smoothed = ema_smooth(&energy, alpha, energy[0]);
    let proxy = velocity_proxy_energy(clip);
    let sampled = stream.frame_of_step()[1..]
        .iter()
        .map(|&f| {
            proxy.get(f as usize).copied().ok_or_else(|| {
                LapsError::Shape(format!(
                    "latent frame {f} outside clip of {} frames",
                    clip.frames()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((smoothed, sampled))
}

/// Dataset-level calibration over encoded clips.
///
/// Otsu runs on the pooled per-frame proxy of every clip; the sweep runs on
/// the pooled aligned samples. Both only depend on the multiset of samples,
/// so the result does not depend on clip order.
pub fn calibrate(
    data: &[(&KeypointClip, &LatentStream)],
    alpha: f64,
    ratio: f64,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    if data.is_empty() {
        return Err(LapsError::invalid("calibration", "no clips"));
    }
    let pooled_proxy: Vec<f64> = data
        .iter()
        .flat_map(|(c, _)| velocity_proxy_energy(c))
        .collect();
    let tau = otsu_threshold(&pooled_proxy, cfg.otsu_bins)?;
    let mut smoothed = Vec::new();
    let mut labels = Vec::new();
    for (clip, stream) in data {
        let (y, proxy) = aligned_signals(clip, stream, alpha)?;
        smoothed.extend(y);
        labels.extend(pseudo_labels(&proxy, tau));
    }
    let candidates = candidate_grid(&smoothed, cfg.n_candidates);
    let mut result = sweep_theta_on(&smoothed, &labels, &candidates, ratio)?;
    result.otsu_threshold = Some(tau);
    Ok(result)
}
