//! Latent action energy and the online hysteresis segmenter.
//!
//! Energy sample `k` is the L2 distance between latent steps `k` and `k + 1`,
//! so it belongs to latent step `k + 1`: a segment spanning energy samples
//! `[a, b)` covers latent steps `[a + 1, b + 1)`.
//!
//! The controller is a two-state machine over the EMA-smoothed energy `y`:
//!
//! * OFF to ON once `y > theta_on` has held for `up_count` consecutive
//!   samples; the segment starts at the first sample of that run.
//! * ON to OFF once `y < theta_off` has held for `down_count` consecutive
//!   samples; the segment ends (exclusive) at the first sample of that run.
//! * Any sample that does not satisfy a run's condition resets that run, so
//!   values inside `[theta_off, theta_on]` reset both counters.
//!
//! Segments shorter than `min_len` samples are dropped. A stream that ends
//! while ON yields a final segment flagged as truncated.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{LapsError, Result};
use crate::latent::LatentStream;
use crate::segment::{Parts, Primitive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// EMA factor in `(0, 1]`; 1 disables smoothing.
    pub alpha: f64,
    pub theta_on: f64,
    /// `theta_off = hysteresis_ratio * theta_on`.
    pub hysteresis_ratio: f64,
    pub up_count: usize,
    pub down_count: usize,
    pub min_len: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.2,
            theta_on: 1.0,
            hysteresis_ratio: 0.5,
            up_count: 3,
            down_count: 12,
            min_len: 2,
        }
    }
}

impl DetectorConfig {
    pub fn theta_off(&self) -> f64 {
        self.hysteresis_ratio * self.theta_on
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LapsError::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.hysteresis_ratio > 0.0 && self.hysteresis_ratio <= 1.0) {
            return Err(LapsError::Config(format!(
                "hysteresis ratio must lie in (0, 1], got {}",
                self.hysteresis_ratio
            )));
        }
        if !self.theta_on.is_finite() {
            return Err(LapsError::Config("theta_on must be finite".into()));
        }
        if self.up_count == 0 || self.down_count == 0 {
            return Err(LapsError::Config("up/down counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// L2 distance between two latent vectors, accumulated in `f64`.
pub fn step_energy(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = y as f64 - x as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Latent action energy `E[k] = ||z_{k+1} - z_k||`, length `T_z - 1`.
pub fn latent_action_energy(stream: &LatentStream) -> Result<Vec<f64>> {
    if stream.len() < 2 {
        return Err(LapsError::TooShort(format!(
            "energy needs at least 2 latent steps, stream has {}",
            stream.len()
        )));
    }
    Ok((1..stream.len())
        .map(|t| step_energy(stream.vector(t - 1), stream.vector(t)))
        .collect())
}

#[inline]
pub fn ema_update(prev: f64, sample: f64, alpha: f64) -> f64 {
    alpha * sample + (1.0 - alpha) * prev
}

/// Causal exponential moving average seeded with `y0`.
pub fn ema_smooth(energy: &[f64], alpha: f64, y0: f64) -> Vec<f64> {
    energy
        .iter()
        .scan(y0, |y, &e| {
            *y = ema_update(*y, e, alpha);
            Some(*y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Off,
    On,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub mode: Mode,
    pub y_prev: Option<f64>,
    pub run_above: usize,
    pub run_below: usize,
    /// First sample of the current above-threshold run, or of the active segment.
    pub pending_start: Option<usize>,
}

impl Default for DetectorState {
    fn default() -> Self {
        DetectorState {
            mode: Mode::Off,
            y_prev: None,
            run_above: 0,
            run_below: 0,
            pending_start: None,
        }
    }
}

/// Half-open interval of energy samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub truncated: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Feeds smoothed sample `y` at index `t` through the controller.
pub fn step(
    state: &DetectorState,
    y: f64,
    t: usize,
    cfg: &DetectorConfig,
) -> (DetectorState, Option<Segment>) {
    let mut next = state.clone();
    next.y_prev = Some(y);
    let mut emitted = None;
    match state.mode {
        Mode::Off => {
            next.run_below = 0;
            if y > cfg.theta_on {
                if next.run_above == 0 {
                    next.pending_start = Some(t);
                }
                next.run_above += 1;
                if next.run_above >= cfg.up_count {
                    next.mode = Mode::On;
                    next.run_above = 0;
                }
            } else {
                next.run_above = 0;
                next.pending_start = None;
            }
        }
        Mode::On => {
            next.run_above = 0;
            if y < cfg.theta_off() {
                next.run_below += 1;
                if next.run_below >= cfg.down_count {
                    let start = state.pending_start.unwrap_or(t);
                    let end = t + 1 - next.run_below;
                    if end - start >= cfg.min_len {
                        emitted = Some(Segment {
                            start,
                            end,
                            truncated: false,
                        });
                    }
                    next.mode = Mode::Off;
                    next.run_below = 0;
                    next.pending_start = None;
                }
            } else {
                next.run_below = 0;
            }
        }
    }
    (next, emitted)
}

/// Closes a segment left open when the stream ends after `len` samples.
pub fn finish(state: &DetectorState, len: usize, cfg: &DetectorConfig) -> Option<Segment> {
    match (state.mode, state.pending_start) {
        (Mode::On, Some(start)) if len - start >= cfg.min_len => Some(Segment {
            start,
            end: len,
            truncated: true,
        }),
        _ => None,
    }
}

/// Runs the controller over an already smoothed signal.
pub fn segment_smoothed(y: &[f64], cfg: &DetectorConfig) -> Vec<Segment> {
    let mut state = DetectorState::default();
    let mut out = Vec::new();
    for (t, &v) in y.iter().enumerate() {
        let (next, seg) = step(&state, v, t, cfg);
        state = next;
        out.extend(seg);
    }
    out.extend(finish(&state, y.len(), cfg));
    out
}

/// Smooths a raw energy signal (seeded with its first sample) and segments it.
pub fn segment_energy(energy: &[f64], cfg: &DetectorConfig) -> Vec<Segment> {
    let Some(&y0) = energy.first() else {
        return Vec::new();
    };
    segment_smoothed(&ema_smooth(energy, cfg.alpha, y0), cfg)
}

/// One-shot detection over a whole latent stream.
pub fn detect(
    stream: &LatentStream,
    cfg: &DetectorConfig,
    source_id: &str,
    fps: f64,
) -> Result<Vec<Primitive>> {
    cfg.validate()?;
    let energy = latent_action_energy(stream)?;
    segment_energy(&energy, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            Primitive::from_stream(
                source_id,
                i,
                stream,
                s.start + 1..s.end + 1,
                fps,
                s.truncated,
            )
        })
        .collect()
}

/// Incremental counterpart of [`segment_energy`]: one energy sample at a time.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    cfg: DetectorConfig,
    state: DetectorState,
    t: usize,
}

impl OnlineDetector {
    pub fn new(cfg: DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OnlineDetector {
            cfg,
            state: DetectorState::default(),
            t: 0,
        })
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    /// Samples consumed so far.
    pub fn position(&self) -> usize {
        self.t
    }

    pub fn push(&mut self, energy: f64) -> Option<Segment> {
        let prev = self.state.y_prev.unwrap_or(energy);
        let y = ema_update(prev, energy, self.cfg.alpha);
        let (next, seg) = step(&self.state, y, self.t, &self.cfg);
        self.state = next;
        self.t += 1;
        seg
    }

    pub fn finish(&self) -> Option<Segment> {
        finish(&self.state, self.t, &self.cfg)
    }
}

/// Streaming detector over latent steps that emits finished [`Primitive`]s.
///
/// Only the steps of a candidate or active segment are buffered.
#[derive(Debug, Clone)]
pub struct StreamSegmenter {
    source_id: String,
    fps: f64,
    dim: usize,
    detector: OnlineDetector,
    prev: Option<Vec<f32>>,
    /// `(code, frame, vector)` for latent steps `buffer_start..`.
    buffer: VecDeque<(u32, u32, Vec<f32>)>,
    buffer_start: usize,
    steps: usize,
    emitted: usize,
}

impl StreamSegmenter {
    pub fn new(cfg: DetectorConfig, source_id: &str, fps: f64, dim: usize) -> Result<Self> {
        Ok(StreamSegmenter {
            source_id: source_id.to_string(),
            fps,
            dim,
            detector: OnlineDetector::new(cfg)?,
            prev: None,
            buffer: VecDeque::new(),
            buffer_start: 0,
            steps: 0,
            emitted: 0,
        })
    }

    pub fn push(&mut self, code: u32, frame: u32, vector: &[f32]) -> Result<Option<Primitive>> {
        if vector.len() != self.dim {
            return Err(LapsError::Shape(format!(
                "expected latent of dim {}, got {}",
                self.dim,
                vector.len()
            )));
        }
        self.buffer.push_back((code, frame, vector.to_vec()));
        self.steps += 1;
        let seg = match self.prev.replace(vector.to_vec()) {
            None => None,
            Some(prev) => self.detector.push(step_energy(&prev, vector)),
        };
        let out = match seg {
            Some(s) => Some(self.cut(s)?),
            None => None,
        };
        let keep_from = match self.detector.state().pending_start {
            Some(a) => a + 1,
            None => self.steps,
        };
        while self.buffer_start < keep_from && !self.buffer.is_empty() {
            self.buffer.pop_front();
            self.buffer_start += 1;
        }
        Ok(out)
    }

    /// Flushes a segment still open at end of stream.
    pub fn finish(mut self) -> Result<Option<Primitive>> {
        match self.detector.finish() {
            Some(s) => Ok(Some(self.cut(s)?)),
            None => Ok(None),
        }
    }

    fn cut(&mut self, seg: Segment) -> Result<Primitive> {
        let (lo, hi) = (seg.start + 1, seg.end + 1);
        if lo < self.buffer_start {
            return Err(LapsError::Internal(format!(
                "segment start {lo} already evicted (buffer starts at {})",
                self.buffer_start
            )));
        }
        let take = |i: usize| self.buffer.get(i - self.buffer_start);
        let rows: Vec<_> = (lo..hi).filter_map(take).collect();
        if rows.len() != hi - lo {
            return Err(LapsError::Internal(format!(
                "segment {lo}..{hi} not fully buffered"
            )));
        }
        let parts = Parts {
            codes: rows.iter().map(|r| r.0).collect(),
            step_frames: rows.iter().map(|r| r.1).collect(),
            dim: self.dim,
            vectors: rows.iter().flat_map(|r| r.2.iter().copied()).collect(),
        };
        let next_frame = take(hi).map(|r| r.1);
        let p = Primitive::from_parts(
            &self.source_id,
            self.emitted,
            lo..hi,
            parts,
            next_frame,
            self.fps,
            seg.truncated,
        )?;
        self.emitted += 1;
        Ok(p)
    }
}
