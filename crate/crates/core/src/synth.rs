//! Synthetic keypoint streams with planted actions and known boundaries.
//!
//! A stream alternates between idle phases, where points sit still under
//! Gaussian jitter, and action phases, where a group of points follows one of
//! `n_actions` fixed motion templates. Templates depend only on their index,
//! so every stream of a corpus shares the same action vocabulary. Each action
//! leaves the points where it ended.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{write_keypoint_clip, KeypointClip};
use crate::error::{LapsError, Result};
use crate::io::{read_json, write_json, FrameEmbeddingSet, GroundTruth, Matrix};
use crate::seed::{derive_seed, keyed_rng};
use crate::segment::Primitive;

pub const IDLE_LABEL: &str = "idle";

pub fn action_label(template: usize) -> String {
    format!("action_{template}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    Idle { duration_s: f64 },
    Action { template: usize, duration_s: f64 },
}

impl Phase {
    pub fn duration_s(&self) -> f64 {
        match self {
            Phase::Idle { duration_s } | Phase::Action { duration_s, .. } => *duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_points: usize,
    pub fps: f32,
    pub n_actions: usize,
    pub idle_jitter_sigma: f64,
    pub action_amplitude: f64,
    pub seed: u64,
    /// Target length of a randomly scheduled stream.
    pub duration_s: f64,
    /// `[min, max]` idle phase length.
    pub idle_s: [f64; 2],
    /// `[min, max]` action phase length.
    pub action_s: [f64; 2],
    /// Fixed phase list; replaces the random schedule when present.
    pub schedule: Option<Vec<Phase>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_points: 16,
            fps: 30.0,
            n_actions: 3,
            idle_jitter_sigma: 0.2,
            action_amplitude: 30.0,
            seed: 0,
            duration_s: 120.0,
            idle_s: [3.0, 5.0],
            action_s: [2.0, 4.0],
            schedule: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LapsError::Config(format!("synth spec: {m}")));
        if self.n_points < 4 {
            return bad(format!("n_points must be >= 4, got {}", self.n_points));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.idle_jitter_sigma >= 0.0 && self.action_amplitude > 5.0 * self.idle_jitter_sigma)
        {
            return bad("action_amplitude must exceed 5 x idle_jitter_sigma".into());
        }
        for (name, [lo, hi]) in [("idle_s", self.idle_s), ("action_s", self.action_s)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} must be a positive [min, max] range"));
            }
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive".into());
        }
        if let Some(schedule) = &self.schedule {
            if schedule.is_empty() {
                return bad("schedule is empty".into());
            }
            for p in schedule {
                if !(p.duration_s() > 0.0 && p.duration_s().is_finite()) {
                    return bad("phase durations must be positive".into());
                }
                if let Phase::Action { template, .. } = p {
                    if *template >= self.n_actions {
                        return bad(format!(
                            "template {template} but only {} actions",
                            self.n_actions
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LapsError::io(path, e))?;
        let spec: SynthSpec = toml::from_str(&text)
            .map_err(|e| LapsError::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// An action phase as planted in the stream, in frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAction {
    pub template: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub clip: KeypointClip,
    pub truth: GroundTruth,
    pub actions: Vec<PlantedAction>,
}

/// Motion signature of one template: a main oscillation along `direction`
/// and a faster, weaker one across it. Template `j` drives the `j`-th group
/// of points at full weight and the rest at a quarter.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub direction: f64,
    pub frequency_hz: f64,
    pub weights: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Template {
    pub fn new(j: usize, n_actions: usize, n_points: usize) -> Self {
        let share = j as f64 / n_actions.max(1) as f64;
        Template {
            direction: PI * share,
            frequency_hz: 1.0 + 0.6 * (j % 3) as f64,
            weights: (0..n_points)
                .map(|n| {
                    if n * n_actions.max(1) / n_points == j {
                        1.0
                    } else {
                        0.25
                    }
                })
                .collect(),
            phases: (0..n_points)
                .map(|n| PI * n as f64 / n_points as f64)
                .collect(),
        }
    }

    /// Displacement of point `n` at `tau` seconds into the action.
    pub fn displacement(&self, n: usize, tau: f64, amplitude: f64) -> [f64; 2] {
        let w = 2.0 * PI * self.frequency_hz;
        let main = amplitude * self.weights[n] * (w * tau).sin();
        let cross = 0.5
            * amplitude
            * self.weights[n]
            * ((1.7 * w * tau + self.phases[n]).sin() - self.phases[n].sin());
        let (s, c) = self.direction.sin_cos();
        [main * c - cross * s, main * s + cross * c]
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_schedule(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Phase> {
    if spec.n_actions == 0 {
        return vec![Phase::Idle {
            duration_s: spec.duration_s,
        }];
    }
    let mut phases = vec![Phase::Idle {
        duration_s: uniform_in(rng, spec.idle_s),
    }];
    let mut total = phases[0].duration_s();
    while total < spec.duration_s {
        let action = Phase::Action {
            template: rng.random_range(0..spec.n_actions),
            duration_s: uniform_in(rng, spec.action_s),
        };
        let idle = Phase::Idle {
            duration_s: uniform_in(rng, spec.idle_s),
        };
        total += action.duration_s() + idle.duration_s();
        phases.push(action);
        phases.push(idle);
    }
    phases
}

/// Generates one stream. Deterministic in `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthStream> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, "synth.stream", 0);
    let schedule = match &spec.schedule {
        Some(s) => s.clone(),
        None => random_schedule(spec, &mut rng),
    };
    let fps = spec.fps as f64;
    let n = spec.n_points;
    let templates: Vec<Template> = (0..spec.n_actions)
        .map(|j| Template::new(j, spec.n_actions, n))
        .collect();
    let jitter =
        Normal::new(0.0, spec.idle_jitter_sigma).map_err(|e| LapsError::Config(e.to_string()))?;

    let mut rest: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                rng.random_range(200.0..440.0),
                rng.random_range(140.0..340.0),
            ]
        })
        .collect();
    let mut tracks = Vec::new();
    let mut actions = Vec::new();
    let mut boundaries = Vec::new();
    let mut labels = Vec::new();
    let mut frame = 0usize;
    for (i, phase) in schedule.iter().enumerate() {
        let len = ((phase.duration_s() * fps).round() as usize).max(1);
        if i > 0 {
            boundaries.push(frame as f64 / fps);
        }
        match phase {
            Phase::Idle { .. } => {
                labels.push(IDLE_LABEL.to_string());
                for _ in 0..len {
                    for p in &rest {
                        tracks.push((p[0] + jitter.sample(&mut rng)) as f32);
                        tracks.push((p[1] + jitter.sample(&mut rng)) as f32);
                    }
                }
            }
            Phase::Action { template, .. } => {
                labels.push(action_label(*template));
                let t = &templates[*template];
                let amplitude = spec.action_amplitude * rng.random_range(0.8..1.2);
                for f in 0..len {
                    let tau = f as f64 / fps;
                    for (k, p) in rest.iter().enumerate() {
                        let d = t.displacement(k, tau, amplitude);
                        tracks.push((p[0] + d[0] + jitter.sample(&mut rng)) as f32);
                        tracks.push((p[1] + d[1] + jitter.sample(&mut rng)) as f32);
                    }
                }
                let tau = len as f64 / fps;
                for (k, p) in rest.iter_mut().enumerate() {
                    let d = t.displacement(k, tau, amplitude);
                    p[0] += d[0];
                    p[1] += d[1];
                }
                actions.push(PlantedAction {
                    template: *template,
                    start_frame: frame,
                    end_frame: frame + len,
                });
            }
        }
        frame += len;
    }
    // Back-to-back idle phases share no boundary.
    let mut kept_b = Vec::new();
    let mut kept_l = vec![labels[0].clone()];
    for (b, l) in boundaries.into_iter().zip(labels.into_iter().skip(1)) {
        if kept_l.last() == Some(&l) && l == IDLE_LABEL {
            continue;
        }
        kept_b.push(b);
        kept_l.push(l);
    }
    let clip = KeypointClip::new(frame.max(2), n, spec.fps, pad_frames(tracks, frame, n))?;
    let truth = GroundTruth::new(kept_b, Some(kept_l))?;
    Ok(SynthStream {
        clip,
        truth,
        actions,
    })
}

fn pad_frames(mut tracks: Vec<f32>, frames: usize, n: usize) -> Vec<f32> {
    if frames < 2 {
        let last = tracks[tracks.len() - 2 * n..].to_vec();
        tracks.extend(last);
    }
    tracks
}

/// Label of the ground-truth interval that overlaps `[start_s, end_s)` most.
pub fn majority_label(truth: &GroundTruth, start_s: f64, end_s: f64) -> Option<&str> {
    truth
        .intervals()
        .into_iter()
        .map(|(a, b, l)| (end_s.min(b) - start_s.max(a), l))
        .filter(|(o, _)| *o > 0.0)
        .fold(None, |best: Option<(f64, &str)>, (o, l)| match best {
            Some((bo, _)) if bo >= o => best,
            _ => Some((o, l)),
        })
        .map(|(_, l)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: u64,
    pub clip: String,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: SynthSpec,
    pub streams: Vec<CorpusEntry>,
}

pub const CORPUS_MANIFEST: &str = "manifest.json";

impl CorpusManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(CORPUS_MANIFEST))
    }
}

/// Seed of stream `i` in a corpus generated from `spec`.
pub fn stream_seed(spec: &SynthSpec, i: usize) -> u64 {
    derive_seed(spec.seed, "synth.corpus", i as u64)
}

/// Writes `n` streams as `stream_XXX.kpc` / `stream_XXX.gt.json` plus a
/// manifest into `dir`.
pub fn generate_corpus(spec: &SynthSpec, n: usize, dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| LapsError::io(dir, e))?;
    let streams = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = stream_seed(spec, i);
            let s = generate(&SynthSpec {
                seed,
                ..spec.clone()
            })?;
            let id = format!("stream_{i:03}");
            let entry = CorpusEntry {
                seed,
                clip: format!("{id}.kpc"),
                truth: format!("{id}.gt.json"),
                id,
            };
            write_keypoint_clip(&s.clip, &dir.join(&entry.clip))?;
            s.truth.write(&dir.join(&entry.truth))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest {
        spec: spec.clone(),
        streams,
    };
    write_json(&dir.join(CORPUS_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Paths of a corpus entry.
pub fn entry_paths(dir: &Path, e: &CorpusEntry) -> (PathBuf, PathBuf) {
    (dir.join(&e.clip), dir.join(&e.truth))
}

/// Stand-in frame features for ICSS: every primitive takes the fixed random
/// direction of its majority ground-truth label, perturbed per frame by
/// isotropic Gaussian noise of scale `noise`.
pub fn synthetic_frame_embeddings(
    primitives: &[(Primitive, &GroundTruth)],
    dim: usize,
    frames_per_primitive: usize,
    noise: f64,
    seed: u64,
) -> Result<FrameEmbeddingSet> {
    if dim == 0 || frames_per_primitive == 0 {
        return Err(LapsError::Config(
            "frame embedding dim and count must be >= 1".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let direction = |label: &str| -> Vec<f64> {
        let mut rng = keyed_rng(seed, &format!("synth.descriptor.{label}"), 0);
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    };
    let mut frames = std::collections::BTreeMap::new();
    for (i, (p, truth)) in primitives.iter().enumerate() {
        let base = direction(majority_label(truth, p.start_s, p.end_s).unwrap_or(IDLE_LABEL));
        let mut rng = keyed_rng(seed, "synth.frames", i as u64);
        let data = (0..frames_per_primitive)
            .flat_map(|_| {
                base.iter()
                    .map(|b| (b + noise * normal.sample(&mut rng) / (dim as f64).sqrt()) as f32)
                    .collect::<Vec<_>>()
            })
            .collect();
        frames.insert(p.id(), Matrix::new(frames_per_primitive, dim, data)?);
    }
    FrameEmbeddingSet::new(frames)
}
