//! End-to-end run over a corpus directory.
//!
//! encode -> calibrate -> segment -> embed -> cluster, then ICSS and boundary
//! F1 when their inputs exist. Every intermediate file uses the same format
//! as the corresponding standalone command, so any stage can be re-run by
//! hand from the pipeline's output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationResult};
use crate::clip::{read_keypoint_clip, KeypointClip};
use crate::cluster::{cluster_embeddings, inf_sentinel, purity, ClusterReport};
use crate::config::PipelineConfig;
use crate::detector::{detect, DetectorConfig};
use crate::embedder::{write_embeddings, FrozenEmbedder, REFERENCE_PARAMETERS};
use crate::encoder::MotionEncoder;
use crate::error::{LapsError, Result};
use crate::eval::EvalReport;
use crate::icss::{descriptors, icss, write_audit_csv, IcssReport};
use crate::io::{write_json, FrameEmbeddingSet, GroundTruth, Matrix};
use crate::latent::{write_latent_stream, LatentStream};
use crate::segment::{write_segment_manifest, Primitive, SegmentManifest};
use crate::synth::{majority_label, CorpusManifest, CORPUS_MANIFEST};

/// One input stream: a clip and, optionally, its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStream {
    pub id: String,
    pub clip: PathBuf,
    pub truth: Option<PathBuf>,
}

/// Lists the streams of a corpus directory, sorted by id.
///
/// A `manifest.json` written by the generator is used when present.
/// Otherwise every `*.kpc` file is a stream and `<stem>.gt.json` next to it,
/// if any, is its ground truth.
pub fn discover_corpus(dir: &Path) -> Result<Vec<CorpusStream>> {
    let mut streams = if dir.join(CORPUS_MANIFEST).is_file() {
        CorpusManifest::read(dir)?
            .streams
            .into_iter()
            .map(|e| CorpusStream {
                truth: Some(dir.join(&e.truth)).filter(|p| p.is_file()),
                clip: dir.join(&e.clip),
                id: e.id,
            })
            .collect()
    } else {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| LapsError::io(dir, e))? {
            let path = entry.map_err(|e| LapsError::io(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "kpc") {
                let id = path
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                let truth = dir.join(format!("{id}.gt.json"));
                out.push(CorpusStream {
                    truth: truth.is_file().then_some(truth),
                    clip: path,
                    id,
                });
            }
        }
        out
    };
    streams.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(streams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub id: String,
    pub frames: usize,
    pub steps: usize,
    pub primitives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFailure {
    pub id: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: Option<f64>,
    #[serde(with = "inf_sentinel")]
    pub calinski_harabasz: Option<f64>,
    /// Agreement with ground-truth labels, when every primitive has one.
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// Wall-clock time of the run; the only field that varies between
    /// identical runs.
    pub generated_at_unix_s: u64,
    pub seed: u64,
    pub theta_on: Option<f64>,
    pub theta_off: Option<f64>,
    pub streams: Vec<StreamSummary>,
    pub failed: Vec<StreamFailure>,
    pub n_primitives: usize,
    pub cluster: Option<ClusterSummary>,
    pub eval: Option<EvalReport>,
    pub icss: Option<IcssReport>,
    /// Stages that were skipped and why.
    pub notes: Vec<String>,
}

/// Files a run writes under its output directory.
pub mod layout {
    pub const CONFIG: &str = "config.toml";
    pub const LATENTS: &str = "latents";
    pub const SEGMENTS: &str = "segments";
    pub const CALIBRATION: &str = "calibration.json";
    pub const EMBEDDINGS: &str = "embeddings.bin";
    pub const CLUSTERS: &str = "clusters.json";
    pub const ICSS: &str = "icss.json";
    pub const PAIRS: &str = "pairs.csv";
    pub const F1: &str = "f1.json";
    pub const REPORT: &str = "report.json";
}

struct Encoded {
    id: String,
    clip: KeypointClip,
    stream: LatentStream,
    truth: Option<GroundTruth>,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| LapsError::io(path, e))
}

fn encode_one(
    s: &CorpusStream,
    encoder: &MotionEncoder,
    latents: &Path,
) -> Result<Encoded, StreamFailure> {
    let fail = |stage: &str, e: LapsError| StreamFailure {
        id: s.id.clone(),
        stage: stage.to_string(),
        reason: e.to_string(),
    };
    let clip = read_keypoint_clip(&s.clip).map_err(|e| fail("read", e))?;
    let truth = s
        .truth
        .as_deref()
        .map(GroundTruth::read)
        .transpose()
        .map_err(|e| fail("read", e))?;
    let stream = encoder
        .encode_stream(&clip)
        .map_err(|e| fail("encode", e))?;
    write_latent_stream(&stream, &latents.join(format!("{}.lats", s.id)))
        .map_err(|e| fail("encode", e))?;
    Ok(Encoded {
        id: s.id.clone(),
        clip,
        stream,
        truth,
    })
}

fn segment_one(
    e: &Encoded,
    cfg: &DetectorConfig,
    codebook: u32,
    dir: &Path,
) -> Result<Vec<Primitive>> {
    let prims = detect(&e.stream, cfg, &e.id, e.clip.fps())?;
    let manifest =
        SegmentManifest::new(e.id.clone(), e.clip.fps(), codebook, e.stream.dim(), prims);
    write_segment_manifest(&manifest, &dir.join(format!("{}.json", e.id)))?;
    Ok(manifest.primitives)
}

/// Runs every stage over the corpus in `corpus_dir`, writing intermediate
/// files and `report.json` to `out_dir`.
///
/// Configuration problems fail before any stream is read. Streams that cannot
/// be read, encoded or segmented are listed in `failed`; the rest proceed.
pub fn run_pipeline(
    config: &PipelineConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    frame_embeddings: Option<&Path>,
) -> Result<PipelineReport> {
    config.validate()?;
    let cfg = config.resolved();
    let encoder = MotionEncoder::new(cfg.encoder.clone())?;
    let embedder = FrozenEmbedder::new(cfg.embedder.clone())?;
    let corpus = discover_corpus(corpus_dir)?;
    let frame_set = frame_embeddings.map(FrameEmbeddingSet::read).transpose()?;

    create_dir(out_dir)?;
    let latents = out_dir.join(layout::LATENTS);
    let segments = out_dir.join(layout::SEGMENTS);
    create_dir(&latents)?;
    create_dir(&segments)?;
    std::fs::write(out_dir.join(layout::CONFIG), cfg.to_toml()?)
        .map_err(|e| LapsError::io(out_dir, e))?;

    let mut failed = Vec::new();
    let mut encoded = Vec::new();
    let results: Vec<_> = corpus
        .par_iter()
        .map(|s| encode_one(s, &encoder, &latents))
        .collect();
    for r in results {
        match r {
            Ok(e) => encoded.push(e),
            Err(f) => failed.push(f),
        }
    }

    let mut notes = Vec::new();
    if cfg.embedder.budget_drift() > 0.2 {
        notes.push(format!(
            "embedder has {} parameters, more than 20% away from the reference {}",
            cfg.embedder.parameter_count(),
            REFERENCE_PARAMETERS
        ));
    }
    let mut detector = cfg.detector.clone();
    let mut calibrated: Option<CalibrationResult> = None;
    if cfg.auto_calibrate && !encoded.is_empty() {
        let data: Vec<_> = encoded.iter().map(|e| (&e.clip, &e.stream)).collect();
        let result = calibrate(
            &data,
            detector.alpha,
            detector.hysteresis_ratio,
            &cfg.calibration,
        )?;
        write_json(&out_dir.join(layout::CALIBRATION), &result)?;
        detector.theta_on = result.theta_on;
        calibrated = Some(result);
    }

    let codebook = encoder.codebook_size();
    let per_stream: Vec<_> = encoded
        .par_iter()
        .map(|e| segment_one(e, &detector, codebook, &segments))
        .collect();
    let mut streams = Vec::new();
    let mut primitives = Vec::new();
    let mut labels: Vec<Option<String>> = Vec::new();
    let mut eval = EvalReport::new(&cfg.eval.tolerances_s, cfg.eval.include_endpoints);
    let mut any_truth = false;
    for (e, r) in encoded.iter().zip(per_stream) {
        let prims = match r {
            Ok(p) => p,
            Err(err) => {
                failed.push(StreamFailure {
                    id: e.id.clone(),
                    stage: "segment".into(),
                    reason: err.to_string(),
                });
                continue;
            }
        };
        if let Some(truth) = &e.truth {
            any_truth = true;
            eval.add(&e.id, &prims, &truth.boundaries_s)?;
        }
        labels.extend(prims.iter().map(|p| {
            e.truth
                .as_ref()
                .filter(|t| t.labels.is_some())
                .and_then(|t| majority_label(t, p.start_s, p.end_s))
                .map(str::to_string)
        }));
        streams.push(StreamSummary {
            id: e.id.clone(),
            frames: e.clip.frames(),
            steps: e.stream.len(),
            primitives: prims.len(),
        });
        primitives.extend(prims);
    }
    failed.sort_by(|a, b| a.id.cmp(&b.id));
    let eval = any_truth.then_some(eval);
    if let Some(ev) = &eval {
        write_json(&out_dir.join(layout::F1), ev)?;
    }

    let embeddings = embedder.embed_all(&primitives)?;
    write_embeddings(&embeddings, &out_dir.join(layout::EMBEDDINGS))?;

    let mut cluster = None;
    let mut report_icss = None;
    if primitives.len() < cfg.cluster.k.max(2) {
        notes.push(format!(
            "clustering skipped: {} primitives for k = {}",
            primitives.len(),
            cfg.cluster.k
        ));
    } else {
        let ids: Vec<String> = embeddings.iter().map(|e| e.primitive_id.clone()).collect();
        let m = Matrix::from_rows(&embeddings.iter().map(|e| e.raw.clone()).collect::<Vec<_>>())?;
        let report = cluster_embeddings(&ids, &matrix_f64(&m), &cfg.cluster)?;
        write_json(&out_dir.join(layout::CLUSTERS), &report)?;
        let assigned: Vec<usize> = ids.iter().map(|id| report.assignments[id]).collect();
        let purity = labels
            .iter()
            .cloned()
            .collect::<Option<Vec<String>>>()
            .map(|l| purity(&assigned, &l));
        cluster = Some(ClusterSummary {
            k: report.k,
            inertia: report.inertia,
            silhouette: report.silhouette,
            calinski_harabasz: report.calinski_harabasz,
            purity,
        });
        if let Some(set) = &frame_set {
            report_icss = Some(run_icss(&report, set, cfg.icss.budget, cfg.seed, out_dir)?);
        }
    }
    if frame_set.is_some() && report_icss.is_none() {
        notes.push("ICSS skipped: no clusters".into());
    }

    let report = PipelineReport {
        generated_at_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed: cfg.seed,
        theta_on: calibrated
            .as_ref()
            .map(|c| c.theta_on)
            .or((!encoded.is_empty()).then_some(detector.theta_on)),
        theta_off: (!encoded.is_empty()).then(|| detector.theta_off()),
        streams,
        failed,
        n_primitives: primitives.len(),
        cluster,
        eval,
        icss: report_icss,
        notes,
    };
    write_json(&out_dir.join(layout::REPORT), &report)?;
    Ok(report)
}

fn run_icss(
    clusters: &ClusterReport,
    set: &FrameEmbeddingSet,
    budget: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<IcssReport> {
    let desc = descriptors(set)?;
    let (report, audit) = icss(&desc, &clusters.members(), budget, seed)?;
    write_json(&out_dir.join(layout::ICSS), &report)?;
    write_audit_csv(&audit, &out_dir.join(layout::PAIRS))?;
    Ok(report)
}

/// Widens an `f32` matrix for clustering.
pub fn matrix_f64(m: &Matrix) -> Array2<f64> {
    Array2::from_shape_fn((m.rows, m.cols), |(i, j)| m.data[i * m.cols + j] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthSpec};

    #[test]
    fn empty_corpus_reports_zero_streams() {
        let corpus = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let r = run_pipeline(&PipelineConfig::default(), corpus.path(), out.path(), None).unwrap();
        assert!(r.streams.is_empty() && r.failed.is_empty());
        assert_eq!(r.n_primitives, 0);
        assert!(out.path().join(layout::REPORT).is_file());
    }

    #[test]
    fn bad_config_fails_before_reading() {
        let mut cfg = PipelineConfig::default();
        cfg.embedder.input_dim = 3;
        let err = run_pipeline(
            &cfg,
            Path::new("/nonexistent"),
            Path::new("/nonexistent/out"),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, LapsError::Config(_)));
    }

    #[test]
    fn broken_stream_is_isolated() {
        let corpus = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            duration_s: 20.0,
            ..Default::default()
        };
        generate_corpus(&spec, 2, corpus.path()).unwrap();
        std::fs::write(corpus.path().join("stream_001.kpc"), b"garbage").unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.embedder.layers = 1;
        let r = run_pipeline(&cfg, corpus.path(), out.path(), None).unwrap();
        assert_eq!(r.streams.len(), 1);
        assert_eq!(r.failed.len(), 1);
        assert_eq!(r.failed[0].id, "stream_001");
        assert!(r.eval.is_some());
        assert!(out.path().join("segments/stream_000.json").is_file());
    }

    #[test]
    fn discovery_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let clip = KeypointClip::new(2, 1, 30.0, vec![0.0; 4]).unwrap();
        crate::clip::write_keypoint_clip(&clip, &dir.path().join("b.kpc")).unwrap();
        crate::clip::write_keypoint_clip(&clip, &dir.path().join("a.kpc")).unwrap();
        GroundTruth::new(vec![], None)
            .unwrap()
            .write(&dir.path().join("a.gt.json"))
            .unwrap();
        let found = discover_corpus(dir.path()).unwrap();
        assert_eq!(
            found.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            vec!["a", "b"]
        );
        assert!(found[0].truth.is_some() && found[1].truth.is_none());
    }
}
