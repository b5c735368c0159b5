use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use laps::calibration::calibrate;
use laps::clip::read_keypoint_clip;
use laps::cluster::{cluster_embeddings, ClusterReport};
use laps::config::PipelineConfig;
use laps::detector::{detect, ema_smooth, segment_smoothed, DetectorConfig};
use laps::embedder::{read_embeddings, write_embeddings, FrozenEmbedder};
use laps::encoder::MotionEncoder;
use laps::error::{LapsError, Result};
use laps::eval::EvalReport;
use laps::icss::{descriptors, icss, write_audit_csv};
use laps::io::{read_json, write_json, FrameEmbeddingSet, GroundTruth};
use laps::latent::{read_latent_stream, write_latent_stream};
use laps::pipeline::{discover_corpus, matrix_f64, run_pipeline};
use laps::segment::{
    read_segment_manifest, read_segment_manifest_with, write_segment_manifest, SegmentManifest,
};
use laps::synth::{generate_corpus, SynthSpec};
use rayon::prelude::*;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "laps",
    version,
    about = "Action primitive segmentation of keypoint streams"
)]
pub struct Cli {
    /// Seed for every randomized stage; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted actions.
    Synth(SynthArgs),
    /// Encode a keypoint clip into a latent stream.
    Encode(EncodeArgs),
    /// Choose theta_on from a directory of clips.
    Calibrate(CalibrateArgs),
    /// Cut a latent stream (or a raw signal) into primitives.
    Segment(SegmentArgs),
    /// Embed segmented primitives with the frozen transformer.
    Embed(EmbedArgs),
    /// Cluster primitive embeddings.
    Cluster(ClusterArgs),
    /// Intra-cluster semantic similarity from frame embeddings.
    Icss(IcssArgs),
    /// Boundary F1 of predicted segments against ground truth.
    Eval(EvalArgs),
    /// Run every stage over a corpus directory.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator spec; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    clips: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Latent stream to segment.
    #[arg(
        long,
        required_unless_present = "signal_file",
        conflicts_with = "signal_file"
    )]
    input: Option<PathBuf>,
    /// JSON array of raw energy samples to segment instead of a latent stream.
    #[arg(long)]
    signal_file: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration result to take theta_on and the ratio from.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    theta_on: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    up: Option<usize>,
    #[arg(long)]
    down: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    /// Frame rate of the source clip.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Stream id used in primitive ids; defaults to the input file stem.
    #[arg(long)]
    source_id: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Segment manifests; repeat to embed several streams into one matrix.
    #[arg(long, required = true, num_args = 1..)]
    segments: Vec<PathBuf>,
    /// Vector file for a single manifest, instead of the one it references.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct IcssArgs {
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    frame_embeddings: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// CSV of every sampled pair and its cosine.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,5")]
    tolerances: Vec<f64>,
    /// Count t = 0 and the end of a truncated final segment as boundaries.
    #[arg(long)]
    include_endpoints: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frame-embedding index for ICSS.
    #[arg(long)]
    frame_embeddings: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "stream".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => synth(a, seed),
        Command::Encode(a) => {
            let cfg = load_config(a.config.as_deref(), seed)?;
            let stream =
                MotionEncoder::new(cfg.encoder)?.encode_stream(&read_keypoint_clip(&a.input)?)?;
            write_latent_stream(&stream, &a.output)?;
            println!("{} latent steps", stream.len());
            Ok(())
        }
        Command::Calibrate(a) => calibrate_cmd(a, seed),
        Command::Segment(a) => segment(a, seed),
        Command::Embed(a) => embed(a, seed),
        Command::Cluster(a) => cluster(a, seed),
        Command::Icss(a) => icss_cmd(a, seed),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => {
            let cfg = load_config(a.config.as_deref(), seed)?;
            let r = run_pipeline(&cfg, &a.corpus, &a.out, a.frame_embeddings.as_deref())?;
            println!(
                "{} streams, {} failed, {} primitives",
                r.streams.len(),
                r.failed.len(),
                r.n_primitives
            );
            Ok(())
        }
    }
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SynthSpec::read(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let m = generate_corpus(&spec, a.n, &a.out)?;
    println!("{} streams written to {}", m.streams.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let encoder = MotionEncoder::new(cfg.encoder.clone())?;
    let corpus = discover_corpus(&a.clips)?;
    let encoded = corpus
        .par_iter()
        .map(|s| {
            let clip = read_keypoint_clip(&s.clip)?;
            let stream = encoder.encode_stream(&clip)?;
            Ok((clip, stream))
        })
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<_> = encoded.iter().map(|(c, s)| (c, s)).collect();
    let r = calibrate(
        &data,
        cfg.detector.alpha,
        cfg.detector.hysteresis_ratio,
        &cfg.calibration,
    )?;
    write_json(&a.output, &r)?;
    println!("theta_on = {}", r.theta_on);
    Ok(())
}

fn detector_config(a: &SegmentArgs, seed: Option<u64>) -> Result<DetectorConfig> {
    let mut d = load_config(a.config.as_deref(), seed)?.detector;
    if let Some(p) = &a.calibration {
        let c: laps::calibration::CalibrationResult = read_json(p)?;
        d.theta_on = c.theta_on;
        d.hysteresis_ratio = c.hysteresis_ratio;
    }
    d.theta_on = a.theta_on.unwrap_or(d.theta_on);
    d.hysteresis_ratio = a.ratio.unwrap_or(d.hysteresis_ratio);
    d.alpha = a.alpha.unwrap_or(d.alpha);
    d.up_count = a.up.unwrap_or(d.up_count);
    d.down_count = a.down.unwrap_or(d.down_count);
    d.min_len = a.min_len.unwrap_or(d.min_len);
    d.validate()?;
    Ok(d)
}

fn segment(a: SegmentArgs, seed: Option<u64>) -> Result<()> {
    let cfg = detector_config(&a, seed)?;
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(LapsError::Config(format!(
            "--fps must be positive, got {}",
            a.fps
        )));
    }
    if let Some(signal) = &a.signal_file {
        let energy: Vec<f64> = read_json(signal)?;
        if energy.is_empty() {
            return Err(LapsError::TooShort("signal file holds no samples".into()));
        }
        if energy.iter().any(|v| !v.is_finite()) {
            return Err(LapsError::NonFinite("signal file"));
        }
        let segs = segment_smoothed(&ema_smooth(&energy, cfg.alpha, energy[0]), &cfg);
        let out = json!({
            "source_id": a.source_id.clone().unwrap_or_else(|| file_stem(signal)),
            "fps": a.fps,
            "segments": segs.iter().map(|s| json!({
                "start_sample": s.start,
                "end_sample": s.end,
                "start_s": s.start as f64 / a.fps,
                "end_s": s.end as f64 / a.fps,
                "truncated": s.truncated,
            })).collect::<Vec<_>>(),
        });
        write_json(&a.output, &out)?;
        println!("{} segments", segs.len());
        return Ok(());
    }
    let input = a
        .input
        .as_deref()
        .expect("clap requires input or signal file");
    let stream = read_latent_stream(input)?;
    let id = a.source_id.clone().unwrap_or_else(|| file_stem(input));
    let prims = detect(&stream, &cfg, &id, a.fps)?;
    let n = prims.len();
    write_segment_manifest(
        &SegmentManifest::new(id, a.fps, stream.codebook_size(), stream.dim(), prims),
        &a.output,
    )?;
    println!("{n} primitives");
    Ok(())
}

fn embed(a: EmbedArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    if a.vectors.is_some() && a.segments.len() != 1 {
        return Err(LapsError::Config(
            "--vectors needs exactly one --segments file".into(),
        ));
    }
    let mut primitives = Vec::new();
    for path in &a.segments {
        let m = match &a.vectors {
            Some(v) => read_segment_manifest_with(path, v)?,
            None => read_segment_manifest(path)?,
        };
        primitives.extend(m.primitives);
    }
    let embeddings = FrozenEmbedder::new(cfg.embedder)?.embed_all(&primitives)?;
    write_embeddings(&embeddings, &a.output)?;
    println!("{} embeddings", embeddings.len());
    Ok(())
}

fn cluster(a: ClusterArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref(), seed)?.cluster;
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.n_init = a.n_init.unwrap_or(cfg.n_init);
    let (ids, m) = read_embeddings(&a.embeddings)?;
    let report = cluster_embeddings(&ids, &matrix_f64(&m), &cfg)?;
    write_json(&a.output, &report)?;
    println!("k = {}, silhouette = {:?}", report.k, report.silhouette);
    Ok(())
}

fn icss_cmd(a: IcssArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let budget = a.budget.unwrap_or(cfg.icss.budget);
    let clusters: ClusterReport = read_json(&a.clusters)?;
    let desc = descriptors(&FrameEmbeddingSet::read(&a.frame_embeddings)?)?;
    let (report, audit) = icss(&desc, &clusters.members(), budget, cfg.seed)?;
    write_json(&a.output, &report)?;
    if let Some(path) = &a.audit {
        write_audit_csv(&audit, path)?;
    }
    println!(
        "overall {:?}, baseline {:?}",
        report.overall.mean, report.baseline.mean
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = read_segment_manifest(&a.pred)?;
    let gt = GroundTruth::read(&a.gt)?;
    if a.tolerances.is_empty() || a.tolerances.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(LapsError::Config("--tolerances must be positive".into()));
    }
    let mut report = EvalReport::new(&a.tolerances, a.include_endpoints);
    report.add(&manifest.source_id, &manifest.primitives, &gt.boundaries_s)?;
    write_json(&a.output, &report)?;
    for r in &report.pooled {
        println!("F1@{}s = {:.4}", r.tolerance_s, r.f1);
    }
    Ok(())
}
