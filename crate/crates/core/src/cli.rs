//! `asap` command line: one subcommand per pipeline stage.
//!
//! Every output file gets a sibling `<output>.manifest.json` recording the
//! command line, effective configuration, seed and content digests of all
//! inputs and outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::baseline::{sv_pipeline, KalmanConfig, UpdateMode};
use crate::data::{
    load_detections, load_runtime_profile, load_scene_annotations, load_temporal_database,
    write_jsonl, FrameAnnotations, TemporalDatabase,
};
use crate::error::{Error, Result};
use crate::interp::{extend_annotations, InterpolationConfig};
use crate::metrics::{EvalConfig, MetricReport, ReportMetadata, StreamingAccumulator};
use crate::report::{compare_reports, contention_pivot, summary_table};
use crate::stream_sim::{simulate_stream, PredictionStream, SimConfig};
use crate::synth::{gen_scene, oracle_detector, DetectorNoise, SceneSpec};

/// Environment variable capping scene-level parallelism.
pub const THREADS_ENV: &str = "ASAP_STREAM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "asap",
    version,
    about = "Streaming perception evaluation for 3D detection"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with `interp`, `sim`, `kalman`, `eval` and `detector` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Densify keyframe annotations to the target frame rate.
    Interpolate(InterpolateArgs),
    /// Generate a synthetic scene and oracle detector outputs.
    Synth(SynthArgs),
    /// Replay detector outputs under a runtime profile.
    Simulate(SimulateArgs),
    /// Attach velocity-updated boxes to a prediction stream.
    BaselineSv(BaselineArgs),
    /// Score prediction streams against dense ground truth.
    Evaluate(EvaluateArgs),
    /// Tabulate or compare metric reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    tdb: Option<PathBuf>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    clean_iou: Option<f64>,
    #[arg(long)]
    min_db_score: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
    #[arg(long)]
    out_det: PathBuf,
    #[arg(long)]
    pos_sigma: Option<f64>,
    #[arg(long)]
    vel_sigma: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    det: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    contention: Option<f64>,
    #[arg(long)]
    input_frame_interval: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Kalman,
    Cv,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "kalman")]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Dense ground truth; repeat together with --stream for several scenes.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, required = true)]
    stream: Vec<PathBuf>,
    /// Per-frame detector outputs for offline velocity error.
    #[arg(long)]
    offline: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Score the velocity-updated boxes from `baseline-sv`.
    #[arg(long)]
    sv: bool,
    /// Skip ground-truth frames in the first N ms of each scene.
    #[arg(long)]
    warmup_ms: Option<f64>,
    /// Comma-separated class list; default is every class in the ground truth.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Emit a delta table between exactly two reports.
    #[arg(long)]
    compare: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the mAP-S / NDS-S pivot over contention factors.
    #[arg(long)]
    pivot: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    interp: InterpolationConfig,
    sim: SimConfig,
    kalman: KalmanConfig,
    eval: EvalConfig,
    detector: DetectorNoise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub command_line: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_unix_ms: u128,
}

impl RunManifest {
    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn load_for(output: &Path) -> Option<RunManifest> {
        let text = std::fs::read_to_string(Self::path_for(output)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Ctx {
    argv: Vec<String>,
    seed: Option<u64>,
    file: FileConfig,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write_manifests(
        &self,
        subcommand: &str,
        config: Value,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| file_digest(p))
            .collect::<Result<Vec<_>>>()?;
        let output_digests = outputs
            .iter()
            .map(|p| file_digest(p))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            command_line: self.argv.clone(),
            config,
            seed,
            inputs,
            outputs: output_digests,
            wall_clock_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        for out in outputs {
            let p = RunManifest::path_for(out);
            std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the CLI. Exit codes: 0 success, 1 usage or validation error, 2 I/O error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli, argv: &[OsString]) -> Result<()> {
    let file = match &cli.config {
        Some(p) => read_json(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        argv: argv
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        seed: cli.seed,
        file,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Interpolate(a) => cmd_interpolate(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::BaselineSv(a) => cmd_baseline(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn cmd_interpolate(ctx: &Ctx, a: InterpolateArgs) -> Result<()> {
    let mut cfg = ctx.file.interp;
    if let Some(r) = a.rate {
        cfg.target_rate_hz = r;
    }
    if let Some(v) = a.clean_iou {
        cfg.clean_iou_threshold = v;
    }
    if let Some(v) = a.min_db_score {
        cfg.min_db_score = v;
    }
    let keyframes: Vec<FrameAnnotations> = load_scene_annotations(&a.gt)?
        .into_iter()
        .filter(|f| f.is_keyframe)
        .collect();
    let db = match &a.tdb {
        Some(p) => load_temporal_database(p)?,
        None => TemporalDatabase::default(),
    };
    let dense = extend_annotations(&keyframes, &db, &cfg)?;
    write_jsonl(&a.out, &dense)?;
    let mut inputs = vec![a.gt.as_path()];
    inputs.extend(a.tdb.as_deref());
    ctx.write_manifests(
        "interpolate",
        json!({ "interp": cfg }),
        None,
        &inputs,
        &[&a.out],
    )?;
    ctx.note(format!(
        "interpolate: {} keyframes -> {} frames",
        keyframes.len(),
        dense.len()
    ));
    Ok(())
}

#[derive(Deserialize)]
struct SynthFile {
    #[serde(flatten)]
    scene: SceneSpec,
    #[serde(default)]
    detector: Option<DetectorNoise>,
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let file: SynthFile = read_json(&a.spec)?;
    let mut spec = file.scene;
    if let Some(s) = ctx.seed {
        spec.seed = s;
    }
    let mut noise = file.detector.unwrap_or(ctx.file.detector);
    if let Some(v) = a.pos_sigma {
        noise.pos_sigma = v;
    }
    if let Some(v) = a.vel_sigma {
        noise.vel_sigma = v;
    }
    if let Some(v) = a.drop_rate {
        noise.drop_rate = v;
    }
    let frames = gen_scene(&spec)?;
    let det = oracle_detector(&frames, &noise, spec.seed)?;
    write_jsonl(&a.out_gt, &frames)?;
    write_jsonl(&a.out_det, &det.into_values().collect::<Vec<_>>())?;
    ctx.write_manifests(
        "synth",
        json!({ "scene": spec, "detector": noise }),
        Some(spec.seed),
        &[&a.spec],
        &[&a.out_gt, &a.out_det],
    )?;
    ctx.note(format!("synth: {} frames", frames.len()));
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let mut cfg = ctx.file.sim.clone();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.contention {
        cfg.contention_factor = c;
    }
    if let Some(i) = a.input_frame_interval {
        cfg.input_frame_interval = i;
    }
    let gt = load_scene_annotations(&a.gt)?;
    let det = load_detections(&a.det)?;
    let profile = load_runtime_profile(&a.profile)?;
    let timestamps: Vec<i64> = gt.iter().map(|f| f.timestamp_us).collect();
    let outputs = det.into_iter().map(|d| (d.source_timestamp, d)).collect();
    let stream = simulate_stream(&timestamps, &outputs, &profile, &cfg)?;
    stream.save(&a.out)?;
    ctx.write_manifests(
        "simulate",
        json!({ "sim": cfg, "profile": profile }),
        Some(cfg.seed),
        &[&a.det, &a.gt, &a.profile],
        &[&a.out],
    )?;
    ctx.note(format!(
        "simulate: {} frames -> {} predictions",
        timestamps.len(),
        stream.len()
    ));
    Ok(())
}

fn cmd_baseline(ctx: &Ctx, a: BaselineArgs) -> Result<()> {
    let cfg = ctx.file.kalman;
    let stream = PredictionStream::load(&a.stream)?;
    let gt = load_scene_annotations(&a.gt)?;
    let ts: Vec<i64> = gt.iter().map(|f| f.timestamp_us).collect();
    let mode = match a.mode {
        ModeArg::Kalman => UpdateMode::Kalman,
        ModeArg::Cv => UpdateMode::ConstantVelocity,
    };
    let out = sv_pipeline(&stream, &ts, &cfg, mode)?;
    out.save(&a.out)?;
    let upstream = RunManifest::load_for(&a.stream).map(|m| m.config);
    ctx.write_manifests(
        "baseline-sv",
        json!({ "kalman": cfg, "mode": format!("{mode:?}"), "stream": upstream }),
        upstream_seed(upstream.as_ref()),
        &[&a.stream, &a.gt],
        &[&a.out],
    )?;
    ctx.note(format!("baseline-sv: refined {} records", out.len()));
    Ok(())
}

fn upstream_sim(config: Option<&Value>) -> Option<&Value> {
    let c = config?;
    c.get("sim")
        .map(|_| c)
        .or_else(|| c.get("stream").filter(|s| s.get("sim").is_some()))
}

fn upstream_seed(config: Option<&Value>) -> Option<u64> {
    upstream_sim(config)?.get("sim")?.get("seed")?.as_u64()
}

fn metadata_from_stream(path: &Path, label: Option<String>) -> ReportMetadata {
    let manifest = RunManifest::load_for(path);
    let sim = upstream_sim(manifest.as_ref().map(|m| &m.config));
    ReportMetadata {
        scene_ids: Vec::new(),
        profile: sim
            .and_then(|c| c.get("profile")?.get("name")?.as_str())
            .map(String::from),
        seed: sim.and_then(|c| c.get("sim")?.get("seed")?.as_u64()),
        contention_factor: sim.and_then(|c| c.get("sim")?.get("contention_factor")?.as_f64()),
        label,
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    if a.gt.len() != a.stream.len() {
        return Err(Error::Config(format!(
            "{} --gt files but {} --stream files",
            a.gt.len(),
            a.stream.len()
        )));
    }
    if !a.offline.is_empty() && a.offline.len() != a.gt.len() {
        return Err(Error::Config(
            "--offline must be given once per scene or not at all".into(),
        ));
    }
    let mut cfg = ctx.file.eval.clone();
    if a.sv {
        cfg.use_refinements = true;
    }
    if let Some(ms) = a.warmup_ms {
        cfg.warmup_us = (ms * 1000.0).round() as i64;
    }
    if !a.classes.is_empty() {
        cfg.classes = Some(a.classes.clone());
    }

    let scenes: Vec<usize> = (0..a.gt.len()).collect();
    let pool = thread_pool()?;
    let accs: Vec<Result<StreamingAccumulator>> = pool.install(|| {
        scenes
            .par_iter()
            .map(|&i| {
                let gt = load_scene_annotations(&a.gt[i])?;
                let stream = PredictionStream::load(&a.stream[i])?;
                let offline = match a.offline.get(i) {
                    Some(p) => Some(load_detections(p)?),
                    None => None,
                };
                let mut acc = StreamingAccumulator::new(cfg.clone())?;
                acc.add_scene(&gt, &stream, offline.as_deref())?;
                Ok(acc)
            })
            .collect()
    });
    let mut total: Option<StreamingAccumulator> = None;
    for acc in accs {
        let acc = acc?;
        match &mut total {
            None => total = Some(acc),
            Some(t) => t.merge(acc)?,
        }
    }
    let total = total.expect("at least one scene");
    let report = total.finish(metadata_from_stream(&a.stream[0], a.label.clone()));
    write_text(&a.out, &serde_json::to_string_pretty(&report)?)?;

    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(csv_path) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
        outputs.push(csv_path);
    }
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.gt.iter().map(PathBuf::as_path));
    inputs.extend(a.stream.iter().map(PathBuf::as_path));
    inputs.extend(a.offline.iter().map(PathBuf::as_path));
    ctx.write_manifests(
        "evaluate",
        json!({ "eval": cfg }),
        report.metadata.seed,
        &inputs,
        &outputs,
    )?;
    ctx.note(format!(
        "evaluate: mAP-S {:.4} NDS-S {:.4}",
        report.map_s, report.nds_s
    ));
    Ok(())
}

fn cmd_report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let r = MetricReport::load(p)?;
            let label = r.metadata.label.clone().unwrap_or_else(|| {
                p.file_stem().map_or_else(
                    || p.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                )
            });
            Ok((label, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = if a.compare {
        if reports.len() != 2 {
            return Err(Error::Config("--compare needs exactly two reports".into()));
        }
        compare_reports(&reports[0].1, &reports[1].1)?
    } else {
        summary_table(&reports)?
    };
    let inputs: Vec<&Path> = a.reports.iter().map(PathBuf::as_path).collect();
    let mut outputs: Vec<&Path> = Vec::new();
    match &a.out {
        Some(p) => {
            write_text(p, &table)?;
            outputs.push(p);
        }
        None => print!("{table}"),
    }
    if let Some(p) = &a.pivot {
        write_text(p, &contention_pivot(&reports)?)?;
        outputs.push(p);
    }
    if !outputs.is_empty() {
        let labels: BTreeMap<usize, &str> = reports
            .iter()
            .enumerate()
            .map(|(i, (l, _))| (i, l.as_str()))
            .collect();
        ctx.write_manifests(
            "report",
            json!({ "compare": a.compare, "labels": labels }),
            None,
            &inputs,
            &outputs,
        )?;
    }
    Ok(())
}
