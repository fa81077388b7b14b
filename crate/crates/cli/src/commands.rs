//! The four subcommands: single-query inference, batch evaluation,
//! interleave-density sweeps, and the gateway service.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use omniroute_core::backend::ModelClient;
use omniroute_core::eval::{
    self, accuracy, conflict_metrics, latency_report, report, DatasetManifest, LatencyOptions, RunMode,
};
use omniroute_core::pipeline::{self, export_trajectory, PipelineConfig};
use omniroute_core::planner::PlannerMode;
use omniroute_core::prompts::DecideTemplate;
use omniroute_core::{
    AudioStream, Frame, ImageSet, ModalityKind, PlanDirective, Query, StreamSet, TopologyFormat, Trace,
    VideoStream,
};

use crate::config::{AppConfig, BackendSpec};
use crate::gateway::{self, GatewayState};

/// Exit-code contract: 1 usage, 2 data, 3 backend.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "omniroute", version, about = "Adaptive modality-topology routing for omni-modal models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer a single query over locally referenced media.
    Infer(InferArgs),
    /// Evaluate a JSONL manifest and write reports.
    Eval(EvalArgs),
    /// Interleave-density sweep with paired accuracy / yes-rate series.
    Sweep(SweepArgs),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// App config file (JSON, ${VAR} interpolation).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Backend override: mock:<rules.json> or http:<config.json>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Planner policy: strict or lenient.
    #[arg(long)]
    pub policy: Option<String>,
    /// Interleave density (segment pairs per interleaved composition).
    #[arg(long)]
    pub k: Option<u32>,
    /// Decision prompt template: open or mc.
    #[arg(long = "prompt-template")]
    pub prompt_template: Option<String>,
    /// Decoding seed (temperature is always 0).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Uniformly subsample each video to at most this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Concurrency cap for batch records / gateway requests.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Report output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn app_config(&self) -> Result<AppConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => AppConfig::load(path)?,
            None => {
                let flag = self.backend.as_deref().ok_or_else(|| {
                    CliError::Usage("no backend configured: pass --config <file> or --backend <spec>".into())
                })?;
                AppConfig::with_backend(BackendSpec::from_flag(flag)?)
            }
        };
        if let Some(flag) = &self.backend {
            if self.config.is_some() {
                cfg.backend = BackendSpec::from_flag(flag)?;
            }
        }
        if let Some(policy) = &self.policy {
            cfg.policy = PlannerMode::from_str(policy).map_err(CliError::Usage)?;
        }
        if let Some(k) = self.k {
            if k < 1 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            cfg.interleave_k = k;
        }
        if let Some(template) = &self.prompt_template {
            cfg.template = DecideTemplate::from_str(template).map_err(CliError::Usage)?;
        }
        if let Some(c) = self.concurrency {
            cfg.concurrency = c.max(1);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// The question text.
    #[arg(long)]
    pub query: String,
    /// Query id used in traces.
    #[arg(long, default_value = "query")]
    pub id: String,
    /// Comma-separated answer options.
    #[arg(long)]
    pub options: Option<String>,
    /// Audio media path.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Audio duration in seconds.
    #[arg(long)]
    pub audio_duration: Option<f64>,
    /// Video media path.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Video duration in seconds.
    #[arg(long)]
    pub video_duration: Option<f64>,
    /// Comma-separated frame timestamps in seconds.
    #[arg(long)]
    pub video_frames: Option<String>,
    /// Comma-separated image paths.
    #[arg(long)]
    pub images: Option<String>,
    /// Inject a directive and skip planning: inline JSON or @file.
    #[arg(long)]
    pub plan_override: Option<String>,
    /// Append the trace to this JSONL file.
    #[arg(long)]
    pub emit_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSONL manifest path.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root for media paths; defaults to the manifest's directory.
    #[arg(long)]
    pub manifest_root: Option<PathBuf>,
    /// Run mode: adaptive, fixed, audio-only, or visual-only.
    #[arg(long, default_value = "adaptive")]
    pub mode: String,
    /// Modality order for --mode fixed, e.g. audio,video.
    #[arg(long)]
    pub order: Option<String>,
    /// Topology format for --mode fixed.
    #[arg(long)]
    pub format: Option<String>,
    /// Also run audio-only and visual-only ablations and emit the conflict report.
    #[arg(long)]
    pub ablate: bool,
    /// Orders for a permutation experiment (repeatable), e.g. --permute audio,video --permute video,audio.
    #[arg(long = "permute")]
    pub permute: Vec<String>,
    /// Write all traces to traces.jsonl in the output directory.
    #[arg(long)]
    pub emit_traces: bool,
    /// Write stage-ordered training records to trajectories.jsonl.
    #[arg(long)]
    pub emit_trajectories: bool,
    /// Leading calls to discard from the latency report as warm-up.
    #[arg(long, default_value_t = 1)]
    pub latency_warmup: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSONL manifest path (binary yes/no task).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root for media paths; defaults to the manifest's directory.
    #[arg(long)]
    pub manifest_root: Option<PathBuf>,
    /// Comma-separated interleave densities, e.g. 1,2,4,8,15.
    #[arg(long, default_value = "1,2,4,8,15")]
    pub densities: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Listen port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Root directory for media path references in requests.
    #[arg(long)]
    pub media_root: Option<PathBuf>,
    /// Skip media path existence checks.
    #[arg(long)]
    pub no_check_media: bool,
}

pub async fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Infer(args) => cmd_infer(args).await,
        Command::Eval(args) => cmd_eval(args).await,
        Command::Sweep(args) => cmd_sweep(args).await,
        Command::Serve(args) => cmd_serve(args).await,
    }
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn parse_csv<T: FromStr>(input: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    input
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("bad {what} value {s:?}: {e}"))))
        .collect()
}

fn require_media_file(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("media file does not exist: {}", path.display())));
    }
    Ok(())
}

fn build_streams(args: &InferArgs) -> Result<StreamSet, CliError> {
    let mut streams = StreamSet::default();
    if let Some(path) = &args.audio {
        require_media_file(path)?;
        let duration = args
            .audio_duration
            .ok_or_else(|| CliError::Usage("--audio requires --audio-duration".into()))?;
        streams.audio = Some(
            AudioStream::new("audio", duration, path.to_string_lossy())
                .map_err(|e| CliError::Data(e.to_string()))?,
        );
    }
    if let Some(path) = &args.video {
        require_media_file(path)?;
        let duration = args
            .video_duration
            .ok_or_else(|| CliError::Usage("--video requires --video-duration".into()))?;
        let timestamps: Vec<f64> = match &args.video_frames {
            Some(spec) => parse_csv(spec, "--video-frames")?,
            None => vec![],
        };
        let frames = timestamps
            .iter()
            .enumerate()
            .map(|(i, t)| Frame { timestamp_s: *t, image: format!("{}#f{i}", path.display()) })
            .collect();
        let mut video =
            VideoStream::new("video", duration, frames).map_err(|e| CliError::Data(e.to_string()))?;
        if let Some(n) = args.common.frames {
            video = video.sample_frames(n);
        }
        streams.video = Some(video);
    }
    if let Some(spec) = &args.images {
        let paths: Vec<PathBuf> = spec.split(',').map(|s| PathBuf::from(s.trim())).collect();
        for p in &paths {
            require_media_file(p)?;
        }
        streams.images = Some(ImageSet {
            id: "images".into(),
            frames: paths.iter().map(|p| p.to_string_lossy().into_owned()).collect(),
        });
    }
    if streams.is_empty() {
        return Err(CliError::Usage("at least one of --audio/--video/--images is required".into()));
    }
    Ok(streams)
}

fn parse_plan_override(spec: &str) -> Result<PlanDirective, CliError> {
    let text = match spec.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read plan override {path}: {e}")))?,
        None => spec.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("plan override: {e}")))
}

fn append_jsonl(path: &Path, line: &str) -> Result<(), CliError> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Data(e.to_string()))?;
        }
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    writeln!(file, "{line}").map_err(|e| CliError::Data(e.to_string()))
}

async fn cmd_infer(args: InferArgs) -> Result<(), CliError> {
    let app = args.common.app_config()?;
    let client = app.backend.build()?;
    let mut cfg = app.pipeline(args.common.seed)?;
    if let Some(spec) = &args.plan_override {
        cfg.plan_override = Some(parse_plan_override(spec)?);
    }

    let options = match &args.options {
        Some(spec) => spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => vec![],
    };
    let query = Query::new(args.id.clone(), args.query.clone(), options, None)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let streams = build_streams(&args)?;

    let trace = pipeline::run(&query, &streams, &cfg, client.as_ref()).await;

    if let Some(path) = &args.emit_trace {
        let line = serde_json::to_string(&trace).map_err(|e| CliError::Data(e.to_string()))?;
        append_jsonl(path, &line)?;
    }

    match (&trace.error, &trace.answer) {
        (None, Some(answer)) => {
            if let Some(directive) = &trace.directive {
                println!(
                    "plan: task={} pathway={} modalities=[{}] format={} provenance={}",
                    directive.task,
                    directive.pathway,
                    directive.order.iter().map(ModalityKind::as_str).collect::<Vec<_>>().join(","),
                    directive.format,
                    directive.provenance
                );
            }
            match &answer.choice {
                Some(choice) => println!("answer: {choice}"),
                None => println!("answer: {}", answer.raw_text),
            }
            Ok(())
        }
        (error, _) => Err(CliError::Backend(
            error.clone().unwrap_or_else(|| "run produced no answer".into()),
        )),
    }
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn parse_order(spec: &str) -> Result<Vec<ModalityKind>, CliError> {
    let order: Vec<ModalityKind> = parse_csv(spec, "--order")?;
    if order.is_empty() {
        return Err(CliError::Usage("modality order must be nonempty".into()));
    }
    Ok(order)
}

fn parse_mode(args: &EvalArgs) -> Result<RunMode, CliError> {
    match args.mode.to_ascii_lowercase().as_str() {
        "adaptive" => Ok(RunMode::Adaptive),
        "audio-only" => Ok(RunMode::AudioOnly),
        "visual-only" => Ok(RunMode::VisualOnly),
        "fixed" => {
            let order = parse_order(
                args.order.as_deref().ok_or_else(|| CliError::Usage("--mode fixed requires --order".into()))?,
            )?;
            let format = args
                .format
                .as_deref()
                .unwrap_or("sequential")
                .parse::<TopologyFormat>()
                .map_err(CliError::Usage)?;
            if format == TopologyFormat::Interleaved
                && order != [ModalityKind::Audio, ModalityKind::Video]
                && order != [ModalityKind::Video, ModalityKind::Audio]
            {
                return Err(CliError::Usage(
                    "--format interleaved requires --order to be exactly audio,video".into(),
                ));
            }
            Ok(RunMode::FixedBaseline { order, format })
        }
        other => Err(CliError::Usage(format!(
            "unknown mode {other:?} (expected adaptive|fixed|audio-only|visual-only)"
        ))),
    }
}

fn mode_label(mode: &RunMode) -> String {
    match mode {
        RunMode::Adaptive => "adaptive".into(),
        RunMode::AudioOnly => "audio-only".into(),
        RunMode::VisualOnly => "visual-only".into(),
        RunMode::FixedBaseline { order, format } => format!(
            "fixed-{}-{format}",
            order.iter().map(ModalityKind::as_str).collect::<Vec<_>>().join(">")
        ),
    }
}

fn write_report(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn load_manifest(path: &Path, frames: Option<usize>) -> Result<DatasetManifest, CliError> {
    let manifest = DatasetManifest::from_file(path).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(match frames {
        Some(n) => manifest.with_frame_budget(n),
        None => manifest,
    })
}

fn manifest_root(manifest: &Path, explicit: &Option<PathBuf>) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| manifest.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
}

async fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let app = args.common.app_config()?;
    let client: Arc<dyn ModelClient> = app.backend.build()?;
    let cfg: PipelineConfig = app.pipeline(args.common.seed)?;
    let manifest = load_manifest(&args.manifest, args.common.frames)?;
    let root = manifest_root(&args.manifest, &args.manifest_root);
    let mode = parse_mode(&args)?;
    let out = &app.out_dir;

    let joint = eval::run_suite_with_root(&manifest, &mode, &cfg, Arc::clone(&client), app.concurrency, root.as_deref())
        .await;
    let failed = joint.traces.iter().filter(|t| !t.succeeded()).count();
    let mut accuracy_rows =
        vec![(mode_label(&mode), accuracy(&joint.predictions, &manifest).map_err(|e| CliError::Data(e.to_string()))?)];

    if args.ablate {
        let audio =
            eval::run_suite_with_root(&manifest, &RunMode::AudioOnly, &cfg, Arc::clone(&client), app.concurrency, root.as_deref())
                .await;
        let visual =
            eval::run_suite_with_root(&manifest, &RunMode::VisualOnly, &cfg, Arc::clone(&client), app.concurrency, root.as_deref())
                .await;
        accuracy_rows.push((
            "audio-only".into(),
            accuracy(&audio.predictions, &manifest).map_err(|e| CliError::Data(e.to_string()))?,
        ));
        accuracy_rows.push((
            "visual-only".into(),
            accuracy(&visual.predictions, &manifest).map_err(|e| CliError::Data(e.to_string()))?,
        ));
        let conflict = conflict_metrics(&audio.predictions, &visual.predictions, &joint.predictions, &manifest)
            .map_err(|e| CliError::Data(e.to_string()))?;
        write_report(out, "conflict.csv", &report::conflict_csv(&conflict))?;
        write_report(out, "conflict.md", &report::conflict_markdown(&conflict))?;
        println!(
            "conflict: neq_rate={:.4} (|C|={} of {})",
            conflict.neq_rate, conflict.conflict_count, conflict.total
        );
    }

    if !args.permute.is_empty() {
        let orders = args.permute.iter().map(|s| parse_order(s)).collect::<Result<Vec<_>, _>>()?;
        let permutation =
            eval::permutation_report(&manifest, &orders, &cfg, Arc::clone(&client), app.concurrency, root.as_deref())
                .await
                .map_err(|e| CliError::Data(e.to_string()))?;
        write_report(out, "permutation.csv", &report::permutation_csv(&permutation))?;
        write_report(out, "permutation.md", &report::permutation_markdown(&permutation))?;
        println!("permutation report over {} orders written", permutation.rows.len());
    }

    let latency = latency_report(&joint.traces, LatencyOptions { discard_first_calls: args.latency_warmup });
    write_report(out, "latency.csv", &report::latency_csv(&latency))?;
    write_report(out, "latency.md", &report::latency_markdown(&latency))?;
    write_report(out, "accuracy.csv", &report::accuracy_csv(&accuracy_rows))?;
    write_report(out, "accuracy.md", &report::accuracy_markdown(&accuracy_rows))?;

    if args.emit_traces {
        write_report(out, "traces.jsonl", &eval::traces_to_jsonl(&joint.traces))?;
    }
    if args.emit_trajectories {
        let mut lines = String::new();
        let mut skipped = 0usize;
        for trace in &joint.traces {
            match export_trajectory(trace) {
                Ok(record) => {
                    lines.push_str(&serde_json::to_string(&record).map_err(|e| CliError::Data(e.to_string()))?);
                    lines.push('\n');
                }
                Err(_) => skipped += 1,
            }
        }
        write_report(out, "trajectories.jsonl", &lines)?;
        if skipped > 0 {
            println!("trajectories: skipped {skipped} failed trace(s)");
        }
    }

    for (label, value) in &accuracy_rows {
        println!("accuracy[{label}] = {value:.4}");
    }
    if failed > 0 {
        println!("note: {failed} record(s) failed and were counted as unresolved");
    }
    println!("reports written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

async fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let app = args.common.app_config()?;
    let client: Arc<dyn ModelClient> = app.backend.build()?;
    let cfg = app.pipeline(args.common.seed)?;
    let manifest = load_manifest(&args.manifest, args.common.frames)?;
    let root = manifest_root(&args.manifest, &args.manifest_root);

    let densities: Vec<u32> = parse_csv(&args.densities, "--densities")?;
    if densities.is_empty() || densities.contains(&0) {
        return Err(CliError::Usage("--densities must list positive integers".into()));
    }

    let sweep = eval::density_sweep(&manifest, &densities, &cfg, client, app.concurrency, root.as_deref())
        .await
        .map_err(|e| CliError::Data(e.to_string()))?;

    write_report(&app.out_dir, "sweep.csv", &report::sweep_csv(&sweep))?;
    write_report(&app.out_dir, "sweep.md", &report::sweep_markdown(&sweep))?;

    println!("sequential baseline: accuracy={:.4} yes_rate={:.4}", sweep.baseline.accuracy, sweep.baseline.yes_rate);
    for (k, point) in &sweep.points {
        println!("k={k}: accuracy={:.4} yes_rate={:.4}", point.accuracy, point.yes_rate);
    }
    println!("reports written to {}", app.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

async fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let app = args.common.app_config()?;
    let client = app.backend.build()?;
    let cfg = app.pipeline(args.common.seed)?;

    let media_root = args.media_root.clone().or_else(|| app.media_root.clone());
    let state = Arc::new(GatewayState::new(
        client,
        cfg,
        app.concurrency,
        media_root,
        app.check_media && !args.no_check_media,
    ));

    let addr = format!("{}:{}", args.host, args.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::Data(format!("cannot bind {addr}: {e}")))?;
    println!("gateway listening on http://{addr} (concurrency cap {})", app.concurrency);

    gateway::serve_with_shutdown(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| CliError::Backend(e.to_string()))
}

/// Write a single trace as one JSONL line (exposed for tests).
pub fn trace_to_line(trace: &Trace) -> String {
    serde_json::to_string(trace).expect("traces always serialize")
}
