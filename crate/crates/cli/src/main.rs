use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apptrack_core::io::{self, IoError};
use apptrack_core::synth::{self, SynthConfig, SynthError};
use apptrack_core::{
    apply_nms, evaluate, track_all, Category, GeometryError, IouKind, MetricsError,
    PipelineError, TrackerConfig, TrackerError,
};
use clap::{Args, Parser, Subcommand};

/// Environment variable that overrides the worker thread count.
const THREADS_ENV: &str = "APPTRACK_THREADS";

#[derive(Parser)]
#[command(name = "apptrack", version, about = "Appearance-only multi-object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-category non-maximum suppression of a detection file.
    Nms(NmsArgs),
    /// Track every sequence of a detection file.
    Track(TrackArgs),
    /// Score a track file against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct NmsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Override one threshold, e.g. `car=0.5`. Repeatable.
    #[arg(long = "nms-thresh", value_name = "CATEGORY=VALUE", value_parser = parse_threshold)]
    nms_thresh: Vec<(Category, f64)>,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON tracker configuration; individual flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    high_thresh: Option<f64>,
    #[arg(long)]
    low_thresh: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    gate1: Option<f64>,
    #[arg(long)]
    gate2: Option<f64>,
    #[arg(long)]
    gate_tentative: Option<f64>,
    #[arg(long)]
    min_hits: Option<u32>,
    #[arg(long)]
    max_lost: Option<u32>,
    /// Emit the buffered tentative records of a track once it is confirmed.
    #[arg(long)]
    backfill: bool,
    /// Run NMS before tracking.
    #[arg(long)]
    apply_nms: bool,
    #[arg(long = "nms-thresh", value_name = "CATEGORY=VALUE", value_parser = parse_threshold)]
    nms_thresh: Vec<(Category, f64)>,
    /// Also write 10-column MOT text files into this directory.
    #[arg(long)]
    mot_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long, default_value = "box", value_parser = parse_iou)]
    iou: IouKind,
    /// Match threshold for MOTA and IDF1.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Write the structured report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving `detections.jsonl` and `gt.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_threshold(s: &str) -> Result<(Category, f64), String> {
    let (cat, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected CATEGORY=VALUE, got {s:?}"))?;
    let cat: Category = cat.parse().map_err(|e| format!("{e}"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|e| format!("bad threshold {value:?}: {e}"))?;
    Ok((cat, value))
}

fn parse_iou(s: &str) -> Result<IouKind, String> {
    s.parse().map_err(|e: <IouKind as std::str::FromStr>::Err| e.to_string())
}

enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::MissingThreshold(_) => Failure::Usage(e.to_string()),
            GeometryError::CanvasMismatch { .. } => Failure::Input(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Geometry(g) => g.into(),
            PipelineError::Tracker {
                source: TrackerError::Config(_),
                ..
            } => Failure::Usage(e.to_string()),
            PipelineError::Tracker { .. } => Failure::Internal(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NoCategories
            | MetricsError::Geometry(_)
            | MetricsError::MissingMask { .. }
            | MetricsError::DuplicateGroundTruth { .. } => Failure::Input(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) | SynthError::SeparationInfeasible { .. } => {
                Failure::Usage(e.to_string())
            }
            SynthError::Inseparable(_) => Failure::Internal(e.to_string()),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn nms_thresholds(overrides: &[(Category, f64)]) -> BTreeMap<Category, f64> {
    let mut config = TrackerConfig::default();
    for (cat, t) in overrides {
        config.set_nms_threshold(cat.clone(), *t);
    }
    config.nms_thresholds
}

fn run_nms(args: NmsArgs) -> Result<(), Failure> {
    let thresholds = nms_thresholds(&args.nms_thresh);
    if let Some((cat, t)) = thresholds.iter().find(|(_, t)| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::Usage(format!("nms threshold for {cat} = {t} outside [0, 1]")));
    }
    let set = io::parse_detections(&args.input)?;
    let kept = apply_nms(&set, &thresholds)?;
    let before: usize = set.values().flat_map(|f| f.values()).map(Vec::len).sum();
    let after: usize = kept.values().flat_map(|f| f.values()).map(Vec::len).sum();
    log::info!("nms kept {after} of {before} detections");
    io::write_detections(
        &args.output,
        kept.values().flat_map(|f| f.values()).flatten(),
    )?;
    Ok(())
}

fn tracker_config(args: &TrackArgs) -> Result<TrackerConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => read_json(path)?,
        None => TrackerConfig::default(),
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut config.high_thresh, args.high_thresh);
    set(&mut config.low_thresh, args.low_thresh);
    set(&mut config.gate_stage1, args.gate1);
    set(&mut config.gate_stage2, args.gate2);
    set(&mut config.gate_tentative, args.gate_tentative);
    if let Some(tau) = args.tau {
        config.tau = tau;
    }
    if let Some(m) = args.min_hits {
        config.min_hits = m;
    }
    if let Some(m) = args.max_lost {
        config.max_lost = m;
    }
    config.backfill_on_confirm |= args.backfill;
    for (cat, t) in &args.nms_thresh {
        config.set_nms_threshold(cat.clone(), *t);
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn run_track(args: TrackArgs) -> Result<(), Failure> {
    let config = tracker_config(&args)?;
    let set = io::parse_detections(&args.input)?;
    let records = track_all(&set, &config, args.apply_nms)?;
    if let Some(r) = records.iter().find(|r| r.score < config.low_thresh) {
        return Err(Failure::Internal(format!(
            "track {} emitted a record with score {} below low_thresh",
            r.track_id, r.score
        )));
    }
    log::info!("{} track records over {} sequences", records.len(), set.len());
    io::write_tracks(&args.output, &records)?;
    if let Some(dir) = &args.mot_dir {
        io::write_mot(dir, &records)?;
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    if !(args.alpha > 0.0 && args.alpha <= 1.0) {
        return Err(Failure::Usage(format!("--alpha {} outside (0, 1]", args.alpha)));
    }
    let gt = io::parse_ground_truth(&args.gt)?;
    let tracks = io::parse_tracks(&args.tracks)?;
    let report = evaluate(&gt, &tracks, args.iou, args.alpha)?;
    print!("{}", io::format_report_text(&report));
    if let Some(path) = &args.report {
        io::write_report(path, &report)?;
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let mut config: SynthConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = synth::generate(&config)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.out.display())))?;
    io::write_detections(&args.out.join("detections.jsonl"), out.detections())?;
    io::write_ground_truth(&args.out.join("gt.jsonl"), &out.ground_truth)?;
    log::info!(
        "wrote {} detections and {} ground truth boxes (regenerated {} times)",
        out.detections().count(),
        out.ground_truth.records().len(),
        out.regenerations
    );
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Nms(a) => run_nms(a),
        Command::Track(a) => run_track(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => run_synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
