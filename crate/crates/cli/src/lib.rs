//! `colsig` subcommands. Each returns a JSON summary that `main` prints to
//! standard output; failures become a JSON error document on standard error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use colsig_core::dataset::{build_plan, read_manifest, write_manifest, Community, ManifestEntry, SamplingPlan};
use colsig_core::imaging::{normalize_signature, PreprocessParams};
use colsig_core::safeguard::{screen_batch, TrainingSet};
use colsig_core::synth::SynthCorpusSpec;
use colsig_core::vectorize::{
    build_animation, export_animation_json, export_svg, scale_for_fabrication, AnchorSet, ColorMode, PathSet,
};
use colsig_core::{BinaryMask, Canvas, RasterImage};
use colsig_gan::rundir::valid_run_id;
use colsig_gan::train::{draw_latent, Silent};
use colsig_gan::{load_checkpoint, train_run, Generator, GanError, RunConfig, RunDir, RunDirObserver, TrainingData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] colsig_core::Error),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Gan(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Json(_) => "json",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "colsig", version, about = "Collective signature pipeline")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// JSON config overriding defaults; a run config, optionally with
    /// `preprocess` and `synth` sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-community squiggle corpus and its manifest.
    SynthCorpus(SynthArgs),
    /// Normalize raw scans into fixed-canvas binary masks.
    Preprocess(PreprocessArgs),
    /// Community-weighted sampling plans.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train (or resume) a run.
    Train(TrainArgs),
    /// Render samples from a checkpoint.
    Sample(SampleArgs),
    /// Screen samples against the training masks.
    CheckMem(CheckMemArgs),
    /// Fit b-splines to annotated anchors of a sample.
    Vectorize(VectorizeArgs),
    /// Schedule fitted paths as a signing animation.
    Animate(AnimateArgs),
    /// Serve the curation API over a runs directory.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Signatures per community.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory with scans and a manifest.csv.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory for masks and their manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Low hysteresis threshold.
    #[arg(long)]
    pub low: Option<f64>,
    /// High hysteresis threshold.
    #[arg(long)]
    pub high: Option<f64>,
    /// Median window (odd).
    #[arg(long)]
    pub median: Option<usize>,
    /// Target stroke width in pixels.
    #[arg(long)]
    pub stroke_width: Option<f64>,
    /// Canvas as HxW, e.g. 64x256.
    #[arg(long, value_parser = parse_canvas)]
    pub canvas: Option<Canvas>,
}

fn parse_canvas(s: &str) -> std::result::Result<Canvas, String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let height: usize = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    let width: usize = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    if height == 0 || width == 0 {
        return Err("canvas sides must be positive".into());
    }
    Ok(Canvas { height, width })
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Build a sampling plan from a manifest.
    Build(DatasetBuildArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CommunityArg {
    University,
    City,
}

impl From<CommunityArg> for Community {
    fn from(c: CommunityArg) -> Self {
        match c {
            CommunityArg::University => Community::University,
            CommunityArg::City => Community::City,
        }
    }
}

#[derive(Debug, Args)]
pub struct DatasetBuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Community to upweight.
    #[arg(long, value_enum)]
    pub target: CommunityArg,
    /// Sampling weight of the target community relative to the other.
    #[arg(long, default_value_t = 3.0)]
    pub upweight: f64,
    /// Plan file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Runs directory; the run lives in `<out>/<run-id>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run id; an existing run with this id is resumed.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckMemArgs {
    /// Directory of sample PNGs (an epoch directory works).
    #[arg(long)]
    pub samples: PathBuf,
    /// Directory of training mask PNGs.
    #[arg(long)]
    pub training: PathBuf,
    /// Flag samples closer than this.
    #[arg(long, default_value_t = colsig_core::safeguard::DEFAULT_TAU)]
    pub tau: f64,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VectorizeArgs {
    /// Sample PNG the anchors were placed on.
    #[arg(long)]
    pub sample: PathBuf,
    /// Anchor file.
    #[arg(long)]
    pub anchors: PathBuf,
    /// Smoothing weight; 0 interpolates the anchors.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    /// Output directory for paths.json, signature.svg and fabrication.json.
    #[arg(long)]
    pub out: PathBuf,
    /// SVG stroke width in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub stroke_width: f64,
    /// Fabrication enlargement factor.
    #[arg(long, default_value_t = 85.0)]
    pub scale: f64,
    /// Physical size of one canvas pixel, in inches.
    #[arg(long, default_value_t = 0.1)]
    pub inches_per_pixel: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColorArg {
    Black,
    White,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    /// paths.json written by `vectorize`.
    #[arg(long)]
    pub paths: PathBuf,
    /// Cycle length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, value_enum, default_value = "black")]
    pub color: ColorArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Runs directory.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

/// Contents of `--config`: a run config plus optional sections for the
/// other commands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub preprocess: Option<PreprocessParams>,
    pub synth: Option<SynthCorpusSpec>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn run(cli: Cli) -> Result<Value> {
    let cfg = CliConfig::load(cli.config.as_deref())?;
    let seed = cli.seed;
    match cli.command {
        Command::SynthCorpus(a) => synth_corpus(&a, &cfg, seed),
        Command::Preprocess(a) => preprocess(&a, &cfg),
        Command::Dataset(DatasetCommand::Build(a)) => dataset_build(&a),
        Command::Train(a) => train(&a, &cfg, seed),
        Command::Sample(a) => sample(&a, seed),
        Command::CheckMem(a) => check_mem(&a),
        Command::Vectorize(a) => vectorize(&a),
        Command::Animate(a) => animate(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn synth_corpus(a: &SynthArgs, cfg: &CliConfig, seed: Option<u64>) -> Result<Value> {
    let mut spec = cfg.synth.clone().unwrap_or_default();
    spec.n_per_community = a.n;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let entries = spec.write(&a.out)?;
    Ok(json!({
        "written": entries.len(),
        "manifest": a.out.join("manifest.csv"),
        "seed": spec.seed,
    }))
}

#[derive(Debug, Serialize)]
struct Rejection {
    source_id: String,
    kind: &'static str,
    message: String,
}

fn preprocess(a: &PreprocessArgs, cfg: &CliConfig) -> Result<Value> {
    let mut params = cfg.preprocess.clone().unwrap_or_default();
    if let Some(v) = a.low {
        params.low_thresh = v;
    }
    if let Some(v) = a.high {
        params.high_thresh = v;
    }
    if let Some(v) = a.median {
        params.median_window = v;
    }
    if let Some(v) = a.stroke_width {
        params.target_stroke_width = v;
    }
    if let Some(c) = a.canvas {
        params.canvas = c;
    }
    params.validate()?;
    let entries = read_manifest(&a.input.join("manifest.csv"))?;
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for e in entries {
        let path = if e.path.is_relative() && !e.path.exists() {
            a.input.join(&e.path)
        } else {
            e.path.clone()
        };
        let result = RasterImage::load_scan(&path)
            .and_then(|img| normalize_signature(&img, &params, &e.source_id, e.community));
        match result {
            Ok(sig) => {
                let out = a.out.join(format!("{}.png", e.source_id));
                sig.mask.save_png(&out)?;
                kept.push(ManifestEntry {
                    path: out,
                    source_id: e.source_id,
                    community: e.community,
                });
            }
            Err(err) => {
                log::warn!("skipping {}: {err}", e.source_id);
                rejected.push(Rejection {
                    source_id: e.source_id,
                    kind: err.kind(),
                    message: err.to_string(),
                });
            }
        }
    }
    if kept.is_empty() {
        return Err(CliError::Usage("no scan survived preprocessing".into()));
    }
    write_manifest(&a.out.join("manifest.csv"), &kept)?;
    let report = json!({ "params": params, "kept": kept.len(), "rejected": rejected });
    let text = serde_json::to_string_pretty(&report)?;
    let rp = a.out.join("preprocess.json");
    std::fs::write(&rp, text).map_err(|e| io(&rp, e))?;
    Ok(report)
}

fn dataset_build(a: &DatasetBuildArgs) -> Result<Value> {
    let entries = read_manifest(&a.manifest)?;
    let plan = build_plan(entries, a.target.into(), a.upweight)?;
    plan.save(&a.out)?;
    let target = plan.entries.iter().zip(&plan.probabilities).filter(|(e, _)| e.community == plan.target_community);
    let target_mass: f64 = target.map(|(_, p)| p).sum();
    Ok(json!({ "entries": plan.len(), "target": plan.target_community, "target_mass": target_mass, "out": a.out }))
}

fn next_run_id(root: &Path) -> String {
    (1..)
        .map(|n| format!("run-{n:03}"))
        .find(|id| !root.join(id).exists())
        .expect("unbounded")
}

fn train(a: &TrainArgs, cfg: &CliConfig, seed: Option<u64>) -> Result<Value> {
    let mut config = cfg.run.clone();
    if let Some(s) = seed {
        config.train.rng_seed = s;
    }
    config.validate()?;
    let run_id = a.run_id.clone().unwrap_or_else(|| next_run_id(&a.out));
    if !valid_run_id(&run_id) {
        return Err(CliError::Usage(format!("invalid run id `{run_id}`")));
    }
    let root = a.out.join(&run_id);
    let dir = if root.join("config.json").is_file() {
        log::info!("resuming run {run_id}");
        RunDir::open(&root)?
    } else {
        RunDir::create(&a.out, &run_id, &config)?
    };
    let plan = SamplingPlan::load(&a.plan)?;
    let mut state = dir.prepare_resume(&run_id)?;
    let data = TrainingData::load(plan, state.config.canvas())?;
    let mut inner = Silent;
    let mut obs = RunDirObserver::new(RunDir::open(&root)?, &state, &mut inner)?;
    let outcome = train_run(&mut state, &data, &mut obs)?;
    Ok(json!({
        "run_id": run_id,
        "run_dir": root,
        "outcome": outcome,
        "epochs": state.epoch,
        "critic_steps": state.critic_step,
        "latest_checkpoint": dir.checkpoint_path(state.epoch),
    }))
}

fn sample(a: &SampleArgs, seed: Option<u64>) -> Result<Value> {
    let state = load_checkpoint(&a.checkpoint)?;
    let g = Generator::new(&state.config.generator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let mut latents = Vec::new();
    for k in 0..a.n {
        let z = draw_latent(&mut rng, state.config.generator.latent_dim);
        g.generate(&state.generator, &z)?.save_png(&a.out.join(format!("sample_{k}.png")))?;
        latents.push(z);
    }
    let p = a.out.join("latents.json");
    std::fs::write(&p, serde_json::to_string_pretty(&latents)?).map_err(|e| io(&p, e))?;
    Ok(json!({ "written": a.n, "out": a.out, "epoch": state.epoch }))
}

/// `(stem, path)` of every PNG in `dir`, sorted by name.
fn pngs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let path = entry.map_err(|e| io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn check_mem(a: &CheckMemArgs) -> Result<Value> {
    let training: Vec<(String, BinaryMask)> = pngs(&a.training)?
        .into_iter()
        .map(|(id, p)| Ok((id, BinaryMask::load_png(&p)?)))
        .collect::<Result<_>>()?;
    let set = TrainingSet::from_masks(training.iter().map(|(id, m)| (id.as_str(), m)))?;
    // An epoch directory names its samples in samples.json.
    let ids: Option<Vec<String>> = std::fs::read_to_string(a.samples.join("samples.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| serde_json::from_value(v["sample_ids"].clone()).ok());
    let mut samples = Vec::new();
    for (stem, p) in pngs(&a.samples)? {
        let id = match (&ids, stem.strip_prefix("sample_").and_then(|k| k.parse::<usize>().ok())) {
            (Some(ids), Some(k)) if k < ids.len() => ids[k].clone(),
            _ => stem,
        };
        samples.push((id, RasterImage::load_raw(&p)?));
    }
    if samples.is_empty() {
        return Err(CliError::Usage(format!("no PNG samples in {}", a.samples.display())));
    }
    let reports = screen_batch(samples.iter().map(|(id, img)| (id.as_str(), img)), &set, a.tau)?;
    let text = serde_json::to_string_pretty(&reports)?;
    std::fs::write(&a.out, text).map_err(|e| io(&a.out, e))?;
    let flagged: Vec<&str> = reports.iter().filter(|r| r.flagged).map(|r| r.sample_id.as_str()).collect();
    Ok(json!({ "screened": reports.len(), "flagged": flagged, "out": a.out }))
}

fn vectorize(a: &VectorizeArgs) -> Result<Value> {
    let sample = RasterImage::load_raw(&a.sample)?;
    let anchors = AnchorSet::load(&a.anchors)?;
    let stem = a.sample.file_stem().unwrap_or_default().to_string_lossy();
    if anchors.sample_id != stem {
        log::info!("anchors were annotated for `{}`, applying them to `{stem}`", anchors.sample_id);
    }
    let paths = PathSet::fit(&anchors, sample.canvas(), a.smoothing)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let paths_file = a.out.join("paths.json");
    paths.save(&paths_file)?;
    let svg_file = a.out.join("signature.svg");
    std::fs::write(&svg_file, export_svg(&paths, a.stroke_width)).map_err(|e| io(&svg_file, e))?;
    let fab = scale_for_fabrication(&paths, a.scale, a.inches_per_pixel)?;
    let fab_file = a.out.join("fabrication.json");
    std::fs::write(&fab_file, serde_json::to_string_pretty(&fab)?).map_err(|e| io(&fab_file, e))?;
    Ok(json!({
        "strokes": paths.strokes.len(),
        "paths": paths_file,
        "svg": svg_file,
        "fabrication": fab_file,
        "fabrication_width": fab.width,
        "units": fab.units,
    }))
}

fn animate(a: &AnimateArgs) -> Result<Value> {
    let paths = PathSet::load(&a.paths)?;
    let mode = match a.color {
        ColorArg::Black => ColorMode::Black,
        ColorArg::White => ColorMode::White,
    };
    let script = build_animation(&paths.strokes, a.duration, mode)?;
    let text = export_animation_json(&script)?;
    std::fs::write(&a.out, text).map_err(|e| io(&a.out, e))?;
    let total: f64 = script.segments.iter().map(|s| s.duration()).sum();
    Ok(json!({ "segments": script.segments.len(), "total_duration": total, "out": a.out }))
}

fn serve(a: &ServeArgs) -> Result<Value> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| io(&a.root, e))?;
    let addr = std::net::SocketAddr::new(a.host, a.port);
    rt.block_on(colsig_server::serve(a.root.clone(), addr))
        .map_err(|e| io(&a.root, e))?;
    Ok(json!({ "stopped": true }))
}
