use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kfr::fusion::extractor::TEST_CHANNELS;
use kfr::fusion::ConvExtractor;
use kfr::keyframe_store::Policy;
use kfr::pipeline::{load_manifest, pair_indices, run_stream, simulate_policy, ExtractorChoice, PipelineConfig};
use kfr::synth::{write_stream, StreamSpec};
use kfr::{mls_build_field, warp_image, FusionNet, ImageBuffer, LandmarkSet};
use log::info;

#[derive(Parser)]
#[command(name = "kfr", version, about = "Keyframe-guided face restoration")]
struct Cli {
    /// Worker threads for per-frame parallelism.
    #[arg(long, env = "KFR_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore every non-keyframe frame of a manifest.
    Restore(RestoreArgs),
    /// Run only the keyframe store over a manifest and print its trace.
    SimulatePolicy(SimulateArgs),
    /// Warp an image so its landmarks move onto another landmark set.
    Warp(WarpArgs),
    /// Pair reference and degraded frames for training.
    Pair(PairArgs),
    /// Write a seeded weight file.
    InitWeights(InitWeightsArgs),
    /// Generate a synthetic face stream with a manifest.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    max_cardinality: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    extractor: Option<ExtractorChoice>,
    #[arg(long)]
    grid_step: Option<usize>,
    #[arg(long)]
    landmark_radius: Option<f64>,
    #[arg(long)]
    feather: Option<f64>,
    /// Write only the restored crops, not full frames.
    #[arg(long)]
    no_paste_back: bool,
    #[arg(long)]
    report_losses: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.max_cardinality {
            cfg.max_cardinality = v;
        }
        if let Some(v) = self.crop_size {
            cfg.crop_size = v;
        }
        if let Some(v) = &self.weights {
            cfg.weights = Some(v.clone());
        }
        if let Some(v) = self.extractor {
            cfg.extractor = v;
        }
        if let Some(v) = self.grid_step {
            cfg.grid_step = v;
        }
        if let Some(v) = self.landmark_radius {
            cfg.landmark_radius = v;
        }
        if let Some(v) = self.feather {
            cfg.feather = v;
        }
        if self.no_paste_back {
            cfg.paste_back = false;
        }
        if self.report_losses {
            cfg.report_losses = true;
        }
    }
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    max_cardinality: Option<usize>,
    /// Trace file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WarpArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    src_landmarks: PathBuf,
    #[arg(long)]
    dst_landmarks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    grid_step: usize,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    raw_dir: PathBuf,
    #[arg(long)]
    degraded_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    offset: usize,
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Pair manifest; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero the output head so the network returns its input unchanged.
    #[arg(long)]
    zero_residual: bool,
    /// Also write `extractor.stage*` tensors (for `--extractor file`).
    #[arg(long)]
    with_extractor: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 10)]
    keyframe_every: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip writing ground-truth frames.
    #[arg(long)]
    no_gt: bool,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => emit(text),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn restore(args: &RestoreArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let records = load_manifest(&args.manifest)?;
    info!("restoring {} frames into {}", records.len(), args.out.display());
    let report = run_stream(&records, &cfg, Some(&args.out))?;
    emit(&(serde_json::to_string_pretty(&report.summary)? + "\n"))?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    if let Some(k) = args.max_cardinality {
        cfg.max_cardinality = k;
    }
    cfg.validate()?;
    let records = load_manifest(&args.manifest)?;
    let trace = simulate_policy(&records, &cfg)?;
    info!("{} events", trace.len());
    write_or_print(args.out.as_deref(), &trace.to_jsonl())
}

fn warp(args: &WarpArgs) -> Result<()> {
    let src = ImageBuffer::load(&args.src)?;
    let from = LandmarkSet::load(&args.src_landmarks)?;
    let to = LandmarkSet::load(&args.dst_landmarks)?;
    let field = mls_build_field(from.points(), to.points(), src.width(), src.height(), args.grid_step)?;
    warp_image(&src, &field)?.save_png(&args.out)?;
    Ok(())
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    Ok(files)
}

fn pair(args: &PairArgs) -> Result<()> {
    let raw = list_files(&args.raw_dir)?;
    let deg = list_files(&args.degraded_dir)?;
    let mut text = String::new();
    for (i, j) in pair_indices(raw.len(), deg.len(), args.offset, args.stride)? {
        let line = serde_json::json!({
            "raw_index": i,
            "degraded_index": j,
            "reference": raw[i],
            "degraded": deg[j],
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    write_or_print(args.out.as_deref(), &text)
}

fn init_weights(args: &InitWeightsArgs) -> Result<()> {
    let mut w = FusionNet::init_weights(TEST_CHANNELS, args.seed);
    if args.zero_residual {
        FusionNet::zero_residual(&mut w)?;
    }
    if args.with_extractor {
        ConvExtractor::init_weights(&mut w, TEST_CHANNELS, args.seed);
    }
    w.save(&args.out)?;
    info!("wrote {} tensors to {}", w.len(), args.out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.frames == 0 {
        bail!("--frames must be positive");
    }
    let spec = StreamSpec {
        write_gt: !args.no_gt,
        ..StreamSpec::regular(args.frames, args.keyframe_every, args.size, args.size, args.seed)
    };
    let manifest = write_stream(&args.out, &spec)?;
    emit(&format!("{}\n", manifest.display()))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Restore(a) => restore(a),
        Command::SimulatePolicy(a) => simulate(a),
        Command::Warp(a) => warp(a),
        Command::Pair(a) => pair(a),
        Command::InitWeights(a) => init_weights(a),
        Command::Synth(a) => synth(a),
    }
}
