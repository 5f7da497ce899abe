use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use livetex_core::cache::{extract_dataset, load_cache, video_samples, ExtractOptions, FeatureCache};
use livetex_core::checkpoint::Checkpoint;
use livetex_core::dataset::{list_frames, parse_manifest, DatasetConfig, FineLabel, SplitName, VideoRecord};
use livetex_core::eval::{
    classify_batch, classify_sample, cross_dataset, majority_vote, protocol_train_data, run_protocol, Evaluation,
    LoadedDataset,
};
use livetex_core::features::{deserialize_sample, HistogramSpec, SampleTensor};
use livetex_core::lbp::LbpParams;
use livetex_core::metrics::{grouped_report, MetricReport, LABEL_KEY};
use livetex_core::nn::Variant;
use livetex_core::pixel::SpaceSet;
use livetex_core::synth::{synth_generate, SynthParams};
use livetex_core::train::{train, RmspropConfig, TrainConfig, TrainOutcome};
use livetex_service::AppState;

const CHECKPOINT_FILE: &str = "model.ctm";
const HISTORY_FILE: &str = "history.jsonl";

#[derive(Parser)]
#[command(name = "livetex", version, about = "Color and texture LSTM presentation attack detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (frames, manifest.csv, dataset.toml).
    Synth(SynthArgs),
    /// Extract per-window sample tensors into a feature cache.
    Extract(ExtractArgs),
    /// Train a classifier on a feature cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Classify a serialized sample or a directory of frames.
    Infer(InferArgs),
    /// Train on some datasets and report HTER on another.
    Cross(CrossArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    name: String,
    #[arg(long, default_value_t = 20)]
    users: usize,
    #[arg(long, default_value_t = 2)]
    live_per_user: usize,
    #[arg(long, default_value_t = 4)]
    attacks_per_user: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 64)]
    video_frames: usize,
    /// Frame width and height in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Color histogram buckets per channel (m1).
    #[arg(long, default_value_t = 50)]
    buckets_color: usize,
    /// LBP histogram buckets per channel (m2).
    #[arg(long, default_value_t = 34)]
    buckets_lbp: usize,
    /// LBP sampling points (P).
    #[arg(long, default_value_t = 32)]
    lbp_points: usize,
    /// LBP radius (R) in pixels.
    #[arg(long, default_value_t = 8.0)]
    lbp_radius: f64,
    /// Color spaces, comma-separated.
    #[arg(long, default_value = "hsv,ycbcr")]
    spaces: SpaceSet,
}

impl SpecArgs {
    fn spec(&self) -> Result<HistogramSpec> {
        let spec = HistogramSpec {
            color_buckets: self.buckets_color,
            lbp_buckets: self.buckets_lbp,
            lbp: LbpParams {
                points: self.lbp_points,
                radius: self.lbp_radius,
            },
            spaces: self.spaces,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset manifest CSV.
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    manifest: Option<PathBuf>,
    /// Dataset config TOML; its manifest and name are used.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for the feature cache.
    #[arg(long)]
    out: PathBuf,
    /// Frames per sample (n).
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Window stride in frames; defaults to --frames (non-overlapping).
    #[arg(long)]
    stride: Option<usize>,
    /// Also write full-precision text dumps of every sample.
    #[arg(long)]
    dump_text: bool,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "dual")]
    variant: Variant,
    /// Hidden units; defaults to 480 (single) or 240 (dual).
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// RMSprop decay of the squared-gradient average.
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            optimizer: RmspropConfig {
                lr: self.lr,
                decay: self.alpha,
                eps: self.eps,
            },
            seed: self.seed,
            variant: self.variant,
            hidden: self.hidden,
        };
        c.validate()?;
        if self.hidden == Some(0) {
            bail!("--hidden must be >= 1");
        }
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset config TOML (splits and protocols).
    #[arg(long)]
    dataset: PathBuf,
    /// Feature cache written by `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full")]
    protocol: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "full")]
    protocol: String,
    #[arg(long, default_value = "testing")]
    split: SplitName,
    /// Attribute (or `label`) to break metrics down by.
    #[arg(long, default_value = LABEL_KEY)]
    group_by: String,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A wire-format sample file.
    #[arg(long, conflicts_with = "video", required_unless_present = "video")]
    sample: Option<PathBuf>,
    /// A directory of frames from one video.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Window stride for --video; defaults to the model's frames per sample.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct CrossArgs {
    /// Training dataset configs, paired in order with --train-features.
    #[arg(long = "train-dataset", required = true)]
    train_datasets: Vec<PathBuf>,
    #[arg(long = "train-features", required = true)]
    train_features: Vec<PathBuf>,
    #[arg(long)]
    test_dataset: PathBuf,
    #[arg(long)]
    test_features: PathBuf,
    /// Output directory for the checkpoint, history and report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &outcome.history {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

fn save_training(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    outcome.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    write_history(&out.join(HISTORY_FILE), outcome)?;
    info!(
        "best epoch {} saved to {}",
        outcome.best_epoch,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn print_evaluation(ev: &Evaluation, group_by: &str) {
    println!("window level");
    println!("{}", ev.window);
    println!("video level (majority vote)");
    println!("{}", ev.video);
    let groups = grouped_report(&ev.window_outcomes, group_by);
    if !groups.is_empty() {
        println!("window level by {group_by}");
        println!("{:>10} {}", "", MetricReport::TABLE_HEADER);
        for (k, r) in groups {
            println!("{k:>10} {}", r.table_row());
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams {
        name: a.name,
        seed: a.seed,
        users: a.users,
        live_per_user: a.live_per_user,
        attacks_per_user: a.attacks_per_user,
        frames: a.video_frames,
        size: a.size,
        ..SynthParams::default()
    };
    let out = synth_generate(&params, &a.out)?;
    println!("{}", out.config_path.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let spec = a.spec.spec()?;
    let stride = a.stride.unwrap_or(a.frames);
    ensure!(a.frames >= 1 && stride >= 1, "--frames and --stride must be >= 1");
    let (name, manifest) = match (&a.dataset, &a.manifest) {
        (Some(d), _) => {
            let cfg = DatasetConfig::load(d)?;
            (cfg.name, cfg.manifest)
        }
        (None, Some(m)) => (
            m.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned()),
            m.clone(),
        ),
        (None, None) => bail!("one of --manifest or --dataset is required"),
    };
    let videos = parse_manifest(&manifest)?;
    let opts = ExtractOptions {
        frames: a.frames,
        stride,
        text_dumps: a.dump_text,
    };
    let meta = extract_dataset(&name, &videos, &spec, opts, &a.out)?;
    println!("{} samples of {}x{} written to {}", meta.samples, a.frames, spec.dim(), a.out.display());
    Ok(())
}

fn load_features(path: &Path) -> Result<FeatureCache> {
    load_cache(path).with_context(|| format!("loading feature cache {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = a.model.config()?;
    let dataset = DatasetConfig::load(&a.dataset)?;
    let cache = load_features(&a.features)?;
    let data = protocol_train_data(&dataset, &cache.samples, &a.protocol, cache.meta.frames, cache.meta.spec)?;
    info!(
        "training on {} samples, validating on {}",
        data.train.len(),
        data.validation.len()
    );
    match train(&config, &data) {
        Ok(outcome) => save_training(&a.out, &outcome),
        Err(d) => {
            if let Some(last) = d.last_good.as_deref() {
                save_training(&a.out, last)?;
                warn!("kept the best checkpoint from before epoch {}", d.epoch);
            }
            Err(d.error).context(format!("training diverged in epoch {}", d.epoch))
        }
    }
}

fn check_compatible(ck: &Checkpoint, cache: &FeatureCache) -> Result<()> {
    ensure!(
        ck.spec == cache.meta.spec && ck.frames == cache.meta.frames,
        "feature cache ({} frames, {:?}) does not match the checkpoint ({} frames, {:?})",
        cache.meta.frames,
        cache.meta.spec,
        ck.frames,
        ck.spec
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let dataset = DatasetConfig::load(&a.dataset)?;
    let cache = load_features(&a.features)?;
    check_compatible(&ck, &cache)?;
    let report = run_protocol(&ck, &dataset, &cache.samples, &a.protocol, a.split)?;
    ensure!(
        !report.evaluation.window_outcomes.is_empty(),
        "protocol {} selects no {} samples",
        a.protocol,
        a.split.as_str()
    );
    println!(
        "dataset {} protocol {} split {}",
        report.dataset,
        report.protocol,
        report.split.as_str()
    );
    print_evaluation(&report.evaluation, &a.group_by);
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if let Some(path) = &a.sample {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let sample = deserialize_sample(&bytes)?;
        let (is_bonafide, score) = classify_sample(&ck, &sample)?;
        println!(
            "{}",
            serde_json::json!({
                "decision": if is_bonafide { "bonafide" } else { "attack" },
                "is_bonafide": is_bonafide,
                "score": score,
            })
        );
        return Ok(());
    }
    let dir = a.video.as_ref().expect("clap requires --sample or --video");
    let stride = a.stride.unwrap_or(ck.frames);
    ensure!(stride >= 1, "--stride must be >= 1");
    let video = VideoRecord {
        video_id: dir.display().to_string(),
        user_id: String::new(),
        // Unknown at inference time; the label is not used for decisions.
        label: FineLabel::Bonafide,
        attrs: Default::default(),
        frame_paths: list_frames(dir)?,
    };
    let samples = video_samples(&video, &ck.spec, ck.frames, stride)?;
    ensure!(
        !samples.is_empty(),
        "{} has {} frames, fewer than the {} the model needs",
        dir.display(),
        video.frame_paths.len(),
        ck.frames
    );
    let refs: Vec<&SampleTensor> = samples.iter().collect();
    let scored = classify_batch(&ck, &refs)?;
    let decisions: Vec<bool> = scored.iter().map(|s| s.0).collect();
    let verdict = majority_vote(&decisions)?;
    let windows: Vec<serde_json::Value> = samples
        .iter()
        .zip(&scored)
        .map(|(s, (d, score))| {
            let p = s.provenance.as_ref().expect("extracted samples carry provenance");
            serde_json::json!({ "start": p.frame_start, "end": p.frame_end, "is_bonafide": d, "score": score })
        })
        .collect();
    let yes = decisions.iter().filter(|&&d| d).count() as i64;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "decision": if verdict { "bonafide" } else { "attack" },
            "is_bonafide": verdict,
            "margin": 2 * yes - decisions.len() as i64,
            "windows": windows,
        }))?
    );
    Ok(())
}

fn cmd_cross(a: CrossArgs) -> Result<()> {
    let config = a.model.config()?;
    ensure!(
        a.train_datasets.len() == a.train_features.len(),
        "--train-dataset and --train-features must be given the same number of times"
    );
    let load = |cfg: &Path, features: &Path| -> Result<(LoadedDataset, FeatureCache)> {
        let config = DatasetConfig::load(cfg)?;
        let cache = load_features(features)?;
        Ok((
            LoadedDataset {
                config,
                samples: cache.samples.clone(),
            },
            cache,
        ))
    };
    let mut train_sets = Vec::new();
    let mut meta = None;
    for (c, f) in a.train_datasets.iter().zip(&a.train_features) {
        let (d, cache) = load(c, f)?;
        match &meta {
            None => meta = Some((cache.meta.spec, cache.meta.frames)),
            Some(m) => ensure!(
                *m == (cache.meta.spec, cache.meta.frames),
                "feature caches were extracted with different settings"
            ),
        }
        train_sets.push(d);
    }
    let (spec, frames) = meta.expect("at least one training dataset");
    let (test, test_cache) = load(&a.test_dataset, &a.test_features)?;
    ensure!(
        (test_cache.meta.spec, test_cache.meta.frames) == (spec, frames),
        "test features were extracted with different settings"
    );
    let (report, checkpoint) = cross_dataset(&train_sets, &test, &config, spec, frames)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    checkpoint.save(a.out.join(CHECKPOINT_FILE))?;
    let mut f = fs::File::create(a.out.join(HISTORY_FILE))?;
    for r in &report.history {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "train {} -> test {}: HTER {:.4} per window, {:.4} per video",
        report.train_datasets.join("+"),
        report.test_dataset,
        report.window_hter,
        report.video_hter
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let state = Arc::new(AppState::new(model));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(livetex_service::serve(state, SocketAddr::new(a.host, a.port)))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIVETEX_LOG", "info")).init();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Cross(a) => cmd_cross(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
