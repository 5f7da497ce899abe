//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every tolerance and budget is a constant below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use livetex_core::cache::{extract_dataset, load_cache, ExtractOptions};
use livetex_core::checkpoint::Checkpoint;
use livetex_core::dataset::{parse_manifest, DatasetConfig, FineLabel, SplitName};
use livetex_core::eval::{cross_dataset, evaluate, protocol_train_data, select_split, LoadedDataset};
use livetex_core::features::{
    deserialize_sample, extract_frame, fit_norm_stats, serialize_sample, FrameFeature, HistogramSpec, SampleTensor,
    WIRE_HEADER_LEN,
};
use livetex_core::lbp::{apply_riu2, riu2_code, LbpParams, NeighborBits};
use livetex_core::metrics::{acer, balanced_accuracy, confusion, roc_auc, EvalOutcome, DEFAULT_THRESHOLD};
use livetex_core::nn::{Mode, Model, ModelConfig};
use livetex_core::pixel::{load_frame, ChannelLabel, ChannelPlane};
use livetex_core::synth::{synth_generate, SynthParams};
use livetex_core::train::{train, EpochRecord, TrainConfig};

const LBP_BUDGET: Duration = Duration::from_secs(1);
const ROTATION_PLANES: usize = 20;
const ROTATION_MAX_L1_FRACTION: f64 = 0.01;
const GRAD_SEEDS: u64 = 100;
const GRAD_EPS: f64 = 1e-5;
const GRAD_MAX_REL: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const NORM_ROWS: usize = 1000;
const NORM_MEAN_TOL: f64 = 1e-9;
const NORM_STD_TOL: f64 = 1e-6;
const AUC_POINTS: usize = 1000;
const AUC_TOL: f64 = 1e-12;
const IDENTITY_SETS: usize = 100;
const DEFAULT_DIM: usize = 504;
const DEFAULT_FRAMES: usize = 16;
const MAX_WIRE_BYTES_PER_FRAME: usize = 1100;
const WIRE_TOL: f64 = 1.0 / 65535.0;
const E2E_MAX_EPOCHS: usize = 30;
const E2E_EPOCHS: usize = 10;
const E2E_MIN_WINDOW_BACC: f64 = 0.95;
const E2E_VIDEO_SLACK: f64 = 0.02;
const E2E_BUDGET: Duration = Duration::from_secs(600);
const E2E_TRAIN_SEED: u64 = 7;

type Check = fn(&mut Shared) -> Result<String, String>;

/// Results reused between criteria so the end-to-end pipeline is not run
/// more often than the criteria require.
#[derive(Default)]
struct Shared {
    e2e: Option<E2eRun>,
}

#[derive(Clone)]
struct E2eRun {
    history: Vec<EpochRecord>,
    checkpoint_bytes: Vec<u8>,
    window_bacc: f64,
    video_bacc: f64,
    window_metrics: String,
    video_metrics: String,
    elapsed: Duration,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn brute_riu2(pattern: u32, p: u32) -> u32 {
    let bit = |i: u32| (pattern >> (i % p)) & 1;
    let u: u32 = (0..p).map(|i| (bit(i) != bit(i + 1)) as u32).sum();
    if u <= 2 {
        pattern.count_ones()
    } else {
        p + 1
    }
}

fn lbp_oracle(_: &mut Shared) -> Result<String, String> {
    let start = Instant::now();
    let mut uniform = 0;
    for pattern in 0u32..256 {
        let bits: Vec<u8> = (0..8).map(|i| ((pattern >> i) & 1) as u8).collect();
        let nb = NeighborBits::new(bits).map_err(|e| e.to_string())?;
        let code = riu2_code(&nb);
        let expected = brute_riu2(pattern, 8);
        ensure(code == expected, || format!("pattern {pattern:08b}: {code} != {expected}"))?;
        if expected <= 8 {
            uniform += 1;
        }
        for k in 0..8 {
            let r = riu2_code(&nb.rotated(k));
            ensure(r == code, || format!("pattern {pattern:08b} shift {k}: {r} != {code}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(uniform == 58, || format!("{uniform} uniform patterns"))?;
    ensure(elapsed < LBP_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("256 patterns x 8 shifts, 58 uniform, {elapsed:?}"))
}

fn rot90(w: usize, h: usize, v: &[u8]) -> Vec<u8> {
    // Output is h wide and w tall: out(x', y') = in(y', h - 1 - x').
    let mut out = vec![0; w * h];
    for yp in 0..w {
        for xp in 0..h {
            out[yp * h + xp] = v[(h - 1 - xp) * w + yp];
        }
    }
    out
}

fn riu2_counts(plane: &ChannelPlane, params: &LbpParams) -> Result<Vec<u64>, String> {
    let map = apply_riu2(plane, params).map_err(|e| e.to_string())?;
    let mut counts = vec![0u64; params.points + 2];
    for &c in map.codes() {
        counts[c as usize] += 1;
    }
    Ok(counts)
}

fn rotation_robustness(_: &mut Shared) -> Result<String, String> {
    let params = LbpParams::new(8, 2.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..ROTATION_PLANES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (w, h) = (128, 128);
        let values: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let rotated = rot90(w, h, &values);
        let a = ChannelPlane::new(w, h, ChannelLabel::Y, values).map_err(|e| e.to_string())?;
        let b = ChannelPlane::new(h, w, ChannelLabel::Y, rotated).map_err(|e| e.to_string())?;
        let ha = riu2_counts(&a, &params)?;
        let hb = riu2_counts(&b, &params)?;
        let valid: u64 = ha.iter().sum();
        let l1: u64 = ha.iter().zip(&hb).map(|(x, y)| x.abs_diff(*y)).sum();
        let frac = l1 as f64 / valid as f64;
        worst = worst.max(frac);
        ensure(frac <= ROTATION_MAX_L1_FRACTION, || {
            format!("plane {seed}: L1 {l1} of {valid} valid pixels ({frac:.5})")
        })?;
    }
    Ok(format!("{ROTATION_PLANES} planes, worst L1 fraction {worst:.6}"))
}

/// Worst relative error over parameter tensors, `|a - n| / max(|a|, |n|)`
/// in the Euclidean norm of each tensor, and the worst absolute elementwise
/// difference.
fn gradient_errors(m: &Model, samples: &[Array2<f64>], labels: &[usize], dropout_seed: u64) -> (f64, f64) {
    let views: Vec<ArrayView2<f64>> = samples.iter().map(|s| s.view()).collect();
    // The same seed before every forward pass fixes the dropout masks.
    let rng = || ChaCha8Rng::seed_from_u64(dropout_seed);
    let (_, cache) = m.forward(&views, Mode::Train, &mut rng()).unwrap();
    let (grads, _) = m.backward(&cache, labels).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = m.clone();
    let (mut worst_rel, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for (ti, ga) in analytic.iter().enumerate() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (i, &a) in ga.iter().enumerate() {
            let orig = probe.params.tensors()[ti][i];
            let mut loss_at = |v: f64| {
                probe.params.tensors_mut()[ti][i] = v;
                let (o, _) = probe.forward(&views, Mode::Train, &mut rng()).unwrap();
                probe.loss(&o, labels)
            };
            let num = (loss_at(orig + GRAD_EPS) - loss_at(orig - GRAD_EPS)) / (2.0 * GRAD_EPS);
            probe.params.tensors_mut()[ti][i] = orig;
            diff2 += (a - num).powi(2);
            a2 += a * a;
            n2 += num * num;
            worst_abs = worst_abs.max((a - num).abs());
        }
        let scale = a2.sqrt().max(n2.sqrt());
        if scale > 0.0 {
            worst_rel = worst_rel.max(diff2.sqrt() / scale);
        }
    }
    (worst_rel, worst_abs)
}

fn gradient_check(_: &mut Shared) -> Result<String, String> {
    let start = Instant::now();
    let (mut worst, mut worst_abs): (f64, f64) = (0.0, 0.0);
    for seed in 0..GRAD_SEEDS {
        let m = Model::new(ModelConfig::dual(8).with_hidden(5), seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 1);
        let samples: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_simple_fn((4, 8), || rng.random_range(-1.0..1.0)))
            .collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let (rel, abs) = gradient_errors(&m, &samples, &labels, seed);
        worst = worst.max(rel);
        worst_abs = worst_abs.max(abs);
        ensure(rel < GRAD_MAX_REL, || format!("seed {seed}: relative error {rel:e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{GRAD_SEEDS} seeds, worst per-tensor relative error {worst:.3e}, worst elementwise |a-n| {worst_abs:.1e}, {elapsed:?}"
    ))
}

fn normalization(_: &mut Shared) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let d = DEFAULT_DIM;
    let mut rows = Array2::from_shape_simple_fn((NORM_ROWS, d), || rng.random::<f64>().powi(3));
    // A constant column is degenerate and must come out as zeros.
    rows.column_mut(7).fill(0.25);
    let stats = fit_norm_stats(rows.outer_iter(), "acceptance").map_err(|e| e.to_string())?;
    let z = stats.normalize_rows(&rows).map_err(|e| e.to_string())?;
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for (j, col) in z.columns().into_iter().enumerate() {
        let mean = col.sum() / NORM_ROWS as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / NORM_ROWS as f64).sqrt();
        if j == 7 {
            ensure(col.iter().all(|&v| v == 0.0), || "degenerate column not zero".into())?;
            continue;
        }
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    ensure(worst_mean < NORM_MEAN_TOL, || format!("max |mean| {worst_mean:e}"))?;
    ensure(worst_std < NORM_STD_TOL, || format!("max |std-1| {worst_std:e}"))?;
    Ok(format!("max |mean| {worst_mean:.2e}, max |std-1| {worst_std:.2e}"))
}

fn pairwise_auc(outcomes: &[EvalOutcome]) -> f64 {
    let pos: Vec<f64> = outcomes.iter().filter(|o| o.is_bonafide()).map(|o| o.score).collect();
    let neg: Vec<f64> = outcomes.iter().filter(|o| !o.is_bonafide()).map(|o| o.score).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn random_outcomes(rng: &mut ChaCha8Rng, n: usize, quantize: bool) -> Vec<EvalOutcome> {
    let labels = [FineLabel::Bonafide, FineLabel::Print, FineLabel::Display];
    let mut v: Vec<EvalOutcome> = (0..n)
        .map(|i| {
            let score: f64 = rng.random();
            let score = if quantize { (score * 20.0).floor() / 20.0 } else { score };
            // Guarantee both classes in every set.
            let label = match i {
                0 => FineLabel::Bonafide,
                1 => FineLabel::Print,
                _ => labels[rng.random_range(0..3)],
            };
            EvalOutcome::new(score, DEFAULT_THRESHOLD, label, format!("v{i}"))
        })
        .collect();
    v.rotate_left(rng.random_range(0..n));
    v
}

fn metric_oracles(_: &mut Shared) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for set in 0..IDENTITY_SETS {
        let v = random_outcomes(&mut rng, AUC_POINTS, set % 2 == 0);
        let auc = roc_auc(&v).map_err(|e| e.to_string())?;
        let oracle = pairwise_auc(&v);
        worst = worst.max((auc - oracle).abs());
        ensure((auc - oracle).abs() <= AUC_TOL, || format!("set {set}: auc {auc} vs oracle {oracle}"))?;

        let len = rng.random_range(2..300);
        let small = random_outcomes(&mut rng, len, false);
        let ba = balanced_accuracy(&small).map_err(|e| e.to_string())?;
        let ac = acer(&small).ok_or("acer undefined")?;
        ensure(ba == 1.0 - ac, || format!("set {set}: balanced accuracy {ba} != 1 - {ac}"))?;
        let c = confusion(&small);
        let (p, n) = (c.bonafide(), c.attacks());
        ensure(c.tp * n + c.tn * p == 2 * p * n - (c.fp * p + c.fn_ * n), || {
            format!("set {set}: integer identity fails for {c:?}")
        })?;
    }
    Ok(format!(
        "{IDENTITY_SETS} sets of {AUC_POINTS} points, worst AUC deviation {worst:.1e}; identity exact on {IDENTITY_SETS} sets"
    ))
}

fn feature_dimensions(_: &mut Shared) -> Result<String, String> {
    let spec = HistogramSpec::default();
    ensure(spec.dim() == DEFAULT_DIM, || format!("d = {}", spec.dim()))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let params = SynthParams {
        users: 1,
        live_per_user: 1,
        attacks_per_user: 0,
        frames: DEFAULT_FRAMES,
        ..SynthParams::default()
    };
    let out = synth_generate(&params, dir.path()).map_err(|e| e.to_string())?;
    let videos = parse_manifest(&out.manifest).map_err(|e| e.to_string())?;
    let rows: Vec<FrameFeature> = videos[0]
        .frame_paths
        .iter()
        .map(|p| extract_frame(&load_frame(p)?, &spec))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let sample = SampleTensor::from_features(spec.layout(), &rows, None).map_err(|e| e.to_string())?;
    ensure(sample.frames.dim() == (DEFAULT_FRAMES, DEFAULT_DIM), || {
        format!("sample shape {:?}", sample.frames.dim())
    })?;
    let bytes = serialize_sample(&sample).map_err(|e| e.to_string())?;
    ensure(bytes.len() == WIRE_HEADER_LEN + DEFAULT_FRAMES * DEFAULT_DIM * 2, || {
        format!("{} bytes", bytes.len())
    })?;
    let per_frame = bytes.len().div_ceil(DEFAULT_FRAMES);
    ensure(per_frame <= MAX_WIRE_BYTES_PER_FRAME, || format!("{per_frame} bytes per frame"))?;
    let back = deserialize_sample(&bytes).map_err(|e| e.to_string())?;
    let err = back
        .frames
        .iter()
        .zip(&sample.frames)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(err <= WIRE_TOL, || format!("round-trip error {err:e}"))?;
    ensure(back.layout == sample.layout, || "layout changed".into())?;
    Ok(format!(
        "d={DEFAULT_DIM}, sample {DEFAULT_FRAMES}x{DEFAULT_DIM}, {per_frame} bytes/frame, max round-trip error {err:.2e}"
    ))
}

fn extract_synth(params: &SynthParams, root: &Path) -> Result<(DatasetConfig, Vec<SampleTensor>), String> {
    let out = synth_generate(params, root.join("data")).map_err(|e| e.to_string())?;
    let videos = parse_manifest(&out.manifest).map_err(|e| e.to_string())?;
    let opts = ExtractOptions {
        frames: DEFAULT_FRAMES,
        stride: DEFAULT_FRAMES,
        text_dumps: false,
    };
    let cache_dir = root.join("features");
    extract_dataset(&out.config.name, &videos, &HistogramSpec::default(), opts, &cache_dir)
        .map_err(|e| e.to_string())?;
    let cache = load_cache(&cache_dir).map_err(|e| e.to_string())?;
    Ok((out.config, cache.samples))
}

fn e2e_config() -> TrainConfig {
    TrainConfig {
        epochs: E2E_EPOCHS,
        seed: E2E_TRAIN_SEED,
        ..TrainConfig::default()
    }
}

fn run_e2e() -> Result<E2eRun, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (config, samples) = extract_synth(&SynthParams::default(), dir.path())?;
    let spec = HistogramSpec::default();
    let data = protocol_train_data(&config, &samples, "full", DEFAULT_FRAMES, spec).map_err(|e| e.to_string())?;
    let cfg = e2e_config();
    let outcome = train(&cfg, &data).map_err(|d| d.error.to_string())?;
    if std::env::var_os("ACCEPTANCE_VERBOSE").is_some() {
        for r in &outcome.history {
            eprintln!("{}", serde_json::to_string(r).unwrap());
        }
    }
    let bytes = outcome.checkpoint.to_bytes();
    let reloaded = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let test = select_split(&config, &samples, "full", SplitName::Testing).map_err(|e| e.to_string())?;
    let ev = evaluate(&reloaded, &test).map_err(|e| e.to_string())?;
    if std::env::var_os("ACCEPTANCE_VERBOSE").is_some() {
        for o in ev.window_outcomes.iter().filter(|o| o.predicted_bonafide != o.is_bonafide()) {
            eprintln!("miss {} {} {:.4}", o.video_id, o.label, o.score);
        }
    }
    Ok(E2eRun {
        history: outcome.history,
        checkpoint_bytes: bytes,
        window_bacc: ev.window.balanced_accuracy.ok_or("window metrics undefined")?,
        video_bacc: ev.video.balanced_accuracy.ok_or("video metrics undefined")?,
        window_metrics: serde_json::to_string(&ev.window).map_err(|e| e.to_string())?,
        video_metrics: serde_json::to_string(&ev.video).map_err(|e| e.to_string())?,
        elapsed: start.elapsed(),
    })
}

fn end_to_end(shared: &mut Shared) -> Result<String, String> {
    ensure(E2E_EPOCHS <= E2E_MAX_EPOCHS, || "epoch cap exceeded".into())?;
    let run = run_e2e()?;
    shared.e2e = Some(run.clone());
    ensure(run.elapsed < E2E_BUDGET, || format!("took {:?}", run.elapsed))?;
    ensure(run.window_bacc >= E2E_MIN_WINDOW_BACC, || {
        format!("window balanced accuracy {:.4}", run.window_bacc)
    })?;
    ensure(run.video_bacc >= run.window_bacc - E2E_VIDEO_SLACK, || {
        format!("video {:.4} < window {:.4} - {E2E_VIDEO_SLACK}", run.video_bacc, run.window_bacc)
    })?;
    Ok(format!(
        "window balanced accuracy {:.4}, video {:.4}, {E2E_EPOCHS} epochs, {:.1?}",
        run.window_bacc, run.video_bacc, run.elapsed
    ))
}

fn determinism(shared: &mut Shared) -> Result<String, String> {
    let first = match shared.e2e.clone() {
        Some(r) => r,
        None => run_e2e()?,
    };
    let second = run_e2e()?;
    ensure(first.history == second.history, || "training histories differ".into())?;
    ensure(first.checkpoint_bytes == second.checkpoint_bytes, || "checkpoints differ".into())?;
    ensure(
        first.window_metrics == second.window_metrics && first.video_metrics == second.video_metrics,
        || "final metrics differ".into(),
    )?;
    Ok(format!(
        "{} epochs and final metrics identical across runs ({:.1?})",
        first.history.len(),
        second.elapsed
    ))
}

fn cross_dataset_harness(_: &mut Shared) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = SynthParams {
        users: 10,
        frames: 32,
        size: 96,
        ..SynthParams::default()
    };
    let a_params = SynthParams {
        name: "synth-a".into(),
        seed: 11,
        ..small.clone()
    };
    let b_params = SynthParams {
        name: "synth-b".into(),
        seed: 23,
        texture_noise: 9.0,
        print_blur: 1,
        moire_period: 7.0,
        moire_amplitude: 12.0,
        black_lift: 28.0,
        ..small
    };
    let (a_cfg, a_samples) = extract_synth(&a_params, &dir.path().join("a"))?;
    let (b_cfg, b_samples) = extract_synth(&b_params, &dir.path().join("b"))?;
    let a = LoadedDataset {
        config: a_cfg,
        samples: a_samples,
    };
    let b = LoadedDataset {
        config: b_cfg,
        samples: b_samples,
    };
    let cfg = TrainConfig {
        epochs: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let spec = HistogramSpec::default();

    // Dataset disjointness: a dataset cannot be on both sides.
    let err = cross_dataset(std::slice::from_ref(&a), &a, &cfg, spec, DEFAULT_FRAMES);
    ensure(err.is_err(), || "same dataset on both sides was accepted".into())?;

    // User disjointness: a config whose splits share a user is refused.
    let mut overlapping = a.config.clone();
    overlapping.splits.testing.push(overlapping.splits.training[0].clone());
    ensure(overlapping.validate().is_err(), || "overlapping split users accepted".into())?;

    let (report, _) = cross_dataset(std::slice::from_ref(&a), &b, &cfg, spec, DEFAULT_FRAMES).map_err(|e| e.to_string())?;
    ensure(report.window_hter.is_finite() && report.video_hter.is_finite(), || {
        format!("HTER window {} video {}", report.window_hter, report.video_hter)
    })?;
    ensure(
        (0.0..=1.0).contains(&report.window_hter) && (0.0..=1.0).contains(&report.video_hter),
        || "HTER outside [0, 1]".into(),
    )?;
    ensure(report.evaluation.window_outcomes.len() == b.samples.len(), || {
        "test set was not evaluated in full".into()
    })?;
    ensure(
        report.evaluation.window_outcomes.iter().all(|o| o.video_id.starts_with("synth-b/")),
        || "test outcomes not namespaced by dataset".into(),
    )?;
    Ok(format!(
        "train synth-a, test synth-b: HTER window {:.4}, video {:.4}",
        report.window_hter, report.video_hter
    ))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("lbp-oracle", lbp_oracle),
        ("rotation-robustness", rotation_robustness),
        ("gradient-check", gradient_check),
        ("normalization", normalization),
        ("metric-oracles", metric_oracles),
        ("feature-dimensions", feature_dimensions),
        ("end-to-end-synthetic", end_to_end),
        ("determinism", determinism),
        ("cross-dataset", cross_dataset_harness),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())))));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
