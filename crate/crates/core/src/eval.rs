//! Sample classification, per-video majority vote, protocol evaluation and
//! the cross-dataset harness.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{DatasetConfig, FineLabel, SplitName};
use crate::error::{Error, Result};
use crate::features::SampleTensor;
use crate::metrics::{hter, EvalOutcome, MetricReport, DEFAULT_THRESHOLD};
use crate::train::{train, EpochRecord, TrainConfig, TrainData};

fn check_shape(ck: &Checkpoint, s: &SampleTensor) -> Result<()> {
    if s.dim() != ck.stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: ck.stats.dim(),
            actual: s.dim(),
        });
    }
    if s.layout != ck.spec.layout() {
        return Err(Error::InvalidParam(format!(
            "sample layout {:?} does not match the model's {:?}",
            s.layout,
            ck.spec.layout()
        )));
    }
    if s.len() != ck.frames {
        return Err(Error::DimensionMismatch {
            expected: ck.frames,
            actual: s.len(),
        });
    }
    Ok(())
}

/// `(is_bonafide, P(bonafide))` for each raw (unnormalized) sample.
pub fn classify_batch(ck: &Checkpoint, samples: &[&SampleTensor]) -> Result<Vec<(bool, f64)>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let normalized = samples
        .iter()
        .map(|s| {
            check_shape(ck, s)?;
            ck.stats.normalize_rows(&s.frames)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<ArrayView2<f64>> = normalized.iter().map(|a| a.view()).collect();
    let scores = ck.model.predict(&views)?;
    Ok(scores.into_iter().map(|p| (p >= DEFAULT_THRESHOLD, p)).collect())
}

pub fn classify_sample(ck: &Checkpoint, sample: &SampleTensor) -> Result<(bool, f64)> {
    Ok(classify_batch(ck, &[sample])?[0])
}

/// Bona fide only with a strict majority; ties go to attack.
pub fn majority_vote(decisions: &[bool]) -> Result<bool> {
    if decisions.is_empty() {
        return Err(Error::Empty("majority vote over zero windows".into()));
    }
    let yes = decisions.iter().filter(|&&d| d).count();
    Ok(yes * 2 > decisions.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub video_id: String,
    pub user_id: String,
    pub label: FineLabel,
    pub attrs: BTreeMap<String, String>,
    pub decisions: Vec<bool>,
    pub scores: Vec<f64>,
    /// Bona fide votes minus attack votes.
    pub margin: i64,
    pub is_bonafide: bool,
    /// Mean window score; used only for ranking metrics.
    pub score: f64,
}

impl VideoVerdict {
    pub fn outcome(&self) -> EvalOutcome {
        EvalOutcome {
            score: self.score,
            predicted_bonafide: self.is_bonafide,
            label: self.label,
            video_id: self.video_id.clone(),
            attrs: self.attrs.clone(),
        }
    }
}

/// Window outcomes and per-video verdicts over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub window: MetricReport,
    pub video: MetricReport,
    pub window_outcomes: Vec<EvalOutcome>,
    pub videos: Vec<VideoVerdict>,
}

/// Groups window outcomes by video, in first-seen order.
pub fn aggregate_videos(windows: &[EvalOutcome], users: &[&str]) -> Vec<VideoVerdict> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in windows.iter().enumerate() {
        let g = groups.entry(o.video_id.as_str()).or_default();
        if g.is_empty() {
            order.push(o.video_id.clone());
        }
        g.push(i);
    }
    order
        .iter()
        .map(|vid| {
            let idx = &groups[vid.as_str()];
            let decisions: Vec<bool> = idx.iter().map(|&i| windows[i].predicted_bonafide).collect();
            let scores: Vec<f64> = idx.iter().map(|&i| windows[i].score).collect();
            let first = &windows[idx[0]];
            let yes = decisions.iter().filter(|&&d| d).count() as i64;
            VideoVerdict {
                video_id: vid.clone(),
                user_id: users.get(idx[0]).copied().unwrap_or_default().to_string(),
                label: first.label,
                attrs: first.attrs.clone(),
                margin: 2 * yes - decisions.len() as i64,
                is_bonafide: majority_vote(&decisions).expect("every group has a window"),
                score: scores.iter().sum::<f64>() / scores.len() as f64,
                decisions,
                scores,
            }
        })
        .collect()
}

pub fn evaluate(ck: &Checkpoint, samples: &[&SampleTensor]) -> Result<Evaluation> {
    let mut window_outcomes = Vec::with_capacity(samples.len());
    let mut users = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        for (s, (decision, score)) in chunk.iter().zip(classify_batch(ck, chunk)?) {
            let p = s
                .provenance
                .as_ref()
                .ok_or_else(|| Error::InvalidParam("evaluation sample without provenance".into()))?;
            let mut o = EvalOutcome::new(score, DEFAULT_THRESHOLD, p.label, p.video_id.clone()).with_attrs(p.attrs.clone());
            o.predicted_bonafide = decision;
            window_outcomes.push(o);
            users.push(p.user_id.as_str());
        }
    }
    let videos = aggregate_videos(&window_outcomes, &users);
    let video_outcomes: Vec<EvalOutcome> = videos.iter().map(VideoVerdict::outcome).collect();
    Ok(Evaluation {
        window: MetricReport::compute(&window_outcomes),
        video: MetricReport::compute(&video_outcomes),
        window_outcomes,
        videos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub dataset: String,
    pub protocol: String,
    pub split: SplitName,
    pub evaluation: Evaluation,
}

/// Evaluates the samples of one split under a protocol.
pub fn run_protocol(
    ck: &Checkpoint,
    config: &DatasetConfig,
    samples: &[SampleTensor],
    protocol: &str,
    split: SplitName,
) -> Result<ProtocolReport> {
    let filter = config.protocol(protocol)?;
    let selected = select_split(config, samples, protocol, split)?;
    if selected.is_empty() {
        warn!("protocol {:?} selected nothing for split {}", filter.name, split.as_str());
    }
    Ok(ProtocolReport {
        dataset: config.name.clone(),
        protocol: filter.name,
        split,
        evaluation: evaluate(ck, &selected)?,
    })
}

/// Samples of one split under a protocol.
pub fn select_split<'a>(
    config: &DatasetConfig,
    samples: &'a [SampleTensor],
    protocol: &str,
    split: SplitName,
) -> Result<Vec<&'a SampleTensor>> {
    let filter = config.protocol(protocol)?;
    let spec = config.split(split);
    let pred = filter.predicate(split);
    Ok(samples
        .iter()
        .filter(|s| {
            s.provenance
                .as_ref()
                .is_some_and(|p| spec.contains(&p.user_id) && pred.matches(&p.attrs))
        })
        .collect())
}

/// Training data for one dataset: normalization and selection may only see
/// the training and validation splits.
pub fn protocol_train_data<'a>(
    config: &DatasetConfig,
    samples: &'a [SampleTensor],
    protocol: &str,
    frames: usize,
    spec: crate::features::HistogramSpec,
) -> Result<TrainData<'a>> {
    let held_out: BTreeSet<String> = [SplitName::Validation, SplitName::Testing]
        .iter()
        .flat_map(|&s| config.split(s).users)
        .collect();
    Ok(TrainData {
        train: select_split(config, samples, protocol, SplitName::Training)?,
        validation: select_split(config, samples, protocol, SplitName::Validation)?,
        held_out_users: held_out,
        spec,
        frames,
    })
}

/// A dataset with its extracted samples.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub config: DatasetConfig,
    pub samples: Vec<SampleTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossReport {
    pub train_datasets: Vec<String>,
    pub test_dataset: String,
    pub window_hter: f64,
    pub video_hter: f64,
    pub evaluation: Evaluation,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn qualified(dataset: &str, samples: &[&SampleTensor]) -> Vec<SampleTensor> {
    samples
        .iter()
        .map(|s| {
            let mut s = (*s).clone();
            if let Some(p) = s.provenance.as_mut() {
                p.user_id = format!("{dataset}/{}", p.user_id);
                p.video_id = format!("{dataset}/{}", p.video_id);
            }
            s
        })
        .collect()
}

/// Trains on the union of the training splits of `train_sets` (validating on
/// the union of their validation splits) and reports HTER on every sample of
/// `test_set`, per window and per video. Users are namespaced by dataset.
pub fn cross_dataset(
    train_sets: &[LoadedDataset],
    test_set: &LoadedDataset,
    train_config: &TrainConfig,
    spec: crate::features::HistogramSpec,
    frames: usize,
) -> Result<(CrossReport, Checkpoint)> {
    if train_sets.is_empty() {
        return Err(Error::InvalidParam("no training datasets".into()));
    }
    let mut names = BTreeSet::new();
    for d in train_sets.iter().chain(std::iter::once(test_set)) {
        if !names.insert(d.config.name.clone()) {
            return Err(Error::Leakage(format!(
                "dataset {} appears more than once in the cross-dataset run",
                d.config.name
            )));
        }
    }

    let mut train_samples = Vec::new();
    let mut val_samples = Vec::new();
    for d in train_sets {
        let name = &d.config.name;
        train_samples.extend(qualified(name, &select_split(&d.config, &d.samples, "full", SplitName::Training)?));
        val_samples.extend(qualified(name, &select_split(&d.config, &d.samples, "full", SplitName::Validation)?));
    }
    let test_refs: Vec<&SampleTensor> = test_set.samples.iter().collect();
    let test_samples = qualified(&test_set.config.name, &test_refs);

    let test_users: BTreeSet<String> = test_samples
        .iter()
        .filter_map(|s| s.provenance.as_ref().map(|p| p.user_id.clone()))
        .collect();
    let train_users: BTreeSet<&str> = train_samples
        .iter()
        .filter_map(|s| s.provenance.as_ref().map(|p| p.user_id.as_str()))
        .collect();
    if let Some(u) = test_users.iter().find(|u| train_users.contains(u.as_str())) {
        return Err(Error::Leakage(format!("user {u} is in both training and test data")));
    }
    let mut held_out = test_users;
    held_out.extend(
        val_samples
            .iter()
            .filter_map(|s| s.provenance.as_ref().map(|p| p.user_id.clone())),
    );
    info!(
        "cross-dataset: {} training, {} validation, {} test samples",
        train_samples.len(),
        val_samples.len(),
        test_samples.len()
    );
    if val_samples.is_empty() {
        warn!("no validation samples; the last epoch will be kept");
    }
    let data = TrainData {
        train: train_samples.iter().collect(),
        validation: val_samples.iter().collect(),
        held_out_users: held_out,
        spec,
        frames,
    };
    let outcome = train(train_config, &data).map_err(|d| d.error)?;
    let test_views: Vec<&SampleTensor> = test_samples.iter().collect();
    let evaluation = evaluate(&outcome.checkpoint, &test_views)?;
    let video_outcomes: Vec<EvalOutcome> = evaluation.videos.iter().map(VideoVerdict::outcome).collect();
    let report = CrossReport {
        train_datasets: train_sets.iter().map(|d| d.config.name.clone()).collect(),
        test_dataset: test_set.config.name.clone(),
        window_hter: hter(&evaluation.window_outcomes)?,
        video_hter: hter(&video_outcomes)?,
        evaluation,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    };
    Ok((report, outcome.checkpoint))
}
