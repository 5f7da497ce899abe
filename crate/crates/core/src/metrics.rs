//! Presentation attack detection error rates.
//!
//! Bona fide presentations are the positive class. APCER is the share of
//! attacks accepted, BPCER the share of bona fide presentations rejected.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::FineLabel;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Probability of bona fide.
    pub score: f64,
    pub predicted_bonafide: bool,
    pub label: FineLabel,
    pub video_id: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl EvalOutcome {
    pub fn new(score: f64, threshold: f64, label: FineLabel, video_id: impl Into<String>) -> Self {
        Self {
            score,
            predicted_bonafide: score >= threshold,
            label,
            video_id: video_id.into(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attrs(mut self, attrs: BTreeMap<String, String>) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn is_bonafide(&self) -> bool {
        self.label.is_bonafide()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn bonafide(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn attacks(&self) -> usize {
        self.tn + self.fp
    }
}

pub fn confusion(outcomes: &[EvalOutcome]) -> Confusion {
    let mut c = Confusion::default();
    for o in outcomes {
        match (o.is_bonafide(), o.predicted_bonafide) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn rate(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Attacks accepted as bona fide; absent without attack samples.
pub fn apcer(outcomes: &[EvalOutcome]) -> Option<f64> {
    let c = confusion(outcomes);
    rate(c.fp, c.attacks())
}

/// Bona fide presentations rejected; absent without bona fide samples.
pub fn bpcer(outcomes: &[EvalOutcome]) -> Option<f64> {
    let c = confusion(outcomes);
    rate(c.fn_, c.bonafide())
}

/// `(APCER + BPCER) / 2`, evaluated as one integer ratio so that HTER and
/// balanced accuracy derived from it agree bit for bit.
pub fn acer(outcomes: &[EvalOutcome]) -> Option<f64> {
    let c = confusion(outcomes);
    let (p, n) = (c.bonafide() as u128, c.attacks() as u128);
    if p == 0 || n == 0 {
        return None;
    }
    Some((c.fp as u128 * p + c.fn_ as u128 * n) as f64 / (2 * p * n) as f64)
}

fn require_both(c: &Confusion) -> Result<()> {
    if c.bonafide() == 0 || c.attacks() == 0 {
        return Err(Error::Empty(format!(
            "metric needs both classes ({} bona fide, {} attack)",
            c.bonafide(),
            c.attacks()
        )));
    }
    Ok(())
}

/// `(FPR + FNR) / 2`. With bona fide as the positive class FPR is APCER and
/// FNR is BPCER, so this is ACER over a set containing both classes.
pub fn hter(outcomes: &[EvalOutcome]) -> Result<f64> {
    require_both(&confusion(outcomes))?;
    Ok(acer(outcomes).expect("both classes present"))
}

/// `(TPR + TNR) / 2`, which equals `1 - ACER`.
pub fn balanced_accuracy(outcomes: &[EvalOutcome]) -> Result<f64> {
    Ok(1.0 - hter(outcomes)?)
}

/// Probability that a random bona fide score exceeds a random attack score,
/// ties counting one half. Computed from average ranks.
pub fn roc_auc(outcomes: &[EvalOutcome]) -> Result<f64> {
    let c = confusion(outcomes);
    require_both(&c)?;
    if let Some(o) = outcomes.iter().find(|o| !o.score.is_finite()) {
        return Err(Error::NonFinite(format!("score {} of {}", o.score, o.video_id)));
    }
    let mut order: Vec<&EvalOutcome> = outcomes.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|o| o.is_bonafide()).count();
        positive_rank_sum += mean_rank * positives as f64;
        i = j;
    }
    let (np, nn) = (c.bonafide() as f64, c.attacks() as f64);
    Ok((positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub confusion: Confusion,
    pub apcer: Option<f64>,
    pub bpcer: Option<f64>,
    pub acer: Option<f64>,
    pub hter: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub roc_auc: Option<f64>,
}

impl MetricReport {
    pub fn compute(outcomes: &[EvalOutcome]) -> Self {
        Self {
            count: outcomes.len(),
            confusion: confusion(outcomes),
            apcer: apcer(outcomes),
            bpcer: bpcer(outcomes),
            acer: acer(outcomes),
            hter: hter(outcomes).ok(),
            balanced_accuracy: balanced_accuracy(outcomes).ok(),
            roc_auc: roc_auc(outcomes).ok(),
        }
    }

    pub const TABLE_HEADER: &'static str =
        "      n  bonafide  attack   APCER   BPCER    ACER    HTER  BalAcc  ROCAUC";

    pub fn table_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "      -".to_string(), |v| format!("{v:7.4}"));
        format!(
            "{:7} {:9} {:7} {} {} {} {} {} {}",
            self.count,
            self.confusion.bonafide(),
            self.confusion.attacks(),
            f(self.apcer),
            f(self.bpcer),
            f(self.acer),
            f(self.hter),
            f(self.balanced_accuracy),
            f(self.roc_auc)
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::TABLE_HEADER)?;
        write!(f, "{}", self.table_row())
    }
}

/// Group key meaning "the fine label" rather than an attribute.
pub const LABEL_KEY: &str = "label";

/// Metrics per value of `key`, an attribute name or [`LABEL_KEY`]. Bona fide
/// outcomes are shared by every attack-type group when grouping by label, so
/// each group still has both classes.
pub fn grouped_report(outcomes: &[EvalOutcome], key: &str) -> Vec<(String, MetricReport)> {
    let mut groups: BTreeMap<String, Vec<EvalOutcome>> = BTreeMap::new();
    if key == LABEL_KEY {
        let bonafide: Vec<EvalOutcome> = outcomes.iter().filter(|o| o.is_bonafide()).cloned().collect();
        for o in outcomes.iter().filter(|o| !o.is_bonafide()) {
            groups
                .entry(o.label.to_string())
                .or_insert_with(|| bonafide.clone())
                .push(o.clone());
        }
        if groups.is_empty() && !bonafide.is_empty() {
            groups.insert(FineLabel::Bonafide.to_string(), bonafide);
        }
    } else {
        for o in outcomes {
            let v = o.attrs.get(key).cloned().unwrap_or_else(|| "(missing)".into());
            groups.entry(v).or_default().push(o.clone());
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, MetricReport::compute(&v)))
        .collect()
}
