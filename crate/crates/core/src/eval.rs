//! Scoring prediction logs against evaluation sets and the robustness
//! metrics derived from them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::labelset::{better, LabelSet, SharedClassMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredClass {
    pub class: u32,
    pub score: f64,
}

impl<'de> Deserialize<'de> for ScoredClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Pair(u32, f64),
            Named { class: u32, score: f64 },
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::Pair(class, score) | Repr::Named { class, score } => ScoredClass { class, score },
        })
    }
}

/// Model output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scores {
    /// One score per class, in label-set order.
    Dense(Vec<f64>),
    /// Highest-scoring classes, sorted by descending score.
    #[serde(alias = "top_k")]
    TopK(Vec<ScoredClass>),
    Argmax(u32),
    /// No retained class survived a top-k remap. Scored as incorrect.
    Abstain,
}

impl Scores {
    /// Top-1 class, with exact ties going to the lower class id. `None`
    /// means abstain.
    pub fn predicted_class(&self, labelset: &LabelSet) -> Option<u32> {
        match self {
            Scores::Dense(values) => {
                let mut best = None;
                for (class, &score) in labelset.ids().zip(values) {
                    if better((score, class), best) {
                        best = Some((score, class));
                    }
                }
                best.map(|(_, c)| c)
            }
            Scores::TopK(entries) => {
                let mut best = None;
                for e in entries {
                    if better((e.score, e.class), best) {
                        best = Some((e.score, e.class));
                    }
                }
                best.map(|(_, c)| c)
            }
            Scores::Argmax(c) => Some(*c),
            Scores::Abstain => None,
        }
    }

    fn validate(&self, sample: &str, labelset: &LabelSet) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Prediction {
                sample: sample.to_string(),
                reason,
            })
        };
        match self {
            Scores::Dense(values) => {
                if values.len() != labelset.len() {
                    return bad(format!("{} dense scores for a {}-class label set", values.len(), labelset.len()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("non-finite score".into());
                }
            }
            Scores::TopK(entries) => {
                if entries.iter().any(|e| !e.score.is_finite()) {
                    return bad("non-finite score".into());
                }
                if entries.windows(2).any(|w| w[0].score < w[1].score) {
                    return bad("top-k list is not sorted by descending score".into());
                }
                if let Some(e) = entries.iter().find(|e| !labelset.contains(e.class)) {
                    return bad(format!("class {} is not in label set {}", e.class, labelset.id()));
                }
            }
            Scores::Argmax(c) if !labelset.contains(*c) => {
                return bad(format!("class {c} is not in label set {}", labelset.id()));
            }
            Scores::Argmax(_) | Scores::Abstain => {}
        }
        Ok(())
    }
}

/// One line of a prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(deserialize_with = "crate::io::string_or_number")]
    pub sample_id: String,
    pub eval_set: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ShiftKind {
    Base,
    V2,
    Sketch,
    Rendition,
    Adversarial,
    Custom(String),
}

impl ShiftKind {
    pub fn as_str(&self) -> &str {
        match self {
            ShiftKind::Base => "base",
            ShiftKind::V2 => "V2",
            ShiftKind::Sketch => "S",
            ShiftKind::Rendition => "R",
            ShiftKind::Adversarial => "A",
            ShiftKind::Custom(name) => name,
        }
    }

    /// Shifts whose class universe is narrower than the label set.
    pub fn uses_shared_classes(&self) -> bool {
        matches!(self, ShiftKind::Rendition | ShiftKind::Adversarial)
    }
}

impl From<String> for ShiftKind {
    fn from(s: String) -> Self {
        match s.as_str() {
            "base" | "val" | "Val" => ShiftKind::Base,
            "V2" | "v2" => ShiftKind::V2,
            "S" | "sketch" => ShiftKind::Sketch,
            "R" | "rendition" => ShiftKind::Rendition,
            "A" | "adversarial" => ShiftKind::Adversarial,
            _ => ShiftKind::Custom(s),
        }
    }
}

impl From<ShiftKind> for String {
    fn from(kind: ShiftKind) -> Self {
        kind.as_str().to_string()
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    #[serde(deserialize_with = "crate::io::string_or_number")]
    pub sample_id: String,
    pub gt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub id: String,
    pub labelset_id: String,
    pub shift_kind: ShiftKind,
    pub samples: Vec<EvalSample>,
}

impl EvalSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::EvalSet(format!("{}: duplicate sample {:?}", self.id, s.sample_id)));
            }
        }
        Ok(())
    }

    /// Keeps only samples whose ground truth lies in `classes`.
    pub fn restricted_to(&self, classes: &LabelSet) -> EvalSet {
        EvalSet {
            id: self.id.clone(),
            labelset_id: classes.id().to_string(),
            shift_kind: self.shift_kind.clone(),
            samples: self.samples.iter().filter(|s| classes.contains(s.gt)).cloned().collect(),
        }
    }

    /// Restriction of this set and of `labelset` to the shared classes.
    pub fn restrict_shared(&self, labelset: &LabelSet, shared: &SharedClassMap) -> Result<(EvalSet, LabelSet)> {
        if shared.is_empty() {
            return Err(Error::EvalSet(format!(
                "{}: no classes shared with label set {}",
                self.id,
                labelset.id()
            )));
        }
        let space = crate::labelset::subset(labelset, &shared.shared, format!("{}@{}", labelset.id(), self.id))?;
        Ok((self.restricted_to(&space), space))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub eval_set_id: String,
    pub shift_kind: ShiftKind,
    pub labelset_id: String,
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// Classes whose row has at least one sample.
    pub per_class_accuracy: BTreeMap<u32, f64>,
    /// Row and column order of `confusion`.
    pub class_ids: Vec<u32>,
    /// `confusion[gt][predicted]` counts in `class_ids` order.
    pub confusion: Vec<Vec<u64>>,
    /// Per ground-truth row, predictions that abstained.
    pub abstained: Vec<u64>,
    pub surplus_predictions: u64,
}

impl EvalResult {
    pub fn row_sum(&self, row: usize) -> u64 {
        self.confusion[row].iter().sum::<u64>() + self.abstained[row]
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_ids.len()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Scores the predictions of one model (and checkpoint) on `eval`.
///
/// `pred_space` is the label set the predictions refer to; `eval_space` is the
/// one the evaluation is carried out over. When they differ, `eval_space` must
/// be a subset of `pred_space` and every prediction is remapped onto it.
/// Predictions for other evaluation sets, or for samples not in `eval`, are
/// counted as surplus and ignored.
pub fn score_predictions<'a>(
    model_id: &str,
    preds: impl IntoIterator<Item = &'a PredictionRecord>,
    eval: &EvalSet,
    pred_space: &LabelSet,
    eval_space: &LabelSet,
) -> Result<EvalResult> {
    eval.validate()?;
    let remap = pred_space.classes() != eval_space.classes();
    if remap && !eval_space.is_subset_of(pred_space) {
        return Err(Error::LabelSetMismatch {
            predictions: pred_space.id().to_string(),
            target: eval_space.id().to_string(),
        });
    }
    if eval.samples.is_empty() {
        return Err(Error::EvalSet(format!("{}: no samples to evaluate", eval.id)));
    }
    let mut row_of = HashMap::with_capacity(eval.samples.len());
    for (i, s) in eval.samples.iter().enumerate() {
        if !eval_space.contains(s.gt) {
            return Err(Error::EvalSet(format!(
                "{}: ground truth {} of sample {:?} is not in label set {}",
                eval.id,
                s.gt,
                s.sample_id,
                eval_space.id()
            )));
        }
        row_of.insert(s.sample_id.as_str(), i);
    }

    let mut predicted: Vec<Option<Option<u32>>> = vec![None; eval.samples.len()];
    let mut surplus = 0u64;
    let mut checkpoint = None;
    for pred in preds {
        let Some(&i) = (pred.eval_set == eval.id).then(|| row_of.get(pred.sample_id.as_str())).flatten() else {
            surplus += 1;
            continue;
        };
        if predicted[i].is_some() {
            return Err(Error::DuplicatePrediction(pred.sample_id.clone()));
        }
        pred.scores.validate(&pred.sample_id, pred_space)?;
        if checkpoint.is_none() {
            checkpoint = pred.checkpoint.clone();
        }
        let class = if remap {
            crate::labelset::remap_prediction(pred, pred_space, eval_space)?
                .scores
                .predicted_class(eval_space)
        } else {
            pred.scores.predicted_class(eval_space)
        };
        predicted[i] = Some(class);
    }
    if surplus > 0 {
        log::warn!("{model_id}/{}: ignored {surplus} surplus predictions", eval.id);
    }
    let missing: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i].is_none()).collect();
    if let Some(&first) = missing.first() {
        return Err(Error::MissingPredictions {
            count: missing.len(),
            first: eval.samples[first].sample_id.clone(),
        });
    }

    let n = eval_space.len();
    let mut confusion = vec![vec![0u64; n]; n];
    let mut abstained = vec![0u64; n];
    for (sample, class) in eval.samples.iter().zip(&predicted) {
        let row = eval_space.position(sample.gt).expect("checked above");
        match class.expect("checked above") {
            Some(c) => {
                let col = eval_space.position(c).expect("prediction validated against label set");
                confusion[row][col] += 1;
            }
            None => abstained[row] += 1,
        }
    }
    let total = eval.samples.len() as u64;
    let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();
    let class_ids: Vec<u32> = eval_space.ids().collect();
    let per_class_accuracy = (0..n)
        .filter_map(|i| {
            let row: u64 = confusion[i].iter().sum::<u64>() + abstained[i];
            (row > 0).then(|| (class_ids[i], confusion[i][i] as f64 / row as f64))
        })
        .collect();
    Ok(EvalResult {
        model_id: model_id.to_string(),
        checkpoint,
        eval_set_id: eval.id.clone(),
        shift_kind: eval.shift_kind.clone(),
        labelset_id: eval_space.id().to_string(),
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        per_class_accuracy,
        class_ids,
        confusion,
        abstained,
        surplus_predictions: surplus,
    })
}

/// Unweighted mean of shift accuracies.
pub fn average_robustness(shift_accuracies: &[f64]) -> Result<f64> {
    if shift_accuracies.is_empty() {
        return Err(Error::EmptyInput("average robustness"));
    }
    if let Some(bad) = shift_accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("accuracy {bad} outside [0, 1]")));
    }
    Ok(shift_accuracies.iter().sum::<f64>() / shift_accuracies.len() as f64)
}

/// Average robustness over base accuracy; absent when base accuracy is 0.
pub fn effective_robustness_ratio(avg_robustness: f64, base_accuracy: f64) -> Option<f64> {
    (base_accuracy > 0.0).then(|| avg_robustness / base_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub labelset_id: String,
    pub base_accuracy: f64,
    pub shift_accuracies: BTreeMap<ShiftKind, f64>,
    pub avg_robustness: f64,
    #[serde(rename = "effective_robustness_ratio")]
    pub err: Option<f64>,
}

/// Assembles a report from one base result and the shift results of the
/// same model and checkpoint.
pub fn build_report(base: &EvalResult, shifts: &[EvalResult]) -> Result<RobustnessReport> {
    if shifts.is_empty() {
        return Err(Error::Report("a report needs at least one shift result".into()));
    }
    if base.shift_kind != ShiftKind::Base {
        return Err(Error::Report(format!("base result {} is a {} shift", base.eval_set_id, base.shift_kind)));
    }
    let mut shift_accuracies = BTreeMap::new();
    for s in shifts {
        if s.model_id != base.model_id || s.checkpoint != base.checkpoint {
            return Err(Error::Report(format!(
                "result for {}/{:?} mixed into report for {}/{:?}",
                s.model_id, s.checkpoint, base.model_id, base.checkpoint
            )));
        }
        if s.shift_kind == ShiftKind::Base {
            return Err(Error::Report(format!("{} is a base set, not a shift", s.eval_set_id)));
        }
        if shift_accuracies.insert(s.shift_kind.clone(), s.accuracy).is_some() {
            return Err(Error::Report(format!("duplicate shift kind {}", s.shift_kind)));
        }
    }
    let values: Vec<f64> = shifts.iter().map(|s| s.accuracy).collect();
    let avg_robustness = average_robustness(&values)?;
    Ok(RobustnessReport {
        model_id: base.model_id.clone(),
        checkpoint: base.checkpoint.clone(),
        labelset_id: base.labelset_id.clone(),
        base_accuracy: base.accuracy,
        shift_accuracies,
        avg_robustness,
        err: effective_robustness_ratio(avg_robustness, base.accuracy),
    })
}

/// Numeric tags compare as numbers, anything else lexically; untagged first.
pub fn compare_checkpoints(a: Option<&str>, b: Option<&str>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(a), Some(b)) => match (a.parse::<u64>(), b.parse::<u64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y),
            _ => a.cmp(b),
        },
    }
}

/// Highest average robustness; ties go to higher base accuracy, then the
/// earliest checkpoint.
pub fn select_best_checkpoint(reports: &[RobustnessReport]) -> Result<&RobustnessReport> {
    reports
        .iter()
        .reduce(|best, r| {
            let ord = r
                .avg_robustness
                .total_cmp(&best.avg_robustness)
                .then(r.base_accuracy.total_cmp(&best.base_accuracy))
                .then(compare_checkpoints(best.checkpoint.as_deref(), r.checkpoint.as_deref()));
            if ord == Ordering::Greater {
                r
            } else {
                best
            }
        })
        .ok_or(Error::EmptyInput("checkpoint selection"))
}

/// Aligned table rounded to three decimals.
pub fn reports_table(reports: &[RobustnessReport]) -> String {
    let mut kinds: Vec<&ShiftKind> = reports.iter().flat_map(|r| r.shift_accuracies.keys()).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = format!("{:<28} {:<12} {:<16} {:>7}", "model", "checkpoint", "labelset", "base");
    for k in &kinds {
        let _ = write!(out, " {:>7}", k.as_str());
    }
    let _ = writeln!(out, " {:>8} {:>7}", "avg_rob", "err");
    for r in reports {
        let _ = write!(
            out,
            "{:<28} {:<12} {:<16} {:>7.3}",
            r.model_id,
            r.checkpoint.as_deref().unwrap_or("-"),
            r.labelset_id,
            r.base_accuracy
        );
        for k in &kinds {
            match r.shift_accuracies.get(*k) {
                Some(a) => {
                    let _ = write!(out, " {a:>7.3}");
                }
                None => {
                    let _ = write!(out, " {:>7}", "-");
                }
            }
        }
        let err = r.err.map(|e| format!("{e:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, " {:>8.3} {err:>7}", r.avg_robustness);
    }
    out
}
