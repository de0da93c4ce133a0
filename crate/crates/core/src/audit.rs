//! Labeling at manifest scale and auditing of the result: label accuracy,
//! coverage and utilization, class histograms, rebalancing plans and data
//! budgets.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{process_lines_ordered, DEFAULT_BATCH};
use crate::labeling::{CaptionRecord, Labeled, Labeler, MatchStrategy};

/// Samples per 1x data budget.
pub const SAMPLES_PER_BUDGET_UNIT: u64 = 120_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(deserialize_with = "crate::io::string_or_number")]
    pub sample_id: String,
    pub labels: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<u32>,
}

impl LabeledSample {
    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }

    /// A sample is correct when its single ground-truth label is among the
    /// assigned labels.
    pub fn is_correct(&self) -> bool {
        self.gt_label.is_some_and(|gt| self.labels.contains(&gt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledManifest {
    pub source: String,
    pub strategy: MatchStrategy,
    pub samples: Vec<LabeledSample>,
}

/// Associative counters behind an [`AuditReport`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub total: u64,
    pub labeled: u64,
    pub correct: u64,
}

impl AuditCounts {
    pub fn observe(&mut self, sample: &LabeledSample) {
        self.total += 1;
        if sample.is_labeled() {
            self.labeled += 1;
            if sample.is_correct() {
                self.correct += 1;
            }
        }
    }

    pub fn merge(self, other: AuditCounts) -> AuditCounts {
        AuditCounts {
            total: self.total + other.total,
            labeled: self.labeled + other.labeled,
            correct: self.correct + other.correct,
        }
    }

    pub fn report(self) -> AuditReport {
        AuditReport::from_counts(self.total, self.labeled, self.correct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub total: u64,
    pub labeled: u64,
    pub correct: u64,
    /// correct / labeled, 0 when nothing was labeled.
    pub label_accuracy: f64,
    /// correct / total: the all-samples denominator reading of label
    /// accuracy. Numerically the same as `utilization`.
    pub label_accuracy_over_total: f64,
    /// correct / total.
    pub utilization: f64,
    /// labeled / total.
    pub coverage: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl AuditReport {
    pub fn from_counts(total: u64, labeled: u64, correct: u64) -> AuditReport {
        assert!(labeled <= total && correct <= labeled, "audit counts out of order");
        AuditReport {
            total,
            labeled,
            correct,
            label_accuracy: ratio(correct, labeled),
            label_accuracy_over_total: ratio(correct, total),
            utilization: ratio(correct, total),
            coverage: ratio(labeled, total),
        }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>) -> AuditReport {
        let mut counts = AuditCounts::default();
        for s in samples {
            counts.observe(s);
        }
        counts.report()
    }

    pub fn fractions(&self) -> AuditFractions {
        AuditFractions {
            label_accuracy: self.label_accuracy,
            coverage: self.coverage,
            utilization: self.utilization,
        }
    }

    /// Stored fractions agree with the counts, and `utilization` equals
    /// `label_accuracy * coverage` up to floating-point representation.
    pub fn counts_consistent(&self) -> bool {
        self.correct <= self.labeled
            && self.labeled <= self.total
            && self.label_accuracy == ratio(self.correct, self.labeled)
            && self.coverage == ratio(self.labeled, self.total)
            && self.utilization == ratio(self.correct, self.total)
            && (self.utilization - self.label_accuracy * self.coverage).abs() <= 4.0 * f64::EPSILON
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, String); 7] = [
            ("total", self.total.to_string()),
            ("labeled", self.labeled.to_string()),
            ("correct", self.correct.to_string()),
            ("label_accuracy", format!("{:.3}", self.label_accuracy)),
            ("label_accuracy_over_total", format!("{:.3}", self.label_accuracy_over_total)),
            ("coverage", format!("{:.3}", self.coverage)),
            ("utilization", format!("{:.3}", self.utilization)),
        ];
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<26} {value:>12}");
        }
        out
    }
}

/// Audit fractions as published or as computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditFractions {
    pub label_accuracy: f64,
    pub coverage: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityVerdict {
    pub consistent: bool,
    /// utilization - label_accuracy * coverage
    pub residual: f64,
    pub tolerance: f64,
}

/// Checks `utilization = label_accuracy * coverage` within `tolerance`, and
/// that every fraction lies in [0, 1].
pub fn audit_identity_check(fractions: AuditFractions, tolerance: f64) -> IdentityVerdict {
    let AuditFractions {
        label_accuracy,
        coverage,
        utilization,
    } = fractions;
    let residual = utilization - label_accuracy * coverage;
    let in_range = [label_accuracy, coverage, utilization]
        .iter()
        .all(|v| v.is_finite() && (0.0..=1.0).contains(v));
    IdentityVerdict {
        consistent: in_range && residual.abs() <= tolerance,
        residual,
        tolerance,
    }
}

/// Coverage implied by published accuracy and utilization.
pub fn implied_coverage(label_accuracy: f64, utilization: f64) -> Option<f64> {
    (label_accuracy > 0.0).then(|| utilization / label_accuracy)
}

/// Per-record outcome handed to the sink of [`label_stream`].
#[derive(Debug, Clone)]
pub struct LabeledRecord {
    pub line: usize,
    pub record: CaptionRecord,
    pub labeled: Labeled,
}

/// Parses and labels a caption manifest on the rayon pool. `map` turns each
/// good record into the caller's output (serialization can happen there, in
/// parallel); `sink` receives results in input order. Malformed lines arrive
/// as [`Error::Record`] and do not stop the run.
pub fn label_stream<R, T, M, S>(reader: R, labeler: &Labeler<'_>, map: M, mut sink: S) -> Result<()>
where
    R: BufRead,
    T: Send,
    M: Fn(&str, LabeledRecord) -> T + Sync,
    S: FnMut(Result<T>) -> Result<()>,
{
    process_lines_ordered(
        reader,
        DEFAULT_BATCH,
        |line, text| {
            let record: CaptionRecord = serde_json::from_str(text).map_err(|e| Error::Record {
                line,
                message: e.to_string(),
            })?;
            if !record.has_caption() {
                return Err(Error::Record {
                    line,
                    message: format!("sample {:?} has no caption field", record.sample_id),
                });
            }
            let labeled = labeler.label(&record);
            Ok(map(text, LabeledRecord { line, record, labeled }))
        },
        &mut sink,
    )
}

#[derive(Debug)]
pub struct LabelingRun {
    pub manifest: LabeledManifest,
    /// Over every well-formed record, whether or not it carries ground truth.
    pub summary: AuditCounts,
    /// Over records carrying a ground-truth label, when any do.
    pub audit: Option<AuditReport>,
    pub errors: Vec<Error>,
    /// Records removed by global-drop filtering.
    pub filtered: u64,
}

/// Labels a whole manifest in memory and audits it.
pub fn apply_labeling<R: BufRead>(reader: R, source: &str, labeler: &Labeler<'_>) -> Result<LabelingRun> {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut summary = AuditCounts::default();
    let mut audited = AuditCounts::default();
    let mut any_gt = false;
    let mut filtered = 0u64;
    let mut seen = HashSet::new();
    label_stream(
        reader,
        labeler,
        |_, rec| rec,
        |item| {
            match item {
                Ok(rec) => {
                    if !seen.insert(rec.record.sample_id.clone()) {
                        errors.push(Error::Record {
                            line: rec.line,
                            message: format!("duplicate sample id {:?}", rec.record.sample_id),
                        });
                        return Ok(());
                    }
                    if rec.labeled.filtered {
                        filtered += 1;
                    }
                    let sample = LabeledSample {
                        sample_id: rec.record.sample_id,
                        labels: rec.labeled.decision.labels,
                        gt_label: rec.record.gt_label,
                    };
                    summary.observe(&sample);
                    if sample.gt_label.is_some() {
                        any_gt = true;
                        audited.observe(&sample);
                    }
                    samples.push(sample);
                }
                Err(e @ Error::Record { .. }) => errors.push(e),
                Err(e) => return Err(e),
            }
            Ok(())
        },
    )?;
    Ok(LabelingRun {
        manifest: LabeledManifest {
            source: source.to_string(),
            strategy: labeler.strategy,
            samples,
        },
        summary,
        audit: any_gt.then(|| audited.report()),
        errors,
        filtered,
    })
}

/// Sample count per class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: BTreeMap<u32, u64>,
    pub total: u64,
}

impl ClassHistogram {
    /// Zero counts for every class in `universe`.
    pub fn with_classes(universe: impl IntoIterator<Item = u32>) -> Self {
        ClassHistogram {
            counts: universe.into_iter().map(|c| (c, 0)).collect(),
            total: 0,
        }
    }

    pub fn add(&mut self, class_id: u32) {
        *self.counts.entry(class_id).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn get(&self, class_id: u32) -> u64 {
        self.counts.get(&class_id).copied().unwrap_or(0)
    }

    pub fn merge(mut self, other: &ClassHistogram) -> ClassHistogram {
        for (&c, &n) in &other.counts {
            *self.counts.entry(c).or_insert(0) += n;
        }
        self.total += other.total;
        self
    }

    /// Counts only each sample's first label.
    pub fn primary<'a>(samples: impl IntoIterator<Item = &'a LabeledSample>, universe: impl IntoIterator<Item = u32>) -> Self {
        let mut hist = ClassHistogram::with_classes(universe);
        for s in samples {
            if let Some(&c) = s.labels.first() {
                hist.add(c);
            }
        }
        hist
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>8} {:>12}\n", "class", "count");
        for (c, n) in &self.counts {
            let _ = writeln!(out, "{c:>8} {n:>12}");
        }
        let _ = writeln!(out, "{:>8} {:>12}", "total", self.total);
        out
    }

    /// `class,count,log10_count` rows sorted by descending count; zero
    /// counts have an empty log column.
    pub fn to_log_series_csv(&self) -> String {
        let mut rows: Vec<(u32, u64)> = self.counts.iter().map(|(&c, &n)| (c, n)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out = String::from("rank,class,count,log10_count\n");
        for (rank, (c, n)) in rows.into_iter().enumerate() {
            let log = if n > 0 { format!("{}", (n as f64).log10()) } else { String::new() };
            let _ = writeln!(out, "{rank},{c},{n},{log}");
        }
        out
    }
}

/// Counts every (sample, label) pair; multi-label samples count once per
/// label. Classes of `universe` with no samples report 0.
pub fn class_frequency<'a>(
    samples: impl IntoIterator<Item = &'a LabeledSample>,
    universe: impl IntoIterator<Item = u32>,
) -> ClassHistogram {
    let mut hist = ClassHistogram::with_classes(universe);
    for s in samples {
        for &c in &s.labels {
            hist.add(c);
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceMode {
    #[default]
    Undersample,
    Oversample,
}

impl std::str::FromStr for RebalanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "under" | "undersample" => Ok(RebalanceMode::Undersample),
            "over" | "oversample" => Ok(RebalanceMode::Oversample),
            other => Err(Error::InvalidArgument(format!("unknown rebalance mode {other:?} (under, over)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ClassAction {
    KeepAll,
    /// Uniform subset without replacement.
    Undersample { from: u64 },
    /// Uniform draws with replacement.
    Oversample { from: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedClass {
    pub class_id: u32,
    pub count: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebalancePlan {
    pub target_per_class: u64,
    pub mode: RebalanceMode,
    pub seed: u64,
    pub actions: BTreeMap<u32, ClassAction>,
    pub excluded: Vec<ExcludedClass>,
}

/// Builds a plan that brings every representable class to exactly `target`
/// samples. Without a target, undersampling aims at the smallest non-empty
/// class and oversampling at the largest.
pub fn rebalance_plan(hist: &ClassHistogram, target: Option<u64>, mode: RebalanceMode, seed: u64) -> Result<RebalancePlan> {
    let nonzero = hist.counts.values().copied().filter(|&n| n > 0);
    let target = match target {
        Some(0) => return Err(Error::InvalidArgument("rebalance target must be at least 1".into())),
        Some(t) => t,
        None => match mode {
            RebalanceMode::Undersample => nonzero.min(),
            RebalanceMode::Oversample => nonzero.max(),
        }
        .ok_or_else(|| Error::InvalidArgument("histogram has no samples to rebalance".into()))?,
    };
    let mut actions = BTreeMap::new();
    let mut excluded = Vec::new();
    for (&class_id, &count) in &hist.counts {
        let action = match (mode, count.cmp(&target)) {
            (_, std::cmp::Ordering::Equal) => Some(ClassAction::KeepAll),
            (_, std::cmp::Ordering::Greater) => Some(ClassAction::Undersample { from: count }),
            (RebalanceMode::Oversample, std::cmp::Ordering::Less) if count > 0 => {
                Some(ClassAction::Oversample { from: count })
            }
            _ => None,
        };
        match action {
            Some(a) => {
                actions.insert(class_id, a);
            }
            None => excluded.push(ExcludedClass {
                class_id,
                count,
                reason: format!("{count} samples cannot reach target {target} by {mode:?}"),
            }),
        }
    }
    Ok(RebalancePlan {
        target_per_class: target,
        mode,
        seed,
        actions,
        excluded,
    })
}

impl RebalancePlan {
    /// Indices into `samples` (grouped by first label) selected by the plan,
    /// in manifest order; oversampled indices repeat.
    pub fn apply(&self, samples: &[LabeledSample]) -> Result<Vec<(usize, u32)>> {
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if let Some(&c) = s.labels.first() {
                by_class.entry(c).or_default().push(i);
            }
        }
        let target = self.target_per_class as usize;
        let mut picked: Vec<(usize, u32)> = Vec::with_capacity(target * self.actions.len());
        for (&class_id, action) in &self.actions {
            let members = by_class.get(&class_id).map(Vec::as_slice).unwrap_or(&[]);
            let expected = match action {
                ClassAction::KeepAll => self.target_per_class,
                ClassAction::Undersample { from } | ClassAction::Oversample { from } => *from,
            };
            if members.len() as u64 != expected {
                return Err(Error::InvalidArgument(format!(
                    "class {class_id}: plan expects {expected} samples, manifest has {}",
                    members.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(class_id as u64);
            match action {
                ClassAction::KeepAll => picked.extend(members.iter().map(|&i| (i, class_id))),
                ClassAction::Undersample { .. } => {
                    let mut chosen = index::sample(&mut rng, members.len(), target).into_vec();
                    chosen.sort_unstable();
                    picked.extend(chosen.into_iter().map(|j| (members[j], class_id)));
                }
                ClassAction::Oversample { .. } => {
                    picked.extend((0..target).map(|_| (members[rng.random_range(0..members.len())], class_id)));
                }
            }
        }
        picked.sort_unstable();
        Ok(picked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataBudget {
    pub sample_count: u64,
    pub budget_multiple: f64,
}

pub fn data_budget(sample_count: u64) -> DataBudget {
    DataBudget {
        sample_count,
        budget_multiple: sample_count as f64 / SAMPLES_PER_BUDGET_UNIT as f64,
    }
}
