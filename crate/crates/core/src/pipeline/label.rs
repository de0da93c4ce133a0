use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::Serialize;

use super::{finish, Provenance, RunContext};
use crate::audit::{
    audit_identity_check, class_frequency, data_budget, label_stream, rebalance_plan, AuditCounts, AuditReport,
    ClassHistogram, DataBudget, IdentityVerdict, LabeledSample, RebalancePlan,
};
use crate::error::{Error, Result};
use crate::io::{open, read_jsonl_path};
use crate::labeling::{CaptionRecord, ExclusionMode, FieldOrder, Labeler, MatchStrategy, TermDictionary};

/// Tolerance for the self-check of a computed audit.
const AUDIT_SELF_TOLERANCE: f64 = 1e-9;

#[derive(Serialize)]
struct SpanOut<'a> {
    term: &'a str,
    class: u32,
    start: usize,
}

#[derive(Serialize)]
struct LabelLine<'a> {
    sample_id: &'a str,
    labels: &'a [u32],
    dropped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_label: Option<u32>,
    spans: Vec<SpanOut<'a>>,
}

#[derive(Serialize)]
struct LabelSettings<'a> {
    strategy: MatchStrategy,
    exclude_mode: ExclusionMode,
    fields: &'a FieldOrder,
}

#[derive(Serialize)]
struct AuditDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    settings: Option<LabelSettings<'a>>,
    /// Every well-formed record.
    summary: AuditReport,
    /// Records carrying ground truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<AuditReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identity: Option<IdentityVerdict>,
    labeled_budget: DataBudget,
    record_errors: usize,
}

#[derive(Serialize)]
struct HistogramDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    histogram: &'a ClassHistogram,
}

#[derive(Serialize)]
struct FilterDoc {
    #[serde(flatten)]
    provenance: Provenance,
    total: u64,
    kept: u64,
    removed: u64,
    record_errors: usize,
}

/// Accumulates counters over labeled samples.
#[derive(Default)]
struct Tally {
    seen: HashSet<String>,
    summary: AuditCounts,
    audited: AuditCounts,
    any_gt: bool,
}

impl Tally {
    /// False for a repeated sample id.
    fn admit(&mut self, sample_id: &str) -> bool {
        self.seen.insert(sample_id.to_string())
    }

    fn observe(&mut self, sample: &LabeledSample) {
        self.summary.observe(sample);
        if sample.gt_label.is_some() {
            self.any_gt = true;
            self.audited.observe(sample);
        }
    }
}

fn duplicate(line: usize, sample_id: &str) -> Error {
    Error::Record {
        line,
        message: format!("duplicate sample id {sample_id:?}"),
    }
}

/// Record-level errors are logged and the run continues; anything else stops it.
fn absorb(ctx: &mut RunContext, e: Error) -> Result<()> {
    match e {
        Error::Record { .. } => {
            ctx.record_error(&e);
            Ok(())
        }
        other => Err(other),
    }
}

fn write_audit(
    ctx: &mut RunContext,
    settings: Option<LabelSettings<'_>>,
    tally: &Tally,
    hist: &ClassHistogram,
) -> Result<()> {
    let audit = tally.any_gt.then(|| tally.audited.report());
    let identity = audit.map(|a| audit_identity_check(a.fractions(), AUDIT_SELF_TOLERANCE));
    if let Some(v) = &identity {
        if !v.consistent {
            ctx.warn(format!("audit identity residual {} exceeds {}", v.residual, v.tolerance));
        }
    }
    if audit.is_none() {
        ctx.warn("no record carries a ground-truth label; accuracy is not reported");
    }
    let summary = tally.summary.report();
    let mut text = String::from("# all records\n");
    text.push_str(&summary.to_text());
    if let Some(a) = &audit {
        text.push_str("# records with ground truth\n");
        text.push_str(&a.to_text());
    }
    let doc = AuditDoc {
        provenance: ctx.provenance(),
        settings,
        summary,
        audit,
        identity,
        labeled_budget: data_budget(summary.labeled),
        record_errors: ctx.record_errors,
    };
    ctx.write_json("audit.json", &doc)?;
    ctx.write("audit.txt", text.as_bytes())?;
    write_histogram(ctx, hist)
}

fn write_histogram(ctx: &mut RunContext, hist: &ClassHistogram) -> Result<()> {
    let doc = HistogramDoc {
        provenance: ctx.provenance(),
        histogram: hist,
    };
    ctx.write_json("histogram.json", &doc)?;
    ctx.write("histogram.txt", hist.to_text().as_bytes())?;
    ctx.write("histogram.csv", hist.to_log_series_csv().as_bytes())
}

pub(crate) fn cmd_label(ctx: &mut RunContext) -> Result<()> {
    let manifest = ctx.require(ctx.config.manifest.clone().as_ref(), "caption manifest")?;
    let dict_path = ctx.require(ctx.config.dictionary.clone().as_ref(), "term dictionary")?;
    let strategy = ctx.config.strategy()?;
    let exclusion = ctx.config.exclusion();
    let fields = ctx.config.field_order();
    let dict = TermDictionary::from_path(&dict_path)?;
    let labeler = Labeler::new(&dict, strategy)
        .with_exclusion(exclusion)
        .with_fields(fields.clone());
    let reader = open(&manifest)?;
    if exclusion == ExclusionMode::GlobalDrop {
        return filter_corpus(ctx, reader, &labeler);
    }

    let (out_path, mut out) = ctx.create("labels.jsonl")?;
    let mut tally = Tally::default();
    let mut hist = ClassHistogram::with_classes(dict.class_ids());
    let mut pending: Vec<Error> = Vec::new();
    label_stream(
        reader,
        &labeler,
        |_, rec| {
            let spans = rec
                .labeled
                .outcome
                .spans
                .iter()
                .map(|s| SpanOut {
                    term: s.term(&dict),
                    class: s.class_id,
                    start: s.start,
                })
                .collect();
            let line = LabelLine {
                sample_id: &rec.record.sample_id,
                labels: &rec.labeled.decision.labels,
                dropped: rec.labeled.decision.dropped(),
                gt_label: rec.record.gt_label,
                spans,
            };
            let mut bytes = serde_json::to_vec(&line).expect("label line serializes");
            bytes.push(b'\n');
            let sample = LabeledSample {
                sample_id: rec.record.sample_id,
                labels: rec.labeled.decision.labels,
                gt_label: rec.record.gt_label,
            };
            (rec.line, sample, bytes)
        },
        |item| {
            match item {
                Ok((line, sample, bytes)) => {
                    if !tally.admit(&sample.sample_id) {
                        pending.push(duplicate(line, &sample.sample_id));
                        return Ok(());
                    }
                    tally.observe(&sample);
                    for &c in &sample.labels {
                        hist.add(c);
                    }
                    out.write_all(&bytes).map_err(|e| Error::io(&out_path, e))?;
                }
                Err(e @ Error::Record { .. }) => pending.push(e),
                Err(e) => return Err(e),
            }
            Ok(())
        },
    )?;
    finish(out, &out_path)?;
    for e in pending {
        absorb(ctx, e)?;
    }
    let settings = LabelSettings {
        strategy,
        exclude_mode: exclusion,
        fields: &fields,
    };
    write_audit(ctx, Some(settings), &tally, &hist)
}

/// Global-drop mode: keeps the original lines of records without a match.
fn filter_corpus<R: std::io::BufRead>(ctx: &mut RunContext, reader: R, labeler: &Labeler<'_>) -> Result<()> {
    let (out_path, mut out) = ctx.create("kept.jsonl")?;
    let mut seen = HashSet::new();
    let (mut total, mut kept) = (0u64, 0u64);
    let mut pending = Vec::new();
    label_stream(
        reader,
        labeler,
        |raw, rec| (rec.line, rec.record.sample_id, rec.labeled.filtered, (!rec.labeled.filtered).then(|| raw.to_string())),
        |item| {
            match item {
                Ok((line, sample_id, _, raw)) => {
                    if !seen.insert(sample_id.clone()) {
                        pending.push(duplicate(line, &sample_id));
                        return Ok(());
                    }
                    total += 1;
                    if let Some(raw) = raw {
                        kept += 1;
                        out.write_all(raw.as_bytes())
                            .and_then(|_| out.write_all(b"\n"))
                            .map_err(|e| Error::io(&out_path, e))?;
                    }
                }
                Err(e @ Error::Record { .. }) => pending.push(e),
                Err(e) => return Err(e),
            }
            Ok(())
        },
    )?;
    finish(out, &out_path)?;
    for e in pending {
        absorb(ctx, e)?;
    }
    let doc = FilterDoc {
        provenance: ctx.provenance(),
        total,
        kept,
        removed: total - kept,
        record_errors: ctx.record_errors,
    };
    ctx.write_json("filter.json", &doc)
}

/// Reads a labels file; when `manifest` is given, its ground truth replaces
/// whatever the labels file carries.
fn load_labels(ctx: &mut RunContext) -> Result<Vec<LabeledSample>> {
    let labels_path = ctx.require(ctx.config.labels.clone().as_ref(), "labels file")?;
    let (mut samples, errors) = read_jsonl_path::<LabeledSample>(&labels_path)?;
    for e in errors {
        absorb(ctx, e)?;
    }
    if let Some(manifest) = ctx.config.manifest.clone() {
        ctx.input(&manifest)?;
        let (records, errors) = read_jsonl_path::<CaptionRecord>(&manifest)?;
        for e in errors {
            absorb(ctx, e)?;
        }
        let gt: HashMap<String, Option<u32>> = records.into_iter().map(|r| (r.sample_id, r.gt_label)).collect();
        let mut missing = 0usize;
        for s in &mut samples {
            match gt.get(&s.sample_id) {
                Some(g) => s.gt_label = *g,
                None => missing += 1,
            }
        }
        if missing > 0 {
            ctx.warn(format!("{missing} labeled samples are absent from the manifest"));
        }
    }
    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(samples.len());
    for (i, s) in samples.into_iter().enumerate() {
        if seen.insert(s.sample_id.clone()) {
            unique.push(s);
        } else {
            absorb(ctx, duplicate(i + 1, &s.sample_id))?;
        }
    }
    Ok(unique)
}

fn universe(ctx: &mut RunContext) -> Result<Vec<u32>> {
    match ctx.config.dictionary.clone() {
        Some(path) => {
            ctx.input(&path)?;
            Ok(TermDictionary::from_path(&path)?.class_ids().collect())
        }
        None => Ok(Vec::new()),
    }
}

pub(crate) fn cmd_audit(ctx: &mut RunContext) -> Result<()> {
    let samples = load_labels(ctx)?;
    let classes = universe(ctx)?;
    let mut tally = Tally::default();
    for s in &samples {
        tally.observe(s);
    }
    let hist = class_frequency(&samples, classes);
    write_audit(ctx, None, &tally, &hist)
}

#[derive(Serialize)]
struct PlanDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    histogram: &'a ClassHistogram,
    plan: &'a RebalancePlan,
    output_samples: usize,
}

#[derive(Serialize)]
struct BalancedLine<'a> {
    sample_id: &'a str,
    label: u32,
}

pub(crate) fn cmd_balance(ctx: &mut RunContext) -> Result<()> {
    let samples = load_labels(ctx)?;
    let classes = universe(ctx)?;
    let hist = ClassHistogram::primary(&samples, classes);
    let mode = ctx.config.rebalance.unwrap_or_default();
    let plan = rebalance_plan(&hist, ctx.config.target, mode, ctx.config.seed())?;
    for ex in &plan.excluded {
        ctx.warn(format!("class {} excluded: {}", ex.class_id, ex.reason));
    }
    let picked = plan.apply(&samples)?;
    let mut body = Vec::with_capacity(picked.len() * 32);
    for &(i, label) in &picked {
        serde_json::to_writer(
            &mut body,
            &BalancedLine {
                sample_id: &samples[i].sample_id,
                label,
            },
        )?;
        body.push(b'\n');
    }
    let doc = PlanDoc {
        provenance: ctx.provenance(),
        histogram: &hist,
        plan: &plan,
        output_samples: picked.len(),
    };
    ctx.write_json("plan.json", &doc)?;
    ctx.write("balanced.jsonl", &body)
}
