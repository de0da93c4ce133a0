use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{Provenance, RunContext};
use crate::error::{Error, Result};
use crate::eval::{
    build_report, compare_checkpoints, reports_table, score_predictions, select_best_checkpoint, EvalResult, EvalSet,
    PredictionRecord, RobustnessReport, ShiftKind,
};
use crate::io::{read_json, read_jsonl_path, read_to_string};
use crate::labelset::{partition_into_k, shared_classes, subset, LabelSet};

/// Splits `name=path`; a bare path is named by its file stem.
fn named_path(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, path)
        }
    }
}

/// A label-set file, a JSON array of class ids, or whitespace/comma separated ids.
fn read_class_ids(path: &Path) -> Result<Vec<u32>> {
    let text = read_to_string(path)?;
    if let Ok(ls) = serde_json::from_str::<LabelSet>(&text) {
        return Ok(ls.ids().collect());
    }
    if let Ok(ids) = serde_json::from_str::<Vec<u32>>(&text) {
        return Ok(ids);
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::InvalidArgument(format!("{}: {t:?} is not a class id", path.display())))
        })
        .collect()
}

struct Model {
    id: String,
    /// Per checkpoint, per evaluation set.
    by_checkpoint: BTreeMap<Option<String>, HashMap<String, Vec<PredictionRecord>>>,
}

struct Job<'a> {
    model: &'a Model,
    checkpoint: &'a Option<String>,
    preds: &'a HashMap<String, Vec<PredictionRecord>>,
    space: usize,
}

#[derive(Serialize)]
struct PartitionMean {
    model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<String>,
    parts: usize,
    base_accuracy: f64,
    shift_accuracies: BTreeMap<ShiftKind, f64>,
    avg_robustness: f64,
}

#[derive(Serialize)]
struct ReportsDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    labelsets: Vec<&'a str>,
    reports: &'a [RobustnessReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<Vec<RobustnessReport>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    partition_means: Vec<PartitionMean>,
}

#[derive(Serialize)]
struct ModelDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    model_id: &'a str,
    reports: Vec<&'a RobustnessReport>,
    results: Vec<&'a EvalResult>,
}

pub(crate) fn cmd_eval(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let ls_path = ctx.require(config.labelset.as_ref(), "label set")?;
    let labelset = LabelSet::from_path(&ls_path)?;
    let pred_space = match &config.pred_labelset {
        Some(p) => {
            ctx.input(p)?;
            LabelSet::from_path(p)?
        }
        None => labelset.clone(),
    };
    if config.eval_sets.is_empty() {
        return Err(Error::InvalidArgument("no evaluation sets given".into()));
    }
    let mut evals = Vec::new();
    for p in &config.eval_sets {
        ctx.input(p)?;
        let e: EvalSet = read_json(p)?;
        e.validate()?;
        evals.push(e);
    }
    if evals.iter().filter(|e| e.shift_kind == ShiftKind::Base).count() != 1 {
        return Err(Error::EvalSet("exactly one evaluation set must be of kind base".into()));
    }
    if evals.len() < 2 {
        return Err(Error::EvalSet("at least one shifted evaluation set is required".into()));
    }
    let mut universes = HashMap::new();
    for spec in &config.shift_universes {
        let (id, path) = named_path(spec);
        ctx.input(&path)?;
        universes.insert(id, read_class_ids(&path)?);
    }
    for e in &evals {
        if e.shift_kind.uses_shared_classes() && !universes.contains_key(&e.id) {
            ctx.warn(format!(
                "{}: {} shift without a class universe; scoring over the full label set",
                e.id, e.shift_kind
            ));
        }
    }

    let mut space = labelset.clone();
    if let Some(p) = &config.subset {
        ctx.input(p)?;
        let ids = read_class_ids(p)?;
        space = subset(&labelset, &ids, format!("{}-subset", labelset.id()))?;
    }
    let spaces = match config.partition {
        Some(k) => partition_into_k(&space, k, config.seed())?.parts,
        None => vec![space],
    };

    if config.predictions.is_empty() {
        return Err(Error::InvalidArgument("no prediction files given".into()));
    }
    let mut models = Vec::new();
    for spec in &config.predictions {
        let (id, path) = named_path(spec);
        ctx.input(&path)?;
        let (records, errors) = read_jsonl_path::<PredictionRecord>(&path)?;
        for e in errors {
            ctx.record_error(&Error::InvalidArgument(format!("{}: {e}", path.display())));
        }
        let mut by_checkpoint: BTreeMap<Option<String>, HashMap<String, Vec<PredictionRecord>>> = BTreeMap::new();
        for r in records {
            by_checkpoint
                .entry(r.checkpoint.clone())
                .or_default()
                .entry(r.eval_set.clone())
                .or_default()
                .push(r);
        }
        if models.iter().any(|m: &Model| m.id == id) {
            return Err(Error::InvalidArgument(format!("model {id:?} given twice")));
        }
        models.push(Model { id, by_checkpoint });
    }

    let spaces = &spaces;
    let jobs: Vec<Job<'_>> = models
        .iter()
        .flat_map(|model| {
            model.by_checkpoint.iter().flat_map(move |(checkpoint, preds)| {
                (0..spaces.len()).map(move |space| Job {
                    model,
                    checkpoint,
                    preds,
                    space,
                })
            })
        })
        .collect();
    let restrict = config.subset.is_some() || config.partition.is_some();
    let outcomes: Vec<Result<(RobustnessReport, Vec<EvalResult>)>> = jobs
        .par_iter()
        .map(|job| run_job(job, &evals, &universes, &spaces[job.space], &pred_space, restrict))
        .collect();
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut results = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let (report, res) = outcome?;
        for r in &res {
            if r.surplus_predictions > 0 && !restrict {
                ctx.warn(format!(
                    "{}{}: {} predictions on {} match no evaluation sample",
                    job.model.id,
                    job.checkpoint.as_deref().map(|c| format!("@{c}")).unwrap_or_default(),
                    r.surplus_predictions,
                    r.eval_set_id
                ));
            }
        }
        reports.push(report);
        results.extend(res);
    }

    let best = config.best.unwrap_or(false).then(|| pick_best(&reports)).transpose()?;
    let partition_means = if spaces.len() > 1 {
        partition_means(best.as_deref().unwrap_or(&reports), spaces.len(), best.is_some())
    } else {
        Vec::new()
    };

    let shown = best.as_deref().unwrap_or(&reports);
    let mut table = reports_table(shown);
    if !partition_means.is_empty() {
        let _ = writeln!(table, "\nmean over {} parts", spaces.len());
        for m in &partition_means {
            let _ = writeln!(
                table,
                "{:<28} {:<12} base {:.3} avg_rob {:.3}",
                m.model_id,
                m.checkpoint.as_deref().unwrap_or("-"),
                m.base_accuracy,
                m.avg_robustness
            );
        }
    }
    let mut csv = String::from("model,checkpoint,labelset,eval_set,shift,total,correct,accuracy\n");
    for r in &results {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.model_id,
            r.checkpoint.as_deref().unwrap_or(""),
            r.labelset_id,
            r.eval_set_id,
            r.shift_kind,
            r.total,
            r.correct,
            r.accuracy
        );
    }

    let doc = ReportsDoc {
        provenance: ctx.provenance(),
        labelsets: spaces.iter().map(LabelSet::id).collect(),
        reports: &reports,
        best: best.clone(),
        partition_means,
    };
    ctx.write_json("reports.json", &doc)?;
    ctx.write("reports.txt", table.as_bytes())?;
    ctx.write("reports.csv", csv.as_bytes())?;
    for model in &models {
        let doc = ModelDoc {
            provenance: ctx.provenance(),
            model_id: &model.id,
            reports: reports.iter().filter(|r| r.model_id == model.id).collect(),
            results: results.iter().filter(|r| r.model_id == model.id).collect(),
        };
        ctx.write_json(&format!("models/{}.json", file_safe(&model.id)), &doc)?;
    }
    Ok(())
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn run_job(
    job: &Job<'_>,
    evals: &[EvalSet],
    universes: &HashMap<String, Vec<u32>>,
    space: &LabelSet,
    pred_space: &LabelSet,
    restrict: bool,
) -> Result<(RobustnessReport, Vec<EvalResult>)> {
    let mut base = None;
    let mut shifts = Vec::new();
    for eval in evals {
        let (set, eval_space) = match universes.get(&eval.id) {
            Some(universe) if eval.shift_kind.uses_shared_classes() => {
                eval.restrict_shared(space, &shared_classes(space, &eval.id, universe))?
            }
            _ if restrict => (eval.restricted_to(space), space.clone()),
            // A ground truth outside the label set is an error, not a filter.
            _ => (eval.clone(), space.clone()),
        };
        let preds = job.preds.get(&eval.id).map(Vec::as_slice).unwrap_or(&[]);
        let result = score_predictions(&job.model.id, preds, &set, pred_space, &eval_space).map_err(|e| {
            Error::Report(format!(
                "{}{} on {}: {e}",
                job.model.id,
                job.checkpoint.as_deref().map(|c| format!("@{c}")).unwrap_or_default(),
                eval.id
            ))
        })?;
        if eval.shift_kind == ShiftKind::Base {
            base = Some(result);
        } else {
            shifts.push(result);
        }
    }
    let base = base.expect("one base set was checked");
    let mut report = build_report(&base, &shifts)?;
    report.labelset_id = space.id().to_string();
    shifts.insert(0, base);
    Ok((report, shifts))
}

/// Best checkpoint per (model, label set), in first-seen order.
fn pick_best(reports: &[RobustnessReport]) -> Result<Vec<RobustnessReport>> {
    let mut groups: Vec<((&str, &str), Vec<RobustnessReport>)> = Vec::new();
    for r in reports {
        let key = (r.model_id.as_str(), r.labelset_id.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((key, vec![r.clone()])),
        }
    }
    groups
        .iter()
        .map(|(_, g)| select_best_checkpoint(g).cloned())
        .collect()
}

/// Unweighted mean over the parts of a partition, per model and checkpoint.
/// After best-checkpoint selection the parts may disagree on the checkpoint,
/// so grouping is by model alone.
fn partition_means(reports: &[RobustnessReport], parts: usize, selected: bool) -> Vec<PartitionMean> {
    let mut groups: Vec<((String, Option<String>), Vec<&RobustnessReport>)> = Vec::new();
    for r in reports {
        let checkpoint = if selected { None } else { r.checkpoint.clone() };
        let key = (r.model_id.clone(), checkpoint);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups.sort_by(|a, b| {
        a.0 .0
            .cmp(&b.0 .0)
            .then(compare_checkpoints(a.0 .1.as_deref(), b.0 .1.as_deref()))
    });
    groups
        .into_iter()
        .filter(|(_, g)| g.len() == parts)
        .map(|((model_id, checkpoint), g)| {
            let n = g.len() as f64;
            let mut shift_accuracies: BTreeMap<ShiftKind, f64> = BTreeMap::new();
            for r in &g {
                for (k, v) in &r.shift_accuracies {
                    *shift_accuracies.entry(k.clone()).or_insert(0.0) += v / n;
                }
            }
            PartitionMean {
                model_id,
                checkpoint,
                parts: g.len(),
                base_accuracy: g.iter().map(|r| r.base_accuracy).sum::<f64>() / n,
                avg_robustness: g.iter().map(|r| r.avg_robustness).sum::<f64>() / n,
                shift_accuracies,
            }
        })
        .collect()
}
