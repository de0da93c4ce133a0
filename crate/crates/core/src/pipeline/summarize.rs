use std::collections::BTreeSet;

use serde::Serialize;

use super::{Provenance, RunContext};
use crate::aggregate::{
    bin_models, emit_series, grid_marginals, marginal_consistency_check, read_metadata_csv, read_metadata_jsonl,
    series_csv, summarize, BinSpec, BinSummary, Dimension, ExcludedModel, MarginalVerdict, DEFAULT_MARGINAL_TOLERANCE,
};
use crate::audit::{audit_identity_check, AuditFractions, IdentityVerdict};
use crate::error::{Error, Result};
use crate::io::{open, read_json};

/// Default tolerance when checking published audit fractions, which are
/// usually rounded to two or three decimals.
const DEFAULT_AUDIT_TOLERANCE: f64 = 0.005;

#[derive(Serialize)]
struct BinOut {
    label: String,
    /// Member model ids, sorted.
    members: Vec<String>,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    k: usize,
    spec: &'a BinSpec,
    bins: Vec<BinOut>,
    excluded: Vec<ExcludedModel>,
    summaries: &'a [BinSummary],
}

fn format_edge(v: f64) -> String {
    if v >= 1e6 && v % 1e6 == 0.0 {
        format!("{}m", v / 1e6)
    } else {
        format!("{v}")
    }
}

/// `<a`, `a-b`, ..., `>=z` for interior cut points.
fn default_labels(edges: &[f64]) -> Vec<String> {
    let mut labels = Vec::with_capacity(edges.len() + 1);
    if let Some(first) = edges.first() {
        labels.push(format!("<{}", format_edge(*first)));
    }
    for w in edges.windows(2) {
        labels.push(format!("{}-{}", format_edge(w[0]), format_edge(w[1])));
    }
    if let Some(last) = edges.last() {
        labels.push(format!(">={}", format_edge(*last)));
    }
    labels
}

pub(crate) fn cmd_aggregate(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let path = ctx.require(config.metadata.as_ref(), "model metadata")?;
    let dimension = config.dimension.unwrap_or(Dimension::ParameterCount);
    let spec = match &config.edges {
        Some(edges) => {
            let labels = config.bin_labels.clone().unwrap_or_else(|| default_labels(edges));
            BinSpec::numeric(dimension, edges.clone(), labels)?
        }
        None => BinSpec::default_for(dimension),
    };
    let k = config.k();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (models, errors) = match ext {
        "csv" => read_metadata_csv(open(&path)?)?,
        _ => read_metadata_jsonl(open(&path)?)?,
    };
    for e in &errors {
        ctx.record_error(e);
    }
    if models.is_empty() {
        return Err(Error::EmptyInput("model metadata"));
    }
    let mut seen = BTreeSet::new();
    for m in &models {
        if !seen.insert(m.model_id.as_str()) {
            return Err(Error::InvalidArgument(format!("model {:?} listed twice", m.model_id)));
        }
    }
    let metrics: Vec<String> = if config.metrics.is_empty() {
        models
            .iter()
            .flat_map(|m| m.metrics.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        config.metrics.clone()
    };
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metric columns to aggregate".into()));
    }
    let binning = bin_models(&models, &spec)?;
    let summaries = summarize(&models, &binning, &metrics, k)?;
    for metric in &metrics {
        if !summaries.iter().any(|s| &s.metric == metric) {
            ctx.warn(format!("no model reports metric {metric:?}"));
        }
    }
    for b in &binning.bins {
        if b.members.is_empty() {
            ctx.warn(format!("bin {:?} is empty", b.label));
        }
    }
    let series = emit_series(&summaries, config.axis.unwrap_or_default());

    let bins = binning
        .bins
        .iter()
        .map(|b| {
            let mut members: Vec<String> = b.members.iter().map(|&i| models[i].model_id.clone()).collect();
            members.sort();
            BinOut {
                label: b.label.clone(),
                members,
            }
        })
        .collect();
    let mut excluded = binning.excluded.clone();
    excluded.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let doc = SummaryDoc {
        provenance: ctx.provenance(),
        k,
        spec: &spec,
        bins,
        excluded,
        summaries: &summaries,
    };
    ctx.write_json("summary.json", &doc)?;
    ctx.write("series.csv", series_csv(&series).as_bytes())
}

#[derive(Serialize)]
struct CheckDoc {
    #[serde(flatten)]
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    marginal: Option<MarginalVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<MarginalVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit_identity: Option<IdentityVerdict>,
    pass: bool,
}

pub(crate) fn cmd_check(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config.clone();
    let marginal = match (&config.by_label, &config.by_shift) {
        (Some(a), Some(b)) => Some(marginal_consistency_check(
            a,
            b,
            config.tolerance.unwrap_or(DEFAULT_MARGINAL_TOLERANCE),
        )?),
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("a marginal check needs both --by-label and --by-shift".into())),
    };
    let grid = match &config.grid {
        Some(p) => {
            ctx.input(p)?;
            let cells: Vec<Vec<f64>> = read_json(p)?;
            let (rows, cols) = grid_marginals(&cells)?;
            Some(marginal_consistency_check(
                &rows,
                &cols,
                config.tolerance.unwrap_or(DEFAULT_MARGINAL_TOLERANCE),
            )?)
        }
        None => None,
    };
    let audit_identity = match &config.audit_fractions {
        Some(f) => {
            let &[label_accuracy, coverage, utilization] = f.as_slice() else {
                return Err(Error::InvalidArgument(
                    "audit fractions are label accuracy, coverage and utilization".into(),
                ));
            };
            Some(audit_identity_check(
                AuditFractions {
                    label_accuracy,
                    coverage,
                    utilization,
                },
                config.tolerance.unwrap_or(DEFAULT_AUDIT_TOLERANCE),
            ))
        }
        None => None,
    };
    if marginal.is_none() && grid.is_none() && audit_identity.is_none() {
        return Err(Error::InvalidArgument("nothing to check".into()));
    }
    let mut pass = true;
    if let Some(v) = &marginal {
        if !v.pass {
            pass = false;
            ctx.fail_check(format!(
                "marginal means differ by {:.6} (> {})",
                v.difference, v.tolerance
            ));
        }
    }
    if let Some(v) = &grid {
        if !v.pass {
            pass = false;
            ctx.fail_check(format!("grid marginals differ by {:.6} (> {})", v.difference, v.tolerance));
        }
    }
    if let Some(v) = &audit_identity {
        if !v.consistent {
            pass = false;
            ctx.fail_check(format!(
                "utilization differs from accuracy x coverage by {:.6} (> {})",
                v.residual, v.tolerance
            ));
        }
    }
    let doc = CheckDoc {
        provenance: ctx.provenance(),
        marginal,
        grid,
        audit_identity,
        pass,
    };
    ctx.write_json("check.json", &doc)
}
