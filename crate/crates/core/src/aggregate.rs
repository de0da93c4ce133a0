//! Meta-analysis over a model zoo: bin models by metadata, average the top-k
//! performers per bin, and emit plot-ready series.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_MARGINAL_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureFamily {
    Vit,
    Convolution,
    Hybrid,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(alias = "vl")]
    VL,
    #[serde(alias = "ce")]
    CE,
    #[serde(alias = "other")]
    Other,
}

macro_rules! parse_via_serde {
    ($ty:ty) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
                    .map_err(|_| Error::InvalidArgument(format!("unknown {} {s:?}", stringify!($ty))))
            }
        }
    };
}

parse_via_serde!(ArchitectureFamily);
parse_via_serde!(LossKind);

/// One model of the zoo. Every metadata field may be missing; a model is
/// excluded only from the dimensions it lacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture_family: Option<ArchitectureFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_kind: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_sample_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_resolution: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_dataset: Option<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl ModelMetadata {
    pub fn new(model_id: impl Into<String>) -> Self {
        ModelMetadata {
            model_id: model_id.into(),
            parameter_count: None,
            architecture_family: None,
            loss_kind: None,
            train_sample_count: None,
            input_resolution: None,
            pretrain_dataset: None,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with_metric(mut self, name: impl Into<String>, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.parameter_count == Some(0) {
            return Err("parameter_count must be positive".into());
        }
        if self.input_resolution == Some(0) {
            return Err("input_resolution must be positive".into());
        }
        if let Some((name, _)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("metric {name} is not finite"));
        }
        Ok(())
    }
}

const KNOWN_COLUMNS: [&str; 7] = [
    "model_id",
    "parameter_count",
    "architecture_family",
    "loss_kind",
    "train_sample_count",
    "input_resolution",
    "pretrain_dataset",
];

/// Reads a delimited metadata table. Known metadata columns map to fields;
/// every other column is a metric. Empty cells are missing values.
pub fn read_metadata_csv<R: Read>(reader: R) -> Result<(Vec<ModelMetadata>, Vec<Error>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Record {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if !headers.iter().any(|h| h == "model_id") {
        return Err(Error::Record {
            line: 1,
            message: "metadata table has no model_id column".into(),
        });
    }
    let mut models = Vec::new();
    let mut errors = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(Error::Record {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&headers, &record) {
            Ok(m) => models.push(m),
            Err(message) => errors.push(Error::Record { line, message }),
        }
    }
    Ok((models, errors))
}

fn parse_row(headers: &csv::StringRecord, record: &csv::StringRecord) -> std::result::Result<ModelMetadata, String> {
    // counts such as "2.5e7" are accepted when integral
    fn count(col: &str, v: &str) -> std::result::Result<u64, String> {
        v.parse::<u64>()
            .ok()
            .or_else(|| v.parse::<f64>().ok().filter(|f| f.fract() == 0.0 && *f >= 0.0 && *f < 1.8e19).map(|f| f as u64))
            .ok_or_else(|| format!("{col}: cannot parse {v:?}"))
    }
    let mut m = ModelMetadata::new("");
    for (col, value) in headers.iter().zip(record.iter()) {
        if value.is_empty() {
            continue;
        }
        match col {
            "model_id" => m.model_id = value.to_string(),
            "parameter_count" => m.parameter_count = Some(count(col, value)?),
            "train_sample_count" => m.train_sample_count = Some(count(col, value)?),
            "input_resolution" => {
                let px = count(col, value)?;
                m.input_resolution = Some(u32::try_from(px).map_err(|_| format!("{col}: {px} out of range"))?);
            }
            "architecture_family" => m.architecture_family = Some(value.parse().map_err(|e: Error| e.to_string())?),
            "loss_kind" => m.loss_kind = Some(value.parse().map_err(|e: Error| e.to_string())?),
            "pretrain_dataset" => m.pretrain_dataset = Some(value.to_string()),
            metric => {
                let v: f64 = value.parse().map_err(|_| format!("{metric}: cannot parse {value:?}"))?;
                m.metrics.insert(metric.to_string(), v);
            }
        }
    }
    if m.model_id.is_empty() {
        return Err("missing model_id".into());
    }
    m.validate()?;
    Ok(m)
}

pub fn is_metadata_column(name: &str) -> bool {
    KNOWN_COLUMNS.contains(&name)
}

/// Reads record-per-line metadata documents.
pub fn read_metadata_jsonl<R: std::io::BufRead>(reader: R) -> Result<(Vec<ModelMetadata>, Vec<Error>)> {
    let (models, mut errors): (Vec<ModelMetadata>, _) = crate::io::read_jsonl(reader)?;
    let mut kept = Vec::with_capacity(models.len());
    for (i, m) in models.into_iter().enumerate() {
        match m.validate() {
            Ok(()) => kept.push(m),
            Err(message) => errors.push(Error::Record {
                line: i + 1,
                message: format!("{}: {message}", m.model_id),
            }),
        }
    }
    Ok((kept, errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    ParameterCount,
    ArchitectureFamily,
    InputResolution,
    TrainSampleCount,
    LossKind,
}

parse_via_serde!(Dimension);

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string"))
    }
}

impl Dimension {
    fn numeric(self, m: &ModelMetadata) -> Option<f64> {
        match self {
            Dimension::ParameterCount => m.parameter_count.map(|v| v as f64),
            Dimension::InputResolution => m.input_resolution.map(f64::from),
            Dimension::TrainSampleCount => m.train_sample_count.map(|v| v as f64),
            Dimension::ArchitectureFamily | Dimension::LossKind => None,
        }
    }

    fn category(self, m: &ModelMetadata) -> Option<String> {
        let json = |v: serde_json::Value| v.as_str().map(str::to_string);
        match self {
            Dimension::ArchitectureFamily => m.architecture_family.and_then(|v| json(serde_json::to_value(v).ok()?)),
            Dimension::LossKind => m.loss_kind.and_then(|v| json(serde_json::to_value(v).ok()?)),
            _ => None,
        }
    }

    fn is_numeric(self) -> bool {
        matches!(
            self,
            Dimension::ParameterCount | Dimension::InputResolution | Dimension::TrainSampleCount
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinSpec {
    /// `edges` are interior cut points: bin i is `[edges[i-1], edges[i])`,
    /// with the first bin open below and the last open above.
    Numeric {
        dimension: Dimension,
        edges: Vec<f64>,
        labels: Vec<String>,
    },
    Categorical {
        dimension: Dimension,
        categories: Vec<String>,
    },
}

impl BinSpec {
    pub fn numeric(dimension: Dimension, edges: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let spec = BinSpec::Numeric {
            dimension,
            edges,
            labels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn categorical<S: Into<String>>(dimension: Dimension, categories: impl IntoIterator<Item = S>) -> Result<Self> {
        let spec = BinSpec::Categorical {
            dimension,
            categories: categories.into_iter().map(Into::into).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Under 50m, 50 to 100m, over 100m parameters.
    pub fn parameter_count() -> Self {
        BinSpec::Numeric {
            dimension: Dimension::ParameterCount,
            edges: vec![50e6, 100e6],
            labels: vec!["<50m".into(), "50-100m".into(), ">100m".into()],
        }
    }

    /// Under 225px, 225 to 385px, over 385px.
    pub fn input_resolution() -> Self {
        BinSpec::Numeric {
            dimension: Dimension::InputResolution,
            edges: vec![225.0, 386.0],
            labels: vec!["<225px".into(), "225-385px".into(), ">385px".into()],
        }
    }

    /// At most 1.5m, 15m, 400m, and 2b training samples.
    pub fn train_sample_count() -> Self {
        BinSpec::Numeric {
            dimension: Dimension::TrainSampleCount,
            edges: vec![1_500_001.0, 15_000_001.0, 400_000_001.0],
            labels: vec!["<=1.5m".into(), "<=15m".into(), "<=400m".into(), "<=2b".into()],
        }
    }

    pub fn architecture_family() -> Self {
        BinSpec::Categorical {
            dimension: Dimension::ArchitectureFamily,
            categories: vec!["vit".into(), "convolution".into(), "hybrid".into(), "other".into()],
        }
    }

    pub fn loss_kind() -> Self {
        BinSpec::Categorical {
            dimension: Dimension::LossKind,
            categories: vec!["VL".into(), "CE".into(), "Other".into()],
        }
    }

    pub fn default_for(dimension: Dimension) -> Self {
        match dimension {
            Dimension::ParameterCount => BinSpec::parameter_count(),
            Dimension::InputResolution => BinSpec::input_resolution(),
            Dimension::TrainSampleCount => BinSpec::train_sample_count(),
            Dimension::ArchitectureFamily => BinSpec::architecture_family(),
            Dimension::LossKind => BinSpec::loss_kind(),
        }
    }

    pub fn dimension(&self) -> Dimension {
        match self {
            BinSpec::Numeric { dimension, .. } | BinSpec::Categorical { dimension, .. } => *dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BinSpec::Numeric {
                dimension,
                edges,
                labels,
            } => {
                if !dimension.is_numeric() {
                    return Err(Error::BinSpec(format!("{dimension} is not numeric")));
                }
                if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::BinSpec("edges must be finite and strictly increasing".into()));
                }
                if !labels.is_empty() && labels.len() != edges.len() + 1 {
                    return Err(Error::BinSpec(format!(
                        "{} labels for {} bins",
                        labels.len(),
                        edges.len() + 1
                    )));
                }
            }
            BinSpec::Categorical { dimension, categories } => {
                if dimension.is_numeric() {
                    return Err(Error::BinSpec(format!("{dimension} is not categorical")));
                }
                if categories.is_empty() {
                    return Err(Error::BinSpec("no categories".into()));
                }
            }
        }
        Ok(())
    }

    pub fn bin_labels(&self) -> Vec<String> {
        match self {
            BinSpec::Numeric { edges, labels, .. } if labels.is_empty() => (0..=edges.len())
                .map(|i| match (i.checked_sub(1).map(|j| edges[j]), edges.get(i)) {
                    (None, Some(hi)) => format!("<{hi}"),
                    (Some(lo), Some(hi)) => format!("{lo}-{hi}"),
                    (Some(lo), None) => format!(">={lo}"),
                    (None, None) => "all".into(),
                })
                .collect(),
            BinSpec::Numeric { labels, .. } => labels.clone(),
            BinSpec::Categorical { categories, .. } => categories.clone(),
        }
    }

    /// Index of the bin holding `value`.
    pub fn numeric_bin(edges: &[f64], value: f64) -> usize {
        edges.partition_point(|&e| e <= value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    /// Indices into the metadata list handed to [`bin_models`].
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedModel {
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub dimension: Dimension,
    pub bins: Vec<Bin>,
    pub excluded: Vec<ExcludedModel>,
}

/// Places every model carrying the spec's dimension in exactly one bin.
pub fn bin_models(models: &[ModelMetadata], spec: &BinSpec) -> Result<Binning> {
    spec.validate()?;
    let dimension = spec.dimension();
    let labels = spec.bin_labels();
    let mut bins: Vec<Bin> = labels
        .into_iter()
        .map(|label| Bin {
            label,
            members: Vec::new(),
        })
        .collect();
    let mut excluded = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let slot = match spec {
            BinSpec::Numeric { edges, .. } => dimension.numeric(m).map(|v| BinSpec::numeric_bin(edges, v)),
            BinSpec::Categorical { categories, .. } => match dimension.category(m) {
                Some(c) => match categories.iter().position(|k| k.eq_ignore_ascii_case(&c)) {
                    Some(p) => Some(p),
                    None => {
                        excluded.push(ExcludedModel {
                            model_id: m.model_id.clone(),
                            reason: format!("{dimension} {c:?} is not a listed category"),
                        });
                        continue;
                    }
                },
                None => None,
            },
        };
        match slot {
            Some(b) => bins[b].members.push(i),
            None => {
                log::debug!("{}: no {dimension}", m.model_id);
                excluded.push(ExcludedModel {
                    model_id: m.model_id.clone(),
                    reason: format!("missing {dimension}"),
                });
            }
        }
    }
    Ok(Binning {
        dimension,
        bins,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: String,
    pub metric: String,
    /// Bin members carrying the metric.
    pub member_count: usize,
    pub top_k_ids: Vec<String>,
    pub top_k_values: Vec<f64>,
    pub top_k_mean: f64,
    /// Metric value of every member, descending.
    pub scatter: Vec<f64>,
}

/// Mean of the `k` best values of `metric` in `bin`. Ranking is by value
/// descending, then model id ascending.
pub fn top_k_average(models: &[ModelMetadata], bin: &Bin, metric: &str, k: usize) -> Result<BinSummary> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut ranked: Vec<(&str, f64)> = bin
        .members
        .iter()
        .filter_map(|&i| {
            let m = &models[i];
            m.metrics.get(metric).map(|&v| (m.model_id.as_str(), v))
        })
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptyInput("top-k average"));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let take = k.min(ranked.len());
    let top = &ranked[..take];
    let top_k_mean = top.iter().map(|(_, v)| v).sum::<f64>() / take as f64;
    Ok(BinSummary {
        bin: bin.label.clone(),
        metric: metric.to_string(),
        member_count: ranked.len(),
        top_k_ids: top.iter().map(|(id, _)| id.to_string()).collect(),
        top_k_values: top.iter().map(|(_, v)| *v).collect(),
        top_k_mean,
        scatter: ranked.iter().map(|(_, v)| *v).collect(),
    })
}

/// Summaries for every (metric, non-empty bin) pair, metrics in the given
/// order and bins in spec order.
pub fn summarize(models: &[ModelMetadata], binning: &Binning, metrics: &[String], k: usize) -> Result<Vec<BinSummary>> {
    let jobs: Vec<(&String, &Bin)> = metrics.iter().flat_map(|m| binning.bins.iter().map(move |b| (m, b))).collect();
    let results: Vec<Result<Option<BinSummary>>> = jobs
        .par_iter()
        .map(|(metric, bin)| match top_k_average(models, bin, metric, k) {
            Ok(s) => Ok(Some(s)),
            Err(Error::EmptyInput(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        if let Some(s) = r? {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// x = metric, one series per bin.
    #[default]
    ByMetric,
    /// x = bin, one series per metric.
    ByBin,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" | "by-metric" | "by_metric" => Ok(Axis::ByMetric),
            "bin" | "by-bin" | "by_bin" => Ok(Axis::ByBin),
            other => Err(Error::InvalidArgument(format!("unknown axis {other:?} (metric, bin)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: String,
    /// Position of `x` on the axis.
    pub x_index: usize,
    pub y: f64,
    pub bin: String,
    /// Number of values behind `y`.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSeries {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

/// One trend series (top-k means) and one scatter series (individual top-k
/// values) per group, points ordered along the axis.
pub fn emit_series(summaries: &[BinSummary], axis: Axis) -> Vec<ScatterSeries> {
    let mut x_order: Vec<&str> = Vec::new();
    let mut group_order: Vec<&str> = Vec::new();
    for s in summaries {
        let (x, group) = match axis {
            Axis::ByMetric => (s.metric.as_str(), s.bin.as_str()),
            Axis::ByBin => (s.bin.as_str(), s.metric.as_str()),
        };
        if !x_order.contains(&x) {
            x_order.push(x);
        }
        if !group_order.contains(&group) {
            group_order.push(group);
        }
    }
    let mut out = Vec::new();
    for group in group_order {
        let mut members: Vec<&BinSummary> = summaries
            .iter()
            .filter(|s| match axis {
                Axis::ByMetric => s.bin == group,
                Axis::ByBin => s.metric == group,
            })
            .collect();
        let x_of = |s: &BinSummary| match axis {
            Axis::ByMetric => s.metric.clone(),
            Axis::ByBin => s.bin.clone(),
        };
        let pos = |x: &str| x_order.iter().position(|o| *o == x).expect("collected above");
        members.sort_by_key(|s| pos(&x_of(s)));
        let trend = members
            .iter()
            .map(|s| SeriesPoint {
                x_index: pos(&x_of(s)),
                x: x_of(s),
                y: s.top_k_mean,
                bin: s.bin.clone(),
                n: s.top_k_values.len(),
            })
            .collect();
        let scatter = members
            .iter()
            .flat_map(|s| {
                s.top_k_values.iter().map(|&y| SeriesPoint {
                    x_index: pos(&x_of(s)),
                    x: x_of(s),
                    y,
                    bin: s.bin.clone(),
                    n: 1,
                })
            })
            .collect();
        out.push(ScatterSeries {
            label: format!("{group} top-k mean"),
            points: trend,
        });
        out.push(ScatterSeries {
            label: format!("{group} top-k"),
            points: scatter,
        });
    }
    out
}

/// `x,y,series,bin,n` rows.
pub fn series_csv(series: &[ScatterSeries]) -> String {
    let mut out = String::from("x,y,series,bin,n\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(out, "{},{},{},{},{}", csv_field(&p.x), p.y, csv_field(&s.label), csv_field(&p.bin), p.n);
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalVerdict {
    pub pass: bool,
    pub first_mean: f64,
    pub second_mean: f64,
    pub difference: f64,
    pub tolerance: f64,
}

/// Two marginals of one accuracy grid must share the grand mean.
pub fn marginal_consistency_check(first: &[f64], second: &[f64], tolerance: f64) -> Result<MarginalVerdict> {
    let mean = |v: &[f64]| -> Result<f64> {
        if v.is_empty() {
            return Err(Error::EmptyInput("marginal consistency check"));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    let first_mean = mean(first)?;
    let second_mean = mean(second)?;
    let difference = (first_mean - second_mean).abs();
    Ok(MarginalVerdict {
        // small slack so an exactly-at-tolerance rounding gap is not lost to fp error
        pass: difference <= tolerance + 1e-12,
        first_mean,
        second_mean,
        difference,
        tolerance,
    })
}

/// Row-wise and column-wise means of a full grid.
pub fn grid_marginals(grid: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let cols = grid.first().map(Vec::len).unwrap_or(0);
    if cols == 0 || grid.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("grid must be non-empty and rectangular".into()));
    }
    let rows: Vec<f64> = grid.iter().map(|r| r.iter().sum::<f64>() / cols as f64).collect();
    let columns: Vec<f64> = (0..cols)
        .map(|j| grid.iter().map(|r| r[j]).sum::<f64>() / grid.len() as f64)
        .collect();
    Ok((rows, columns))
}
