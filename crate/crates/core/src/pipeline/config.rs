use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{Axis, Dimension, DEFAULT_TOP_K};
use crate::audit::RebalanceMode;
use crate::error::{Error, Result};
use crate::io::bytes_digest;
use crate::labeling::{ExclusionMode, FieldOrder, MatchStrategy, StrategyKind, DEFAULT_MC_CAP};

/// Everything a run needs. Loaded from a TOML or JSON file and overlaid with
/// command-line flags; unset fields fall back to the documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,

    // label / audit / balance
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_mode: Option<ExclusionMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<FieldOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rebalance: Option<RebalanceMode>,

    // eval
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labelset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred_labelset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eval_sets: Vec<PathBuf>,
    /// `model=path` or a bare path (model id = file stem).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<String>,
    /// `eval_set_id=path` to a class-universe file.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shift_universes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best: Option<bool>,

    // aggregate
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,

    // check
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_label: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_shift: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<PathBuf>,
    /// label accuracy, coverage, utilization
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_fractions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; opt: $($o:ident),*; vec: $($v:ident),*) => {
        $( if $top.$o.is_some() { $base.$o = $top.$o; } )*
        $( if !$top.$v.is_empty() { $base.$v = $top.$v; } )*
    };
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = crate::io::read_to_string(path)?;
        let mut config: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
        };
        config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths in a config file relative to the file itself.
    fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.manifest,
            &mut self.dictionary,
            &mut self.labels,
            &mut self.labelset,
            &mut self.pred_labelset,
            &mut self.subset,
            &mut self.metadata,
            &mut self.grid,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.eval_sets.iter_mut().for_each(fix);
        let fix_pair = |s: &mut String| {
            let (prefix, path) = match s.split_once('=') {
                Some((name, path)) => (format!("{name}="), path.to_string()),
                None => (String::new(), s.clone()),
            };
            let path = PathBuf::from(path);
            if path.is_relative() {
                *s = format!("{prefix}{}", dir.join(path).display());
            }
        };
        self.predictions.iter_mut().for_each(fix_pair);
        self.shift_universes.iter_mut().for_each(fix_pair);
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        overlay_fields!(self, top;
            opt: command, manifest, dictionary, strategy, mc_cap, exclude_mode, fields, labels, target, rebalance,
                 labelset, pred_labelset, subset, partition, best, metadata, dimension, edges, bin_labels, axis, k,
                 by_label, by_shift, grid, audit_fractions, tolerance, seed, output;
            vec: eval_sets, predictions, shift_universes, metrics);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(DEFAULT_TOP_K)
    }

    pub fn strategy(&self) -> Result<MatchStrategy> {
        MatchStrategy::new(
            self.strategy.unwrap_or(StrategyKind::SingleClass),
            self.mc_cap.unwrap_or(DEFAULT_MC_CAP),
        )
    }

    pub fn exclusion(&self) -> ExclusionMode {
        self.exclude_mode.unwrap_or_default()
    }

    pub fn field_order(&self) -> FieldOrder {
        self.fields.clone().unwrap_or_default()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory so
    /// that the same run written elsewhere shares a digest.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        bytes_digest(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_prefers_top() {
        let base = RunConfig {
            seed: Some(1),
            k: Some(5),
            metrics: vec!["a".into()],
            ..Default::default()
        };
        let top = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let merged = base.overlay(top);
        assert_eq!(merged.seed(), 9);
        assert_eq!(merged.k(), 5);
        assert_eq!(merged.metrics, vec!["a"]);
    }

    #[test]
    fn digest_ignores_output() {
        let a = RunConfig {
            seed: Some(3),
            output: Some("x".into()),
            ..Default::default()
        };
        let b = RunConfig {
            output: Some("y".into()),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        let c = RunConfig { seed: Some(4), ..a.clone() };
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn toml_config_paths_are_file_relative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "command = \"label\"\nmanifest = \"m.jsonl\"\ndictionary = \"/abs/d.json\"\nstrategy = \"mc\"\nfields = [\"title\", \"tags\"]\npredictions = [\"a=p.jsonl\"]\nseed = 7\n",
        )
        .unwrap();
        let c = RunConfig::from_path(&path).unwrap();
        assert_eq!(c.manifest.as_deref(), Some(dir.path().join("m.jsonl").as_path()));
        assert_eq!(c.dictionary.as_deref(), Some(Path::new("/abs/d.json")));
        assert_eq!(c.strategy, Some(StrategyKind::MultiClass));
        assert_eq!(c.predictions, vec![format!("a={}", dir.path().join("p.jsonl").display())]);
        assert_eq!(c.seed(), 7);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunConfig::from_path(&path).is_err());
    }
}
