//! Label-set universes: subsetting, disjoint partitioning, shift-class
//! intersection and prediction remapping.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PredictionRecord, ScoredClass, Scores};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u32,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LabelSetFile", into = "LabelSetFile")]
pub struct LabelSet {
    id: String,
    parent_id: Option<String>,
    classes: Vec<ClassInfo>,
    index: HashMap<u32, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelSetFile {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<String>,
    classes: Vec<ClassInfo>,
}

impl TryFrom<LabelSetFile> for LabelSet {
    type Error = Error;

    fn try_from(file: LabelSetFile) -> Result<Self> {
        LabelSet::new(file.id, file.parent_id, file.classes)
    }
}

impl From<LabelSet> for LabelSetFile {
    fn from(set: LabelSet) -> Self {
        LabelSetFile {
            id: set.id,
            parent_id: set.parent_id,
            classes: set.classes,
        }
    }
}

impl PartialEq for LabelSet {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.parent_id == other.parent_id && self.classes == other.classes
    }
}

impl LabelSet {
    pub fn new(id: impl Into<String>, parent_id: Option<String>, classes: Vec<ClassInfo>) -> Result<Self> {
        let id = id.into();
        let mut index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            if index.insert(c.id, i).is_some() {
                return Err(Error::LabelSet(format!("{id}: class id {} appears more than once", c.id)));
            }
        }
        Ok(LabelSet {
            id,
            parent_id,
            classes,
            index,
        })
    }

    /// Classes `0..n` named by their index.
    pub fn dense(id: impl Into<String>, n: u32) -> Self {
        let classes = (0..n).map(|i| ClassInfo { id: i, name: i.to_string() }).collect();
        LabelSet::new(id, None, classes).expect("dense ids are unique")
    }

    pub fn from_ids(id: impl Into<String>, ids: impl IntoIterator<Item = u32>) -> Result<Self> {
        let classes = ids.into_iter().map(|i| ClassInfo { id: i, name: String::new() }).collect();
        LabelSet::new(id, None, classes)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn parent_id(&self) -> Option<&str> {
        self.parent_id.as_deref()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.index.contains_key(&class_id)
    }

    /// Position of `class_id` in this set's order.
    pub fn position(&self, class_id: u32) -> Option<usize> {
        self.index.get(&class_id).copied()
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.ids().all(|c| other.contains(c))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Classes of `parent` whose ids appear in `class_ids`, in parent order.
pub fn subset(parent: &LabelSet, class_ids: &[u32], id: impl Into<String>) -> Result<LabelSet> {
    let wanted: HashSet<u32> = class_ids.iter().copied().collect();
    if let Some(&missing) = class_ids.iter().find(|&&c| !parent.contains(c)) {
        return Err(Error::UnknownClass(missing));
    }
    let classes = parent.classes.iter().filter(|c| wanted.contains(&c.id)).cloned().collect();
    LabelSet::new(id, Some(parent.id.clone()), classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSetPartition {
    pub parent_id: String,
    pub seed: u64,
    pub parts: Vec<LabelSet>,
}

/// Uniformly random split of `parent` into `k` disjoint parts whose sizes
/// differ by at most one. Each part keeps parent order.
pub fn partition_into_k(parent: &LabelSet, k: usize, seed: u64) -> Result<LabelSetPartition> {
    if k == 0 || k > parent.len() {
        return Err(Error::Partition {
            classes: parent.len(),
            parts: k,
        });
    }
    let mut order: Vec<usize> = (0..parent.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = parent.len() / k;
    let extra = parent.len() % k;
    let mut parts = Vec::with_capacity(k);
    let mut offset = 0;
    for p in 0..k {
        let size = base + usize::from(p < extra);
        let mut members = order[offset..offset + size].to_vec();
        offset += size;
        members.sort_unstable();
        let classes = members.into_iter().map(|i| parent.classes[i].clone()).collect();
        parts.push(LabelSet::new(
            format!("{}-part{p:02}", parent.id),
            Some(parent.id.clone()),
            classes,
        )?);
    }
    Ok(LabelSetPartition {
        parent_id: parent.id.clone(),
        seed,
        parts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedClassMap {
    pub eval_set_id: String,
    pub shared: Vec<u32>,
}

impl SharedClassMap {
    /// No class is shared, so the shift cannot be evaluated.
    pub fn is_empty(&self) -> bool {
        self.shared.is_empty()
    }
}

/// Intersection of `labelset` with a shift's class universe, in label-set
/// order.
pub fn shared_classes(labelset: &LabelSet, eval_set_id: &str, shift_universe: &[u32]) -> SharedClassMap {
    let universe: HashSet<u32> = shift_universe.iter().copied().collect();
    let shared: Vec<u32> = labelset.ids().filter(|c| universe.contains(c)).collect();
    if shared.is_empty() {
        log::warn!("label set {} shares no classes with {eval_set_id}", labelset.id());
    }
    SharedClassMap {
        eval_set_id: eval_set_id.to_string(),
        shared,
    }
}

/// Highest score wins; exact ties go to the lower class id.
pub(crate) fn better(candidate: (f64, u32), best: Option<(f64, u32)>) -> bool {
    match best {
        None => true,
        Some((score, class)) => candidate.0 > score || (candidate.0 == score && candidate.1 < class),
    }
}

/// Restates `pred` over `target`, a subset of `source` (the label set its
/// scores refer to).
///
/// Dense scores are restricted to the target classes. Top-k lists keep only
/// target classes and abstain when none remain. Argmax-only predictions carry
/// no information about the runner-up and cannot be remapped.
pub fn remap_prediction(pred: &PredictionRecord, source: &LabelSet, target: &LabelSet) -> Result<PredictionRecord> {
    let scores = match &pred.scores {
        Scores::Dense(values) => {
            if values.len() != source.len() {
                return Err(Error::Prediction {
                    sample: pred.sample_id.clone(),
                    reason: format!("{} dense scores for a {}-class label set", values.len(), source.len()),
                });
            }
            let restricted = target
                .ids()
                .map(|c| {
                    source.position(c).map(|i| values[i]).ok_or_else(|| Error::LabelSetMismatch {
                        predictions: source.id().to_string(),
                        target: target.id().to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Scores::Dense(restricted)
        }
        Scores::TopK(entries) => {
            let kept: Vec<ScoredClass> = entries.iter().filter(|e| target.contains(e.class)).copied().collect();
            if kept.is_empty() {
                Scores::Abstain
            } else {
                Scores::TopK(kept)
            }
        }
        Scores::Argmax(_) => return Err(Error::UnsupportedRemap(pred.sample_id.clone())),
        Scores::Abstain => Scores::Abstain,
    };
    Ok(PredictionRecord {
        scores,
        ..pred.clone()
    })
}
