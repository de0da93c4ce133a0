use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dictionary::TermDictionary;
use super::normalize::{normalize_caption, CaptionRecord, FieldOrder};
use crate::error::{Error, Result};

pub const DEFAULT_MC_CAP: usize = 25;

/// One occurrence of a matching term in a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSpan {
    pub start: usize,
    pub len: usize,
    pub class_id: u32,
    pub term_id: u32,
}

impl TokenSpan {
    pub fn term<'d>(&self, dict: &'d TermDictionary) -> &'d str {
        &dict.term(self.term_id).text
    }

    pub fn tokens<'t>(&self, tokens: &'t [String]) -> &'t [String] {
        &tokens[self.start..self.start + self.len]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    /// Ordered by start ascending, then span length descending.
    pub spans: Vec<TokenSpan>,
    /// Matched classes in first-occurrence order, no duplicates.
    pub distinct_classes: Vec<u32>,
}

impl MatchOutcome {
    fn from_spans(spans: Vec<TokenSpan>) -> Self {
        let mut distinct_classes = Vec::new();
        for span in &spans {
            if !distinct_classes.contains(&span.class_id) {
                distinct_classes.push(span.class_id);
            }
        }
        MatchOutcome {
            spans,
            distinct_classes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Outcome with every span of an excluded class removed.
    pub fn without_classes(&self, excluded: &[u32]) -> MatchOutcome {
        if excluded.is_empty() {
            return self.clone();
        }
        MatchOutcome::from_spans(
            self.spans
                .iter()
                .filter(|s| !excluded.contains(&s.class_id))
                .copied()
                .collect(),
        )
    }
}

/// Every aligned occurrence of a dictionary term in `tokens`.
pub fn find_matches(tokens: &[String], dict: &TermDictionary) -> MatchOutcome {
    let trie = dict.matching_trie();
    let symbols = trie.symbols(tokens);
    let mut spans = Vec::new();
    trie.scan(&symbols, |start, len, term_id| {
        spans.push(TokenSpan {
            start,
            len,
            class_id: dict.term(term_id).class_id,
            term_id,
        });
    });
    MatchOutcome::from_spans(spans)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Strict,
    #[serde(alias = "sc")]
    SingleClass,
    #[serde(alias = "mc")]
    MultiClass,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(StrategyKind::Strict),
            "sc" | "single_class" | "single-class" => Ok(StrategyKind::SingleClass),
            "mc" | "multi_class" | "multi-class" => Ok(StrategyKind::MultiClass),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?} (strict, sc, mc)"))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Strict => "strict",
            StrategyKind::SingleClass => "sc",
            StrategyKind::MultiClass => "mc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchStrategy {
    pub kind: StrategyKind,
    /// Only consulted for [`StrategyKind::MultiClass`].
    pub mc_cap: usize,
}

impl MatchStrategy {
    pub fn new(kind: StrategyKind, mc_cap: usize) -> Result<Self> {
        if mc_cap == 0 {
            return Err(Error::InvalidArgument("mc cap must be at least 1".into()));
        }
        Ok(MatchStrategy { kind, mc_cap })
    }

    pub fn strict() -> Self {
        MatchStrategy {
            kind: StrategyKind::Strict,
            mc_cap: DEFAULT_MC_CAP,
        }
    }

    pub fn single_class() -> Self {
        MatchStrategy {
            kind: StrategyKind::SingleClass,
            mc_cap: DEFAULT_MC_CAP,
        }
    }

    pub fn multi_class(mc_cap: usize) -> Result<Self> {
        MatchStrategy::new(StrategyKind::MultiClass, mc_cap)
    }
}

impl Default for MatchStrategy {
    fn default() -> Self {
        MatchStrategy::single_class()
    }
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StrategyKind::MultiClass => write!(f, "mc{}", self.mc_cap),
            kind => kind.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub labels: Vec<u32>,
}

impl LabelDecision {
    pub fn dropped(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn decide_label(outcome: &MatchOutcome, strategy: &MatchStrategy) -> LabelDecision {
    let classes = &outcome.distinct_classes;
    let labels = match strategy.kind {
        StrategyKind::Strict if classes.len() == 1 => classes.clone(),
        StrategyKind::Strict => Vec::new(),
        StrategyKind::SingleClass => classes.first().copied().into_iter().collect(),
        StrategyKind::MultiClass => classes.iter().take(strategy.mc_cap).copied().collect(),
    };
    LabelDecision { labels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionMode {
    /// Exclude terms are ignored.
    None,
    /// A class whose exclude terms occur is removed from the candidates.
    #[default]
    PerClass,
    /// A sample containing any matching term is dropped from the corpus.
    #[serde(alias = "global")]
    GlobalDrop,
}

impl FromStr for ExclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "off" => Ok(ExclusionMode::None),
            "per-class" | "per_class" => Ok(ExclusionMode::PerClass),
            "global" | "global-drop" | "global_drop" => Ok(ExclusionMode::GlobalDrop),
            other => Err(Error::InvalidArgument(format!(
                "unknown exclusion mode {other:?} (none, per-class, global)"
            ))),
        }
    }
}

impl fmt::Display for ExclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionMode::None => "none",
            ExclusionMode::PerClass => "per-class",
            ExclusionMode::GlobalDrop => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterVerdict {
    /// Classes whose candidacy is withdrawn, ascending.
    PerClass { excluded: Vec<u32> },
    Global { drop: bool },
    Unfiltered,
}

/// Classes whose exclude phrases occur in `tokens`, ascending.
pub fn excluded_classes(tokens: &[String], dict: &TermDictionary) -> Vec<u32> {
    if !dict.has_exclusions() {
        return Vec::new();
    }
    let trie = dict.excluding_trie();
    let symbols = trie.symbols(tokens);
    let mut excluded = Vec::new();
    trie.scan(&symbols, |_, _, id| excluded.extend_from_slice(dict.exclusion_classes(id)));
    excluded.sort_unstable();
    excluded.dedup();
    excluded
}

pub fn exclusion_filter(tokens: &[String], dict: &TermDictionary, mode: ExclusionMode) -> FilterVerdict {
    match mode {
        ExclusionMode::None => FilterVerdict::Unfiltered,
        ExclusionMode::PerClass => FilterVerdict::PerClass {
            excluded: excluded_classes(tokens, dict),
        },
        ExclusionMode::GlobalDrop => FilterVerdict::Global {
            drop: !find_matches(tokens, dict).is_empty(),
        },
    }
}

/// Result of running one record through the labeler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeled {
    /// Spans remaining after per-class exclusion.
    pub outcome: MatchOutcome,
    pub excluded: Vec<u32>,
    pub decision: LabelDecision,
    /// Set only in [`ExclusionMode::GlobalDrop`]: the record contains a
    /// matching term and is removed from the corpus.
    pub filtered: bool,
}

/// A dictionary bound to a strategy, exclusion mode and field order.
#[derive(Debug, Clone)]
pub struct Labeler<'d> {
    pub dict: &'d TermDictionary,
    pub strategy: MatchStrategy,
    pub exclusion: ExclusionMode,
    pub fields: FieldOrder,
}

impl<'d> Labeler<'d> {
    pub fn new(dict: &'d TermDictionary, strategy: MatchStrategy) -> Self {
        Labeler {
            dict,
            strategy,
            exclusion: ExclusionMode::default(),
            fields: FieldOrder::default(),
        }
    }

    pub fn with_exclusion(mut self, mode: ExclusionMode) -> Self {
        self.exclusion = mode;
        self
    }

    pub fn with_fields(mut self, fields: FieldOrder) -> Self {
        self.fields = fields;
        self
    }

    pub fn label_tokens(&self, tokens: &[String]) -> Labeled {
        let outcome = find_matches(tokens, self.dict);
        match self.exclusion {
            ExclusionMode::None => Labeled {
                decision: decide_label(&outcome, &self.strategy),
                outcome,
                excluded: Vec::new(),
                filtered: false,
            },
            ExclusionMode::PerClass => {
                let excluded = excluded_classes(tokens, self.dict);
                let outcome = outcome.without_classes(&excluded);
                Labeled {
                    decision: decide_label(&outcome, &self.strategy),
                    outcome,
                    excluded,
                    filtered: false,
                }
            }
            ExclusionMode::GlobalDrop => Labeled {
                filtered: !outcome.is_empty(),
                decision: LabelDecision::default(),
                outcome,
                excluded: Vec::new(),
            },
        }
    }

    pub fn label(&self, record: &CaptionRecord) -> Labeled {
        self.label_tokens(&normalize_caption(record, &self.fields))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::dictionary::ClassEntry;
    use crate::labeling::normalize::tokenize;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn single_exact_occurrence() {
        let dict = TermDictionary::new("t", vec![ClassEntry::new(42, "elephant", ["elephant"])]).unwrap();
        let out = find_matches(&toks(&["a", "photo", "of", "an", "elephant"]), &dict);
        assert_eq!(out.spans.len(), 1);
        assert_eq!(out.spans[0].start, 4);
        assert_eq!(out.spans[0].class_id, 42);
        assert_eq!(out.spans[0].term(&dict), "elephant");
    }

    #[test]
    fn overlapping_terms_all_reported() {
        let dict = TermDictionary::new(
            "t",
            vec![ClassEntry::new(7, "mashed potato", ["mashed potato"]), ClassEntry::new(9, "potato", ["potato"])],
        )
        .unwrap();
        let tokens = toks(&["mashed", "potato"]);
        let out = find_matches(&tokens, &dict);
        let got: Vec<_> = out.spans.iter().map(|s| (s.start, s.len, s.class_id)).collect();
        assert_eq!(got, vec![(0, 2, 7), (1, 1, 9)]);
        assert_eq!(out.distinct_classes, vec![7, 9]);
        assert_eq!(out.spans[0].tokens(&tokens), &tokens[..]);
    }

    #[test]
    fn longer_span_first_at_same_start() {
        let dict = TermDictionary::new(
            "t",
            vec![ClassEntry::new(1, "sea", ["sea"]), ClassEntry::new(2, "sea lion", ["sea lion"])],
        )
        .unwrap();
        let out = find_matches(&tokenize("sea lion"), &dict);
        assert_eq!(out.distinct_classes, vec![2, 1]);
        assert_eq!(decide_label(&out, &MatchStrategy::single_class()).labels, vec![2]);
    }

    #[test]
    fn sentinel_blocks_cross_field_phrases() {
        let dict = TermDictionary::new("t", vec![ClassEntry::new(7, "mp", ["mashed potato"])]).unwrap();
        let rec = CaptionRecord::new("x").with_title("mashed").with_tags(["potato"]);
        let out = Labeler::new(&dict, MatchStrategy::default()).label(&rec);
        assert!(out.outcome.is_empty());
        assert!(out.decision.dropped());
    }

    #[test]
    fn no_substring_matches() {
        let dict = TermDictionary::new("t", vec![ClassEntry::new(1, "cat", ["cat"])]).unwrap();
        assert!(find_matches(&tokenize("category concatenate"), &dict).is_empty());
        assert_eq!(find_matches(&tokenize("cat-egory"), &dict).spans.len(), 1);
    }

    #[test]
    fn empty_tokens_empty_outcome() {
        let dict = TermDictionary::new("t", vec![ClassEntry::new(1, "cat", ["cat"])]).unwrap();
        assert_eq!(find_matches(&[], &dict), MatchOutcome::default());
    }

    fn outcome(classes: &[u32]) -> MatchOutcome {
        MatchOutcome::from_spans(
            classes
                .iter()
                .enumerate()
                .map(|(i, &c)| TokenSpan {
                    start: i,
                    len: 1,
                    class_id: c,
                    term_id: i as u32,
                })
                .collect(),
        )
    }

    #[test]
    fn strategies_single_class_case() {
        let out = outcome(&[42]);
        for s in [MatchStrategy::strict(), MatchStrategy::single_class(), MatchStrategy::multi_class(25).unwrap()] {
            assert_eq!(decide_label(&out, &s).labels, vec![42]);
        }
    }

    #[test]
    fn strategies_two_classes() {
        let out = outcome(&[7, 9]);
        assert!(decide_label(&out, &MatchStrategy::strict()).dropped());
        assert_eq!(decide_label(&out, &MatchStrategy::single_class()).labels, vec![7]);
        assert_eq!(decide_label(&out, &MatchStrategy::multi_class(25).unwrap()).labels, vec![7, 9]);
    }

    #[test]
    fn strict_accepts_repeated_terms_of_one_class() {
        let out = outcome(&[5, 5, 5]);
        assert_eq!(out.distinct_classes, vec![5]);
        assert_eq!(decide_label(&out, &MatchStrategy::strict()).labels, vec![5]);
    }

    #[test]
    fn mc_cap_keeps_first_classes() {
        let classes: Vec<u32> = (0..30).rev().collect();
        let out = outcome(&classes);
        let labels = decide_label(&out, &MatchStrategy::multi_class(25).unwrap()).labels;
        assert_eq!(labels, classes[..25].to_vec());
        assert!(MatchStrategy::multi_class(0).is_err());
    }

    #[test]
    fn empty_outcome_is_dropped_everywhere() {
        let out = MatchOutcome::default();
        for s in [MatchStrategy::strict(), MatchStrategy::single_class(), MatchStrategy::multi_class(3).unwrap()] {
            assert!(decide_label(&out, &s).dropped());
        }
    }

    fn lion_dict() -> TermDictionary {
        TermDictionary::new(
            "t",
            vec![
                ClassEntry::new(1, "lion", ["lion"]).with_excludes(["sea lion"]),
                ClassEntry::new(2, "statue", ["statue"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn per_class_exclusion_removes_candidate() {
        let dict = lion_dict();
        let tokens = tokenize("sea lion statue");
        assert_eq!(
            exclusion_filter(&tokens, &dict, ExclusionMode::PerClass),
            FilterVerdict::PerClass { excluded: vec![1] }
        );
        let labeled = Labeler::new(&dict, MatchStrategy::single_class()).label_tokens(&tokens);
        assert_eq!(labeled.decision.labels, vec![2]);
        assert_eq!(labeled.excluded, vec![1]);

        let unfiltered = Labeler::new(&dict, MatchStrategy::single_class())
            .with_exclusion(ExclusionMode::None)
            .label_tokens(&tokens);
        assert_eq!(unfiltered.decision.labels, vec![1]);
    }

    #[test]
    fn global_drop_keeps_unmatched() {
        let dict = lion_dict();
        assert_eq!(
            exclusion_filter(&tokenize("a quiet beach"), &dict, ExclusionMode::GlobalDrop),
            FilterVerdict::Global { drop: false }
        );
        assert_eq!(
            exclusion_filter(&tokenize("lion"), &dict, ExclusionMode::GlobalDrop),
            FilterVerdict::Global { drop: true }
        );
        let labeled = Labeler::new(&dict, MatchStrategy::single_class())
            .with_exclusion(ExclusionMode::GlobalDrop)
            .label_tokens(&tokenize("a statue"));
        assert!(labeled.filtered);
        assert!(labeled.decision.dropped());
    }

    #[test]
    fn parse_strategy_and_mode() {
        assert_eq!("sc".parse::<StrategyKind>().unwrap(), StrategyKind::SingleClass);
        assert_eq!("mc".parse::<StrategyKind>().unwrap(), StrategyKind::MultiClass);
        assert!("fuzzy".parse::<StrategyKind>().is_err());
        assert_eq!("global".parse::<ExclusionMode>().unwrap(), ExclusionMode::GlobalDrop);
        assert_eq!(ExclusionMode::PerClass.to_string(), "per-class");
    }
}
