//! Caption subset matching: normalization, term dictionaries, span finding
//! and label strategies.

mod dictionary;
mod matching;
mod normalize;

pub use dictionary::{ClassEntry, Term, TermDictionary};
pub use matching::{
    decide_label, excluded_classes, exclusion_filter, find_matches, ExclusionMode, FilterVerdict, LabelDecision,
    Labeled, Labeler, MatchOutcome, MatchStrategy, StrategyKind, TokenSpan, DEFAULT_MC_CAP,
};
pub use normalize::{normalize_caption, tokenize, tokenize_into, CaptionField, CaptionRecord, FieldOrder, Tags, FIELD_BOUNDARY};
