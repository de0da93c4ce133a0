//! Term dictionaries and the token-level phrase trie behind them.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::tokenize;
use crate::error::{Error, Result};

/// One class of a labeling problem, as written in a dictionary file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    #[serde(rename = "id")]
    pub class_id: u32,
    #[serde(rename = "name")]
    pub class_name: String,
    pub terms: Vec<String>,
    #[serde(default, rename = "exclude", skip_serializing_if = "Vec::is_empty")]
    pub exclude_terms: Vec<String>,
}

impl ClassEntry {
    pub fn new<I, S>(class_id: u32, class_name: impl Into<String>, terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ClassEntry {
            class_id,
            class_name: class_name.into(),
            terms: terms.into_iter().map(Into::into).collect(),
            exclude_terms: Vec::new(),
        }
    }

    pub fn with_excludes<I, S>(mut self, excludes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.exclude_terms = excludes.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictionaryFile {
    labelset_id: String,
    classes: Vec<ClassEntry>,
}

/// A normalized matching term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    /// Normalized tokens joined by single spaces.
    pub text: String,
    pub len: usize,
    pub class_id: u32,
}

/// Token-sequence trie. Tokens are interned so a caption is looked up once
/// per token no matter how many phrases start there.
#[derive(Debug, Clone, Default)]
pub(crate) struct PhraseTrie {
    vocab: HashMap<String, u32>,
    // children[node] maps interned token -> child node
    children: Vec<HashMap<u32, u32>>,
    terminal: Vec<Option<u32>>,
    max_len: usize,
}

impl PhraseTrie {
    fn new() -> Self {
        PhraseTrie {
            vocab: HashMap::new(),
            children: vec![HashMap::new()],
            terminal: vec![None],
            max_len: 0,
        }
    }

    /// Inserts `tokens` with payload `id`; returns the existing payload if
    /// the phrase was already present.
    fn insert(&mut self, tokens: &[String], id: u32) -> Option<u32> {
        let mut node = 0usize;
        for token in tokens {
            let next_sym = self.vocab.len() as u32;
            let sym = *self.vocab.entry(token.clone()).or_insert(next_sym);
            node = match self.children[node].get(&sym) {
                Some(&child) => child as usize,
                None => {
                    let child = self.children.len();
                    self.children.push(HashMap::new());
                    self.terminal.push(None);
                    self.children[node].insert(sym, child as u32);
                    child
                }
            };
        }
        self.max_len = self.max_len.max(tokens.len());
        match self.terminal[node] {
            Some(existing) => Some(existing),
            None => {
                self.terminal[node] = Some(id);
                None
            }
        }
    }

    pub(crate) fn max_len(&self) -> usize {
        self.max_len
    }

    /// Interned symbol for every caption token; tokens unknown to the trie
    /// (including the field sentinel) map to `None` and stop any walk.
    pub(crate) fn symbols(&self, tokens: &[String]) -> Vec<Option<u32>> {
        tokens.iter().map(|t| self.vocab.get(t.as_str()).copied()).collect()
    }

    /// Calls `hit(start, len, payload)` for every phrase occurrence, in
    /// order of start ascending then length descending.
    pub(crate) fn scan(&self, symbols: &[Option<u32>], mut hit: impl FnMut(usize, usize, u32)) {
        let mut found: Vec<(usize, u32)> = Vec::with_capacity(self.max_len);
        for start in 0..symbols.len() {
            let mut node = 0usize;
            found.clear();
            for (offset, sym) in symbols[start..].iter().take(self.max_len).enumerate() {
                let Some(sym) = sym else { break };
                match self.children[node].get(sym) {
                    Some(&child) => node = child as usize,
                    None => break,
                }
                if let Some(id) = self.terminal[node] {
                    found.push((offset + 1, id));
                }
            }
            for &(len, id) in found.iter().rev() {
                hit(start, len, id);
            }
        }
    }
}

/// Per-class matching and exclusion phrases defining a labeling problem.
///
/// Immutable once built; share it across worker threads by reference.
#[derive(Debug, Clone)]
pub struct TermDictionary {
    labelset_id: String,
    entries: Vec<ClassEntry>,
    terms: Vec<Term>,
    matching: PhraseTrie,
    // exclusion phrase id -> classes that list it
    exclusions: Vec<Vec<u32>>,
    exclusion_text: Vec<String>,
    excluding: PhraseTrie,
}

impl TermDictionary {
    pub fn new(labelset_id: impl Into<String>, entries: Vec<ClassEntry>) -> Result<Self> {
        let labelset_id = labelset_id.into();
        let mut seen_ids = BTreeSet::new();
        let mut terms: Vec<Term> = Vec::new();
        let mut matching = PhraseTrie::new();
        let mut exclusions: Vec<Vec<u32>> = Vec::new();
        let mut exclusion_text = Vec::new();
        let mut excluding = PhraseTrie::new();

        for entry in &entries {
            if !seen_ids.insert(entry.class_id) {
                return Err(Error::Dictionary(format!("class id {} appears more than once", entry.class_id)));
            }
            if entry.terms.is_empty() {
                return Err(Error::Dictionary(format!("class {} has no matching terms", entry.class_id)));
            }
            for raw in &entry.terms {
                let tokens = tokenize(raw);
                if tokens.is_empty() {
                    return Err(Error::Dictionary(format!(
                        "class {}: term {raw:?} normalizes to nothing",
                        entry.class_id
                    )));
                }
                let id = terms.len() as u32;
                if let Some(existing) = matching.insert(&tokens, id) {
                    let owner = terms[existing as usize].class_id;
                    if owner == entry.class_id {
                        continue;
                    }
                    return Err(Error::DuplicateTerm {
                        term: tokens.join(" "),
                        first: owner,
                        second: entry.class_id,
                    });
                }
                terms.push(Term {
                    len: tokens.len(),
                    text: tokens.join(" "),
                    class_id: entry.class_id,
                });
            }
            for raw in &entry.exclude_terms {
                let tokens = tokenize(raw);
                if tokens.is_empty() {
                    return Err(Error::Dictionary(format!(
                        "class {}: exclude term {raw:?} normalizes to nothing",
                        entry.class_id
                    )));
                }
                let id = exclusions.len() as u32;
                match excluding.insert(&tokens, id) {
                    Some(existing) => {
                        let classes = &mut exclusions[existing as usize];
                        if !classes.contains(&entry.class_id) {
                            classes.push(entry.class_id);
                        }
                    }
                    None => {
                        exclusions.push(vec![entry.class_id]);
                        exclusion_text.push(tokens.join(" "));
                    }
                }
            }
        }

        Ok(TermDictionary {
            labelset_id,
            entries,
            terms,
            matching,
            exclusions,
            exclusion_text,
            excluding,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DictionaryFile = serde_json::from_str(text)?;
        TermDictionary::new(file.labelset_id, file.classes)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TermDictionary::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DictionaryFile {
            labelset_id: self.labelset_id.clone(),
            classes: self.entries.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn labelset_id(&self) -> &str {
        &self.labelset_id
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.class_id)
    }

    pub fn contains_class(&self, class_id: u32) -> bool {
        self.entries.iter().any(|e| e.class_id == class_id)
    }

    /// Normalized matching terms; a [`TokenSpan`](super::TokenSpan)'s
    /// `term_id` indexes this slice.
    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn term(&self, term_id: u32) -> &Term {
        &self.terms[term_id as usize]
    }

    pub fn max_term_len(&self) -> usize {
        self.matching.max_len()
    }

    pub fn has_exclusions(&self) -> bool {
        !self.exclusions.is_empty()
    }

    pub(crate) fn matching_trie(&self) -> &PhraseTrie {
        &self.matching
    }

    pub(crate) fn excluding_trie(&self) -> &PhraseTrie {
        &self.excluding
    }

    pub(crate) fn exclusion_classes(&self, id: u32) -> &[u32] {
        &self.exclusions[id as usize]
    }

    pub fn exclusion_phrases(&self) -> &[String] {
        &self.exclusion_text
    }
}
