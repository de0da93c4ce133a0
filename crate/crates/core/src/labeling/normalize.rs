//! Caption normalization.
//!
//! Text is NFC-normalized and lowercased, and every character that is not
//! alphanumeric ends the current token. Separate caption fields (and separate
//! tags) are joined with [`FIELD_BOUNDARY`] so that no phrase can span two of
//! them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Token placed between caption fields. It contains no alphanumeric
/// character, so it can never equal a normalized term token.
pub const FIELD_BOUNDARY: &str = "\u{1f}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionField {
    Title,
    Tags,
    Description,
    AltText,
}

impl CaptionField {
    pub fn name(self) -> &'static str {
        match self {
            CaptionField::Title => "title",
            CaptionField::Tags => "tags",
            CaptionField::Description => "description",
            CaptionField::AltText => "alt_text",
        }
    }
}

impl fmt::Display for CaptionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaptionField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "title" => Ok(CaptionField::Title),
            "tags" => Ok(CaptionField::Tags),
            "description" => Ok(CaptionField::Description),
            "alt_text" | "alt-text" | "alt" => Ok(CaptionField::AltText),
            other => Err(Error::InvalidArgument(format!(
                "unknown caption field {other:?} (expected title, tags, description or alt_text)"
            ))),
        }
    }
}

/// Ordered, non-empty list of caption fields to concatenate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CaptionField>", into = "Vec<CaptionField>")]
pub struct FieldOrder(Vec<CaptionField>);

impl FieldOrder {
    pub fn new(fields: Vec<CaptionField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("field order must not be empty".into()));
        }
        Ok(FieldOrder(fields))
    }

    pub fn fields(&self) -> &[CaptionField] {
        &self.0
    }
}

impl Default for FieldOrder {
    /// Title, tags, description, alt text.
    fn default() -> Self {
        FieldOrder(vec![
            CaptionField::Title,
            CaptionField::Tags,
            CaptionField::Description,
            CaptionField::AltText,
        ])
    }
}

impl TryFrom<Vec<CaptionField>> for FieldOrder {
    type Error = Error;

    fn try_from(fields: Vec<CaptionField>) -> Result<Self> {
        FieldOrder::new(fields)
    }
}

impl From<FieldOrder> for Vec<CaptionField> {
    fn from(order: FieldOrder) -> Self {
        order.0
    }
}

impl FromStr for FieldOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields = s
            .split(',')
            .filter(|part| !part.trim().is_empty())
            .map(CaptionField::from_str)
            .collect::<Result<Vec<_>>>()?;
        FieldOrder::new(fields)
    }
}

impl fmt::Display for FieldOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, field) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(field.name())?;
        }
        Ok(())
    }
}

/// Tags arrive either as a list or as one free-text string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Tags(pub Vec<String>);

impl<'de> Deserialize<'de> for Tags {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<String>),
            One(String),
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::List(tags) => Tags(tags),
            Repr::One(tag) => Tags(vec![tag]),
        })
    }
}

/// One row of a caption manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    #[serde(deserialize_with = "crate::io::string_or_number")]
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Tags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<u32>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
}

impl CaptionRecord {
    pub fn new(sample_id: impl Into<String>) -> Self {
        CaptionRecord {
            sample_id: sample_id.into(),
            title: None,
            description: None,
            tags: None,
            alt_text: None,
            gt_label: None,
            source: String::new(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = Some(Tags(tags.into_iter().map(Into::into).collect()));
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn with_gt(mut self, gt: u32) -> Self {
        self.gt_label = Some(gt);
        self
    }

    pub fn has_caption(&self) -> bool {
        self.title.is_some() || self.description.is_some() || self.tags.is_some() || self.alt_text.is_some()
    }

    /// Text pieces of `field`; tags yield one piece per tag.
    fn pieces(&self, field: CaptionField) -> Vec<&str> {
        match field {
            CaptionField::Title => self.title.as_deref().into_iter().collect(),
            CaptionField::Description => self.description.as_deref().into_iter().collect(),
            CaptionField::AltText => self.alt_text.as_deref().into_iter().collect(),
            CaptionField::Tags => self
                .tags
                .as_ref()
                .map(|t| t.0.iter().map(String::as_str).collect())
                .unwrap_or_default(),
        }
    }
}

/// Appends the normalized tokens of `text` to `out`.
pub fn tokenize_into(text: &str, out: &mut Vec<String>) {
    if text.is_ascii() {
        for token in text.split(|c: char| !c.is_ascii_alphanumeric()) {
            if !token.is_empty() {
                out.push(token.to_ascii_lowercase());
            }
        }
        return;
    }
    let mut current = String::new();
    for c in text.nfc() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}

/// Normalized tokens of a single phrase.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    tokenize_into(text, &mut out);
    out
}

/// Concatenates the present fields of `record` in `order` into one token
/// sequence, with [`FIELD_BOUNDARY`] between non-empty pieces.
pub fn normalize_caption(record: &CaptionRecord, order: &FieldOrder) -> Vec<String> {
    let mut tokens = Vec::new();
    for &field in order.fields() {
        for piece in record.pieces(field) {
            let before = tokens.len();
            if before > 0 {
                tokens.push(FIELD_BOUNDARY.to_string());
            }
            tokenize_into(piece, &mut tokens);
            if tokens.len() == before + 1 && before > 0 {
                // piece produced no tokens
                tokens.pop();
            }
        }
    }
    tokens
}
