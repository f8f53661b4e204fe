//! Extraction of checkable elements: numbers, named entities and
//! content-term profiles.
//!
//! All span offsets exposed by this module are character (Unicode scalar)
//! offsets into the source text, half-open. Byte offsets are kept alongside
//! for slicing.

mod entities;
mod numbers;
mod terms;

use std::ops::Range;

use num::BigRational;
use thiserror::Error;

use crate::model::ElementKind;

pub use entities::{extract_entities, heuristic_entities, EntityTagger, HttpTagger, TaggedSpan};
pub use numbers::{canonical_decimal, extract_numbers, normalize_number, NumberError};
pub use terms::{content_terms, is_stopword, TermProfile};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("entity tagger unreachable: {0}")]
    Transport(String),
    #[error("entity tagger protocol violation: {0}")]
    Protocol(String),
}

/// One extracted number or entity occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementSpan {
    surface: String,
    start: usize,
    end: usize,
    bytes: Range<usize>,
    kind: ElementKind,
    numeric_value: Option<BigRational>,
    is_percent: bool,
    canonical: String,
}

impl ElementSpan {
    pub(crate) fn number(
        text: &str,
        bytes: Range<usize>,
        value: BigRational,
        is_percent: bool,
    ) -> Self {
        let canonical = canonical_decimal(&value);
        Self::build(text, bytes, ElementKind::Number, Some(value), is_percent, canonical)
    }

    pub(crate) fn entity(text: &str, bytes: Range<usize>) -> Self {
        let canonical = entity_key(&text[bytes.clone()]);
        Self::build(text, bytes, ElementKind::Entity, None, false, canonical)
    }

    fn build(
        text: &str,
        bytes: Range<usize>,
        kind: ElementKind,
        numeric_value: Option<BigRational>,
        is_percent: bool,
        canonical: String,
    ) -> Self {
        let start = text[..bytes.start].chars().count();
        let surface = text[bytes.clone()].to_string();
        let end = start + surface.chars().count();
        Self { surface, start, end, bytes, kind, numeric_value, is_percent, canonical }
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    /// Character offset of the first character.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Character offset one past the last character.
    pub fn end(&self) -> usize {
        self.end
    }

    pub fn byte_range(&self) -> Range<usize> {
        self.bytes.clone()
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn numeric_value(&self) -> Option<&BigRational> {
        self.numeric_value.as_ref()
    }

    pub fn is_percent(&self) -> bool {
        self.is_percent
    }

    /// Comparison key: canonical decimal for numbers, case-folded and
    /// whitespace-collapsed surface for entities.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub(crate) fn overlaps(&self, other: &Range<usize>) -> bool {
        self.bytes.start < other.end && other.start < self.bytes.end
    }
}

/// Case-folded, whitespace-collapsed comparison key for an entity surface.
pub fn entity_key(surface: &str) -> String {
    surface.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Slices `text` by character offsets. Returns `None` when out of range.
pub fn slice_chars(text: &str, start: usize, end: usize) -> Option<&str> {
    let range = char_range_to_bytes(text, start, end)?;
    Some(&text[range])
}

/// Converts a half-open character range into a byte range.
pub fn char_range_to_bytes(text: &str, start: usize, end: usize) -> Option<Range<usize>> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start { b_start } else { indices.nth(end - start - 1)? };
    Some(b_start..b_end)
}

/// Byte ranges of sentences. A sentence ends after '.', '!' or '?' when the
/// next character is whitespace, or at the end of the text.
pub fn sentence_ranges(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    out.push(start..j);
                    start = j;
                }
            }
        }
    }
    if start < text.len() {
        out.push(start..text.len());
    }
    out.retain(|r| !text[r.clone()].trim().is_empty());
    out
}

/// Byte ranges of clauses inside `range`: sentence pieces separated by ',',
/// ';' or ':' followed by whitespace.
pub(crate) fn clause_ranges(text: &str, range: Range<usize>) -> Vec<Range<usize>> {
    let slice = &text[range.clone()];
    let mut out = Vec::new();
    let mut start = range.start;
    let mut chars = slice.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, ',' | ';' | ':') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let cut = range.start + i + c.len_utf8();
                    out.push(start..cut);
                    start = cut;
                }
            }
        }
    }
    if start < range.end {
        out.push(start..range.end);
    }
    out
}
