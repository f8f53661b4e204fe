//! Named-entity spans, either from the built-in capitalisation heuristic or
//! from an external tagger service.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{char_range_to_bytes, extract_numbers, is_stopword, ElementSpan, ExtractError};

/// Lowercase words allowed inside a multi-word name ("Bank of England").
const CONNECTORS: &[&str] = &["of", "for"];

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:[-.'’&][\p{L}\p{N}]+)*").unwrap())
}

/// One span as reported by the external tagger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

/// An external entity tagger. Implementations must accept concurrent calls.
pub trait EntityTagger: Send + Sync {
    fn tag(&self, text: &str) -> Result<Vec<TaggedSpan>, ExtractError>;
}

#[derive(Serialize)]
struct TagRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TagResponse {
    spans: Vec<TaggedSpan>,
}

/// Client for the `POST /tag` protocol.
#[derive(Debug, Clone)]
pub struct HttpTagger {
    url: String,
    http: reqwest::blocking::Client,
}

impl HttpTagger {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ExtractError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExtractError::Transport(e.to_string()))?;
        Ok(Self { url: format!("{}/tag", base_url.trim_end_matches('/')), http })
    }
}

impl EntityTagger for HttpTagger {
    fn tag(&self, text: &str) -> Result<Vec<TaggedSpan>, ExtractError> {
        let resp = self
            .http
            .post(&self.url)
            .json(&TagRequest { text })
            .send()
            .map_err(|e| ExtractError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ExtractError::Transport(format!("tagger returned HTTP {status}")));
        }
        let body: TagResponse =
            resp.json().map_err(|e| ExtractError::Protocol(format!("bad tagger body: {e}")))?;
        Ok(body.spans)
    }
}

struct Token {
    bytes: Range<usize>,
    capitalized: bool,
    initial: bool,
}

/// True when nothing but whitespace and opening quotes/brackets separates
/// `at` from the start of the text, a sentence terminator, or a newline.
fn is_sentence_initial(text: &str, at: usize) -> bool {
    for c in text[..at].chars().rev() {
        match c {
            '\n' | '.' | '!' | '?' => return true,
            c if c.is_whitespace() => continue,
            '"' | '\'' | '“' | '‘' | '(' | '[' => continue,
            _ => return false,
        }
    }
    true
}

fn strip_possessive(text: &str, range: Range<usize>) -> Range<usize> {
    let s = &text[range.clone()];
    for suffix in ["'s", "’s"] {
        if s.len() > suffix.len() && s.ends_with(suffix) {
            return range.start..range.end - suffix.len();
        }
    }
    range
}

fn whitespace_gap(text: &str, a: &Range<usize>, b: &Range<usize>) -> bool {
    let gap = &text[a.end..b.start];
    !gap.is_empty() && gap.chars().all(|c| c == ' ' || c == '\t')
}

/// Maximal capitalised token sequences, excluding number spans, stopwords and
/// words that are capitalised only because they open a sentence.
pub fn heuristic_entities(text: &str) -> Vec<ElementSpan> {
    let numbers = extract_numbers(text);
    let tokens: Vec<Token> = token_re()
        .find_iter(text)
        .map(|m| strip_possessive(text, m.range()))
        .filter(|r| !numbers.iter().any(|n| n.overlaps(r)))
        .map(|bytes| {
            let first = text[bytes.clone()].chars().next().unwrap_or(' ');
            Token { capitalized: first.is_uppercase(), initial: is_sentence_initial(text, bytes.start), bytes }
        })
        .collect();

    // Capitalised words attested away from sentence starts.
    let attested: HashSet<&str> = tokens
        .iter()
        .filter(|t| t.capitalized && !t.initial)
        .map(|t| &text[t.bytes.clone()])
        .collect();

    let mut sequences: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !tokens[i].capitalized {
            i += 1;
            continue;
        }
        let mut seq = vec![i];
        let mut j = i;
        loop {
            let next = j + 1;
            if next < tokens.len() && tokens[next].capitalized && whitespace_gap(text, &tokens[j].bytes, &tokens[next].bytes) && !tokens[next].initial {
                seq.push(next);
                j = next;
                continue;
            }
            // connector followed by another capitalised token
            if next + 1 < tokens.len()
                && CONNECTORS.contains(&&text[tokens[next].bytes.clone()])
                && tokens[next + 1].capitalized
                && whitespace_gap(text, &tokens[j].bytes, &tokens[next].bytes)
                && whitespace_gap(text, &tokens[next].bytes, &tokens[next + 1].bytes)
            {
                seq.push(next);
                seq.push(next + 1);
                j = next + 1;
                continue;
            }
            break;
        }
        sequences.push(seq);
        i = j + 1;
    }

    let mut out = Vec::new();
    for mut seq in sequences {
        let opens_sentence = tokens[seq[0]].initial;
        if opens_sentence {
            while let Some(&first) = seq.first() {
                let word = text[tokens[first].bytes.clone()].to_lowercase();
                if is_stopword(&word) || CONNECTORS.contains(&word.as_str()) {
                    seq.remove(0);
                } else {
                    break;
                }
            }
        }
        let Some(&first) = seq.first() else { continue };
        let last = *seq.last().unwrap();
        if seq.len() == 1 {
            let surface = &text[tokens[first].bytes.clone()];
            if is_stopword(&surface.to_lowercase()) {
                continue;
            }
            if tokens[first].initial && !attested.contains(surface) {
                continue;
            }
        }
        out.push(ElementSpan::entity(text, tokens[first].bytes.start..tokens[last].bytes.end));
    }
    out
}

fn validate_tagged(text: &str, tagged: Vec<TaggedSpan>) -> Result<Vec<ElementSpan>, ExtractError> {
    let mut spans = Vec::new();
    for t in tagged.into_iter().filter(|t| t.kind.eq_ignore_ascii_case("entity")) {
        let bytes = char_range_to_bytes(text, t.start, t.end).ok_or_else(|| {
            ExtractError::Protocol(format!("span {}..{} outside request text", t.start, t.end))
        })?;
        if text[bytes.clone()] != t.surface {
            return Err(ExtractError::Protocol(format!(
                "span {}..{} is {:?}, tagger said {:?}",
                t.start,
                t.end,
                &text[bytes],
                t.surface
            )));
        }
        if bytes.is_empty() {
            return Err(ExtractError::Protocol(format!("empty span at {}", t.start)));
        }
        spans.push(ElementSpan::entity(text, bytes));
    }
    spans.sort_by_key(|s| s.start());
    for pair in spans.windows(2) {
        if pair[0].end() > pair[1].start() {
            return Err(ExtractError::Protocol(format!(
                "overlapping spans {:?} and {:?}",
                pair[0].surface(),
                pair[1].surface()
            )));
        }
    }
    let numbers = extract_numbers(text);
    spans.retain(|s| !numbers.iter().any(|n| n.overlaps(&s.byte_range())));
    Ok(spans)
}

/// Entity spans of `text`. With a tagger the heuristic is bypassed and a
/// tagger failure is returned to the caller.
pub fn extract_entities(
    text: &str,
    tagger: Option<&dyn EntityTagger>,
) -> Result<Vec<ElementSpan>, ExtractError> {
    match tagger {
        None => Ok(heuristic_entities(text)),
        Some(t) => validate_tagged(text, t.tag(text)?),
    }
}
