//! Critique sentence templates and their parser.
//!
//! The same templates are written into critic training data and produced by
//! the rule critics, so a model trained on one and the rules agree on format.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::ElementKind;

pub const NUMBERS_CORRECT: &str = "The numbers are correct";
pub const ENTITIES_CORRECT: &str = "The entities are correct";
pub const ON_TOPIC: &str = "The explanation is on the topic of the claim";

/// Separator between per-element sentences inside one critique.
pub const FLAG_SEPARATOR: &str = "; ";

/// An element the critique objects to, with the proposed replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub surface: String,
    pub correction: Option<String>,
}

pub fn affirmative(kind: ElementKind) -> &'static str {
    match kind {
        ElementKind::Number => NUMBERS_CORRECT,
        ElementKind::Entity => ENTITIES_CORRECT,
        ElementKind::Topic => ON_TOPIC,
    }
}

/// The affirmative template `text` matches, ignoring surrounding and repeated
/// whitespace and a trailing period.
pub fn affirmative_kind(text: &str) -> Option<ElementKind> {
    let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let norm = norm.trim_end_matches('.');
    ElementKind::ALL.into_iter().find(|k| affirmative(*k) == norm)
}

fn noun(kind: ElementKind) -> &'static str {
    match kind {
        ElementKind::Number => "number",
        _ => "text",
    }
}

/// "<bad> is not correct, the correct number|text is <good>"
pub fn correction(kind: ElementKind, bad: &str, good: &str) -> String {
    format!("{bad} is not correct, the correct {} is {good}", noun(kind))
}

/// "<bad> is not supported by the evidence"
pub fn unsupported(bad: &str) -> String {
    format!("{bad} is not supported by the evidence")
}

/// Negative topic critique naming the dominant terms on each side.
pub fn off_topic(claim_terms: &[&str], response_terms: &[&str]) -> String {
    let list = |terms: &[&str]| if terms.is_empty() { "nothing".to_string() } else { terms.join(", ") };
    format!(
        "The explanation is not on the topic of the claim. The claim is about {}, but the explanation is about {}.",
        list(claim_terms),
        list(response_terms)
    )
}

/// Renders the negative text for a list of flags.
pub fn render_flags(kind: ElementKind, flags: &[Flag]) -> String {
    flags
        .iter()
        .map(|f| match &f.correction {
            Some(good) => correction(kind, &f.surface, good),
            None => unsupported(&f.surface),
        })
        .collect::<Vec<_>>()
        .join(FLAG_SEPARATOR)
}

fn correction_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(.+?) is not correct, the correct (number|text) is (.+?)\.?$").unwrap())
}

fn unsupported_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(.+?) is not supported by the evidence\.?$").unwrap())
}

/// Recovers the flags from a negative critique written with the templates
/// above. Sentences that match no template are skipped.
pub fn parse_flags(kind: ElementKind, text: &str) -> Vec<Flag> {
    let expected_noun = noun(kind);
    text.split(FLAG_SEPARATOR)
        .flat_map(|part| part.split('\n'))
        .filter_map(|part| {
            let part = part.trim();
            if let Some(c) = correction_re().captures(part) {
                if &c[2] != expected_noun {
                    return None;
                }
                return Some(Flag { surface: c[1].to_string(), correction: Some(c[3].to_string()) });
            }
            unsupported_re()
                .captures(part)
                .map(|c| Flag { surface: c[1].to_string(), correction: None })
        })
        .collect()
}
