//! Domain types shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Veracity label attached to a fact-checking article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VeracityLabel {
    True,
    False,
    Mixture,
    Unproven,
    Other,
}

impl VeracityLabel {
    pub const ALL: [VeracityLabel; 5] = [
        VeracityLabel::True,
        VeracityLabel::False,
        VeracityLabel::Mixture,
        VeracityLabel::Unproven,
        VeracityLabel::Other,
    ];

    /// Labels whose articles feed critic training data.
    pub const DATAGEN: [VeracityLabel; 2] = [VeracityLabel::False, VeracityLabel::Mixture];

    pub fn as_str(self) -> &'static str {
        match self {
            VeracityLabel::True => "true",
            VeracityLabel::False => "false",
            VeracityLabel::Mixture => "mixture",
            VeracityLabel::Unproven => "unproven",
            VeracityLabel::Other => "other",
        }
    }
}

impl fmt::Display for VeracityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps any raw label onto a [`VeracityLabel`]. Case and whitespace are
/// ignored; anything unrecognised becomes [`VeracityLabel::Other`].
pub fn normalize_label(raw: &str) -> VeracityLabel {
    let key: String = raw
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    match key.as_str() {
        "true" => VeracityLabel::True,
        "false" => VeracityLabel::False,
        "mixture" => VeracityLabel::Mixture,
        "unproven" => VeracityLabel::Unproven,
        _ => VeracityLabel::Other,
    }
}

/// The three kinds of checkable element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Number,
    Entity,
    Topic,
}

impl ElementKind {
    /// Canonical order used everywhere critiques are combined.
    pub const ALL: [ElementKind; 3] = [ElementKind::Number, ElementKind::Entity, ElementKind::Topic];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Number => "number",
            ElementKind::Entity => "entity",
            ElementKind::Topic => "topic",
        }
    }

    pub fn parse(raw: &str) -> Option<ElementKind> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "number" | "num" | "numbers" => Some(ElementKind::Number),
            "entity" | "ne" | "entities" => Some(ElementKind::Entity),
            "topic" | "t" | "topics" => Some(ElementKind::Topic),
            _ => None,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an article came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub original_id: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArticleError {
    #[error("article {id}: claim is empty")]
    EmptyClaim { id: String },
    #[error("article {id}: evidence is empty")]
    EmptyEvidence { id: String },
    #[error("article {id}: explanation is missing")]
    MissingExplanation { id: String },
}

/// One fact-checking article: a claim, its evidence and, for training use,
/// the journalist's explanation.
///
/// Text is stored exactly as received so element offsets stay valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArticleRecord")]
pub struct FactCheckArticle {
    id: String,
    claim: String,
    evidence: String,
    explanation: Option<String>,
    label: VeracityLabel,
    #[serde(default)]
    source: Provenance,
}

#[derive(Deserialize)]
struct ArticleRecord {
    id: String,
    claim: String,
    evidence: String,
    #[serde(default)]
    explanation: Option<String>,
    label: VeracityLabel,
    #[serde(default)]
    source: Provenance,
}

impl TryFrom<ArticleRecord> for FactCheckArticle {
    type Error = ArticleError;

    fn try_from(r: ArticleRecord) -> Result<Self, ArticleError> {
        Self::new(r.id, r.claim, r.evidence, r.explanation, r.label, r.source)
    }
}

impl FactCheckArticle {
    /// Builds an article, rejecting an empty claim or empty evidence.
    /// A blank explanation is recorded as absent.
    pub fn new(
        id: impl Into<String>,
        claim: impl Into<String>,
        evidence: impl Into<String>,
        explanation: Option<String>,
        label: VeracityLabel,
        source: Provenance,
    ) -> Result<Self, ArticleError> {
        let id = id.into();
        let claim = claim.into();
        let evidence = evidence.into();
        if claim.trim().is_empty() {
            return Err(ArticleError::EmptyClaim { id });
        }
        if evidence.trim().is_empty() {
            return Err(ArticleError::EmptyEvidence { id });
        }
        let explanation = explanation.filter(|e| !e.trim().is_empty());
        Ok(Self { id, claim, evidence, explanation, label, source })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn claim(&self) -> &str {
        &self.claim
    }

    pub fn evidence(&self) -> &str {
        &self.evidence
    }

    pub fn explanation(&self) -> Option<&str> {
        self.explanation.as_deref()
    }

    /// The explanation, or an error when the article cannot seed training data.
    pub fn require_explanation(&self) -> Result<&str, ArticleError> {
        self.explanation().ok_or_else(|| ArticleError::MissingExplanation { id: self.id.clone() })
    }

    pub fn label(&self) -> VeracityLabel {
        self.label
    }

    pub fn source(&self) -> &Provenance {
        &self.source
    }
}

/// Whether a counter-response is the first draft or the refined output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterResponse {
    pub text: String,
    pub stage: Stage,
}

impl CounterResponse {
    pub fn initial(text: impl Into<String>) -> Self {
        Self { text: text.into(), stage: Stage::Initial }
    }

    pub fn refined(text: impl Into<String>) -> Self {
        Self { text: text.into(), stage: Stage::Refined }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deserializing_validates() {
        let ok = r#"{"id":"1","claim":"c","evidence":"e","label":"false"}"#;
        assert_eq!(serde_json::from_str::<FactCheckArticle>(ok).unwrap().explanation(), None);
        let bad = r#"{"id":"1","claim":" ","evidence":"e","label":"false"}"#;
        assert!(serde_json::from_str::<FactCheckArticle>(bad).is_err());
    }

    #[test]
    fn label_normalization_examples() {
        assert_eq!(normalize_label("FALSE"), VeracityLabel::False);
        assert_eq!(normalize_label("mixture"), VeracityLabel::Mixture);
        assert_eq!(normalize_label("half-true"), VeracityLabel::Other);
        assert_eq!(normalize_label("  Un Proven \t"), VeracityLabel::Unproven);
        assert_eq!(normalize_label(""), VeracityLabel::Other);
    }

    #[test]
    fn label_normalization_is_idempotent_on_rendered_values() {
        for label in VeracityLabel::ALL {
            assert_eq!(normalize_label(label.as_str()), label);
            assert_eq!(normalize_label(&label.as_str().to_uppercase()), label);
        }
    }

    #[test]
    fn article_rejects_blank_claim_and_evidence() {
        let err = FactCheckArticle::new("a", "  ", "ev", None, VeracityLabel::False, Provenance::default())
            .unwrap_err();
        assert_eq!(err, ArticleError::EmptyClaim { id: "a".into() });
        let err = FactCheckArticle::new("b", "claim", "\n", None, VeracityLabel::False, Provenance::default())
            .unwrap_err();
        assert_eq!(err, ArticleError::EmptyEvidence { id: "b".into() });
    }

    #[test]
    fn blank_explanation_is_absent() {
        let a = FactCheckArticle::new(
            "c",
            " claim ",
            "evidence",
            Some("   ".into()),
            VeracityLabel::False,
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(a.claim(), " claim ");
        assert!(a.explanation().is_none());
        assert!(a.require_explanation().is_err());
    }

    #[test]
    fn kind_parse_accepts_short_names() {
        assert_eq!(ElementKind::parse("NE"), Some(ElementKind::Entity));
        assert_eq!(ElementKind::parse("number"), Some(ElementKind::Number));
        assert_eq!(ElementKind::parse("x"), None);
    }
}
