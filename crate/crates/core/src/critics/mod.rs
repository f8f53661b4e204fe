//! Element-level critiques of a counter-response and their aggregation.

mod rule;
mod service;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::ExtractError;
use crate::feedback::{affirmative, Flag};
use crate::model::ElementKind;

pub use rule::{critique_entities, critique_entities_with, critique_numbers, critique_topic, RuleCritic, DEFAULT_TOPIC_THRESHOLD};
pub use service::{
    model_critique, CritiqueReply, CritiqueRequest, CriticService, HttpCriticService, ModelCritic,
    DEFAULT_MAX_CRITIQUE_TOKENS,
};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("critic service unreachable: {0}")]
    Transport(String),
    #[error("critic protocol violation: {0}")]
    Protocol(String),
    #[error("critique contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CritiqueSource {
    Rule,
    Model,
}

/// One element-level judgment on a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub element_kind: ElementKind,
    pub positive: bool,
    pub text: String,
    pub flagged: Vec<Flag>,
    pub source: CritiqueSource,
}

impl Critique {
    pub fn affirm(kind: ElementKind, source: CritiqueSource) -> Self {
        Self { element_kind: kind, positive: true, text: affirmative(kind).to_string(), flagged: Vec::new(), source }
    }

    pub fn negative(
        kind: ElementKind,
        text: String,
        flagged: Vec<Flag>,
        source: CritiqueSource,
    ) -> Result<Self, CriticError> {
        if text.trim().is_empty() {
            return Err(CriticError::Contract(format!("negative {kind} critique with empty text")));
        }
        Ok(Self { element_kind: kind, positive: false, text, flagged, source })
    }
}

/// Critiques of one response in canonical kind order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedCritique {
    pub parts: Vec<Critique>,
    pub all_positive: bool,
    pub text: String,
}

impl AggregatedCritique {
    pub fn part(&self, kind: ElementKind) -> Option<&Critique> {
        self.parts.iter().find(|c| c.element_kind == kind)
    }

    pub fn kinds(&self) -> Vec<ElementKind> {
        self.parts.iter().map(|c| c.element_kind).collect()
    }
}

/// Combines critiques into number, entity, topic order. `expected` lists the
/// kinds that must each appear exactly once.
pub fn aggregate(
    parts: impl IntoIterator<Item = Critique>,
    expected: &[ElementKind],
) -> Result<AggregatedCritique, CriticError> {
    let mut parts: Vec<Critique> = parts.into_iter().collect();
    parts.sort_by_key(|c| c.element_kind);
    for pair in parts.windows(2) {
        if pair[0].element_kind == pair[1].element_kind {
            return Err(CriticError::Contract(format!("duplicate {} critique", pair[0].element_kind)));
        }
    }
    for kind in expected {
        if !parts.iter().any(|c| c.element_kind == *kind) {
            return Err(CriticError::Contract(format!("missing {kind} critique")));
        }
    }
    if let Some(extra) = parts.iter().find(|c| !expected.contains(&c.element_kind)) {
        return Err(CriticError::Contract(format!("unexpected {} critique", extra.element_kind)));
    }
    let all_positive = parts.iter().all(|c| c.positive);
    let text = parts.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n");
    Ok(AggregatedCritique { parts, all_positive, text })
}

/// Aggregates one critique of each kind.
pub fn aggregate_all(num: Critique, ne: Critique, topic: Critique) -> Result<AggregatedCritique, CriticError> {
    aggregate([num, ne, topic], &ElementKind::ALL)
}

/// Anything that critiques a response for one element kind.
pub trait Critic: Send + Sync {
    fn kind(&self) -> ElementKind;
    fn critique(&self, claim: &str, evidence: &str, response: &str) -> Result<Critique, CriticError>;
}

/// Model critic that falls back to a rule critic when the service cannot be
/// reached. Protocol errors are not masked.
pub struct FallbackCritic {
    primary: Arc<dyn Critic>,
    fallback: Arc<dyn Critic>,
}

impl FallbackCritic {
    pub fn new(primary: Arc<dyn Critic>, fallback: Arc<dyn Critic>) -> Self {
        assert_eq!(primary.kind(), fallback.kind(), "fallback must critique the same kind");
        Self { primary, fallback }
    }
}

impl Critic for FallbackCritic {
    fn kind(&self) -> ElementKind {
        self.primary.kind()
    }

    fn critique(&self, claim: &str, evidence: &str, response: &str) -> Result<Critique, CriticError> {
        match self.primary.critique(claim, evidence, response) {
            Err(CriticError::Transport(e)) => {
                log::warn!("{} critic unreachable ({e}), using rule critic", self.kind());
                self.fallback.critique(claim, evidence, response)
            }
            other => other,
        }
    }
}

/// The set of enabled critics, run together on a response.
#[derive(Clone, Default)]
pub struct CriticPanel {
    critics: Vec<Arc<dyn Critic>>,
}

impl CriticPanel {
    pub fn new(critics: Vec<Arc<dyn Critic>>) -> Result<Self, CriticError> {
        let mut kinds: Vec<ElementKind> = critics.iter().map(|c| c.kind()).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(CriticError::Contract("two critics for the same kind".into()));
        }
        let mut critics = critics;
        critics.sort_by_key(|c| c.kind());
        Ok(Self { critics })
    }

    /// Rule critics for the given kinds.
    pub fn rules(kinds: &[ElementKind], topic_threshold: f64) -> Self {
        let critics = ElementKind::ALL
            .into_iter()
            .filter(|k| kinds.contains(k))
            .map(|k| Arc::new(RuleCritic::new(k).with_topic_threshold(topic_threshold)) as Arc<dyn Critic>)
            .collect();
        Self { critics }
    }

    pub fn kinds(&self) -> Vec<ElementKind> {
        self.critics.iter().map(|c| c.kind()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.critics.is_empty()
    }

    pub fn run(&self, claim: &str, evidence: &str, response: &str) -> Result<AggregatedCritique, CriticError> {
        let parts = self
            .critics
            .iter()
            .map(|c| c.critique(claim, evidence, response))
            .collect::<Result<Vec<_>, _>>()?;
        aggregate(parts, &self.kinds())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg(kind: ElementKind, text: &str) -> Critique {
        Critique::negative(kind, text.into(), vec![], CritiqueSource::Rule).unwrap()
    }

    #[test]
    fn three_positives() {
        let agg = aggregate_all(
            Critique::affirm(ElementKind::Number, CritiqueSource::Rule),
            Critique::affirm(ElementKind::Entity, CritiqueSource::Rule),
            Critique::affirm(ElementKind::Topic, CritiqueSource::Rule),
        )
        .unwrap();
        assert!(agg.all_positive);
        assert_eq!(
            agg.text,
            "The numbers are correct\nThe entities are correct\nThe explanation is on the topic of the claim"
        );
    }

    #[test]
    fn negative_number_first_regardless_of_input_order() {
        let num = neg(ElementKind::Number, "5 is not correct, the correct number is 6");
        let ne = Critique::affirm(ElementKind::Entity, CritiqueSource::Rule);
        let topic = Critique::affirm(ElementKind::Topic, CritiqueSource::Rule);
        let a = aggregate([num.clone(), ne.clone(), topic.clone()], &ElementKind::ALL).unwrap();
        let b = aggregate([topic, num, ne], &ElementKind::ALL).unwrap();
        assert_eq!(a, b);
        assert!(!a.all_positive);
        assert!(a.text.starts_with("5 is not correct"));
    }

    #[test]
    fn duplicate_or_missing_kind_is_contract_error() {
        let n = Critique::affirm(ElementKind::Number, CritiqueSource::Rule);
        assert!(matches!(aggregate([n.clone(), n.clone()], &[ElementKind::Number]), Err(CriticError::Contract(_))));
        assert!(matches!(aggregate([n.clone()], &ElementKind::ALL), Err(CriticError::Contract(_))));
        assert!(matches!(aggregate([n], &[ElementKind::Topic]), Err(CriticError::Contract(_))));
    }

    #[test]
    fn negative_requires_text() {
        assert!(Critique::negative(ElementKind::Topic, " ".into(), vec![], CritiqueSource::Model).is_err());
    }
}
