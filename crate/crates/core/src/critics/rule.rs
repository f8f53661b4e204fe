//! Deterministic critics.
//!
//! A response element is checked against the evidence occurrence whose local
//! context it best matches. The local context of an occurrence is the content
//! terms of its clause, cut at neighbouring elements of the same kind; if the
//! clause has no content terms the sentence is used instead. Two contexts are
//! compared by the share of the evidence context the response covers, then by
//! the raw overlap, then by evidence position.
//!
//! An element is flagged when its value never occurs in the grounding text, or
//! when a different value sits in a strictly better-matching context. The
//! suggested correction is the best-matching evidence occurrence.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::ops::Range;
use std::sync::Arc;

use super::{Critic, CriticError, Critique, CritiqueSource};
use crate::extract::{
    clause_ranges, content_terms, extract_entities, extract_numbers, heuristic_entities, sentence_ranges,
    ElementSpan, EntityTagger, ExtractError, TermProfile,
};
use crate::feedback::{off_topic, render_flags, Flag, ON_TOPIC};
use crate::model::ElementKind;

pub const DEFAULT_TOPIC_THRESHOLD: f64 = 0.15;

/// How well a response context matches an evidence context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Match {
    overlap: u32,
    evidence_total: u32,
}

impl Match {
    fn between(response: &TermProfile, evidence: &TermProfile) -> Self {
        Self { overlap: response.overlap(evidence), evidence_total: evidence.total() }
    }
}

impl Ord for Match {
    fn cmp(&self, other: &Self) -> Ordering {
        // coverage = overlap / evidence_total, compared without division
        let lhs = u64::from(self.overlap) * u64::from(other.evidence_total.max(1));
        let rhs = u64::from(other.overlap) * u64::from(self.evidence_total.max(1));
        lhs.cmp(&rhs).then(self.overlap.cmp(&other.overlap))
    }
}

impl PartialOrd for Match {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Occurrence<'a> {
    span: &'a ElementSpan,
    context: TermProfile,
}

fn containing(ranges: &[Range<usize>], at: usize) -> Option<Range<usize>> {
    ranges.iter().find(|r| r.start <= at && at < r.end).cloned()
}

fn context_within(text: &str, spans: &[ElementSpan], idx: usize, bounds: Range<usize>) -> TermProfile {
    let span = spans[idx].byte_range();
    let left = spans[..idx]
        .iter()
        .rev()
        .map(|s| s.byte_range().end)
        .find(|&e| e <= span.start)
        .map_or(bounds.start, |e| e.max(bounds.start));
    let right = spans[idx + 1..]
        .iter()
        .map(|s| s.byte_range().start)
        .find(|&s| s >= span.end)
        .map_or(bounds.end, |s| s.min(bounds.end));
    let mut profile = content_terms(&text[left.min(span.start)..span.start]);
    if right > span.end {
        let after = content_terms(&text[span.end..right]);
        profile = profile.iter().chain(after.iter()).map(|(t, c)| (t.to_string(), c)).collect();
    }
    profile
}

fn occurrences<'a>(text: &str, spans: &'a [ElementSpan]) -> Vec<Occurrence<'a>> {
    let sentences = sentence_ranges(text);
    spans
        .iter()
        .enumerate()
        .map(|(i, span)| {
            let bytes = span.byte_range();
            let sentence = containing(&sentences, bytes.start).unwrap_or(0..text.len());
            let clauses = clause_ranges(text, sentence.clone());
            let clause_start = containing(&clauses, bytes.start).map_or(sentence.start, |c| c.start);
            let clause_end = containing(&clauses, bytes.end.saturating_sub(1)).map_or(sentence.end, |c| c.end);
            let mut context = context_within(text, spans, i, clause_start..clause_end);
            if context.is_empty() {
                context = context_within(text, spans, i, sentence);
            }
            Occurrence { span, context }
        })
        .collect()
}

/// Best-matching occurrence: highest match, earliest on ties.
fn best<'o, 'a>(response: &TermProfile, candidates: impl Iterator<Item = &'o Occurrence<'a>>) -> Option<(&'o Occurrence<'a>, Match)>
where
    'a: 'o,
{
    let mut best: Option<(&Occurrence, Match)> = None;
    for occ in candidates {
        let m = Match::between(response, &occ.context);
        if best.as_ref().is_none_or(|(_, bm)| m > *bm) {
            best = Some((occ, m));
        }
    }
    best
}

fn flag_elements(
    kind: ElementKind,
    claim_keys: &HashSet<String>,
    evidence: &str,
    evidence_spans: &[ElementSpan],
    response: &str,
    response_spans: &[ElementSpan],
) -> Critique {
    let evidence_occ = occurrences(evidence, evidence_spans);
    let evidence_keys: HashSet<&str> = evidence_spans.iter().map(|s| s.canonical()).collect();
    let mut flags: Vec<Flag> = Vec::new();
    for occ in occurrences(response, response_spans) {
        let key = occ.span.canonical();
        if claim_keys.contains(key) {
            continue;
        }
        let overall = best(&occ.context, evidence_occ.iter());
        let flagged = if !evidence_keys.contains(key) {
            true
        } else {
            let same = best(&occ.context, evidence_occ.iter().filter(|e| e.span.canonical() == key));
            match (same, overall) {
                (Some((_, s)), Some((_, o))) => s < o,
                _ => false,
            }
        };
        if flagged {
            let flag = Flag {
                surface: occ.span.surface().to_string(),
                correction: overall.map(|(o, _)| o.span.surface().to_string()),
            };
            if !flags.contains(&flag) {
                flags.push(flag);
            }
        }
    }
    if flags.is_empty() {
        Critique::affirm(kind, CritiqueSource::Rule)
    } else {
        let text = render_flags(kind, &flags);
        Critique { element_kind: kind, positive: false, text, flagged: flags, source: CritiqueSource::Rule }
    }
}

/// Flags response numbers that the evidence does not support in context.
/// Numbers repeated from the claim get no special treatment.
pub fn critique_numbers(_claim: &str, evidence: &str, response: &str) -> Critique {
    let ev = extract_numbers(evidence);
    let resp = extract_numbers(response);
    flag_elements(ElementKind::Number, &HashSet::new(), evidence, &ev, response, &resp)
}

/// Flags response entities absent from both claim and evidence, or placed in
/// the context of a different evidence entity. Claim entities always pass.
pub fn critique_entities(claim: &str, evidence: &str, response: &str) -> Critique {
    critique_entities_from(
        &heuristic_entities(claim),
        evidence,
        &heuristic_entities(evidence),
        response,
        &heuristic_entities(response),
    )
}

/// [`critique_entities`] with spans from an external tagger.
pub fn critique_entities_with(
    tagger: &dyn EntityTagger,
    claim: &str,
    evidence: &str,
    response: &str,
) -> Result<Critique, ExtractError> {
    let claim_spans = extract_entities(claim, Some(tagger))?;
    let ev = extract_entities(evidence, Some(tagger))?;
    let resp = extract_entities(response, Some(tagger))?;
    Ok(critique_entities_from(&claim_spans, evidence, &ev, response, &resp))
}

fn critique_entities_from(
    claim_spans: &[ElementSpan],
    evidence: &str,
    evidence_spans: &[ElementSpan],
    response: &str,
    response_spans: &[ElementSpan],
) -> Critique {
    let claim_keys: HashSet<String> = claim_spans.iter().map(|s| s.canonical().to_string()).collect();
    flag_elements(ElementKind::Entity, &claim_keys, evidence, evidence_spans, response, response_spans)
}

/// Cosine similarity of claim and response term profiles against `threshold`.
pub fn critique_topic(claim: &str, _evidence: &str, response: &str, threshold: f64) -> Critique {
    let claim_terms = content_terms(claim);
    let response_terms = content_terms(response);
    let similarity = claim_terms.cosine(&response_terms);
    if !response_terms.is_empty() && similarity >= threshold {
        return Critique {
            element_kind: ElementKind::Topic,
            positive: true,
            text: ON_TOPIC.to_string(),
            flagged: Vec::new(),
            source: CritiqueSource::Rule,
        };
    }
    Critique {
        element_kind: ElementKind::Topic,
        positive: false,
        text: off_topic(&claim_terms.top_terms(3), &response_terms.top_terms(3)),
        flagged: Vec::new(),
        source: CritiqueSource::Rule,
    }
}

/// Rule critic for one element kind.
#[derive(Clone)]
pub struct RuleCritic {
    kind: ElementKind,
    topic_threshold: f64,
    tagger: Option<Arc<dyn EntityTagger>>,
}

impl RuleCritic {
    pub fn new(kind: ElementKind) -> Self {
        Self { kind, topic_threshold: DEFAULT_TOPIC_THRESHOLD, tagger: None }
    }

    pub fn with_topic_threshold(mut self, threshold: f64) -> Self {
        self.topic_threshold = threshold;
        self
    }

    /// Use an external tagger for entity spans.
    pub fn with_tagger(mut self, tagger: Arc<dyn EntityTagger>) -> Self {
        self.tagger = Some(tagger);
        self
    }
}

impl Critic for RuleCritic {
    fn kind(&self) -> ElementKind {
        self.kind
    }

    fn critique(&self, claim: &str, evidence: &str, response: &str) -> Result<Critique, CriticError> {
        Ok(match self.kind {
            ElementKind::Number => critique_numbers(claim, evidence, response),
            ElementKind::Entity => match &self.tagger {
                Some(t) => critique_entities_with(t.as_ref(), claim, evidence, response)?,
                None => critique_entities(claim, evidence, response),
            },
            ElementKind::Topic => critique_topic(claim, evidence, response, self.topic_threshold),
        })
    }
}
