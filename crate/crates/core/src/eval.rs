//! Response quality metrics: element grounding, LLM-judged dimension scores,
//! atomic-fact precision and their overall mean.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::extract::{extract_entities, extract_numbers, EntityTagger, ExtractError};
use crate::llm::{ChatClient, ChatMessage, LlmError};
use crate::model::ElementKind;
use crate::template::render;

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_JUDGE_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("grounding is defined for numbers and entities, not {0}")]
    UnsupportedKind(ElementKind),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
    #[error(transparent)]
    Judge(#[from] LlmError),
    #[error("no usable judge reply for {what} after {attempts} attempt(s); last reply: {last:?}")]
    Unparseable { what: String, attempts: usize, last: String },
    #[error("overall needs all five component scores; missing {0}")]
    MissingComponent(String),
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("reading judge template {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Fraction of the response's numbers (or entities) that are grounded.
/// Numbers must appear in the evidence; entities may appear in the evidence
/// or the claim. A response without such elements scores 1.0.
pub fn grounding_score(
    claim: &str,
    evidence: &str,
    response: &str,
    kind: ElementKind,
    tagger: Option<&dyn EntityTagger>,
) -> Result<f64, MetricError> {
    let (found, grounded): (Vec<String>, HashSet<String>) = match kind {
        ElementKind::Number => (
            extract_numbers(response).iter().map(|s| s.canonical().to_string()).collect(),
            extract_numbers(evidence).iter().map(|s| s.canonical().to_string()).collect(),
        ),
        ElementKind::Entity => {
            let mut keys: HashSet<String> =
                extract_entities(evidence, tagger)?.iter().map(|s| s.canonical().to_string()).collect();
            keys.extend(extract_entities(claim, tagger)?.iter().map(|s| s.canonical().to_string()));
            (extract_entities(response, tagger)?.iter().map(|s| s.canonical().to_string()).collect(), keys)
        }
        ElementKind::Topic => return Err(MetricError::UnsupportedKind(kind)),
    };
    if found.is_empty() {
        return Ok(1.0);
    }
    Ok(found.iter().filter(|k| grounded.contains(*k)).count() as f64 / found.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Numerical,
    Entity,
    Faithfulness,
    Refutation,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::Numerical, Dimension::Entity, Dimension::Faithfulness, Dimension::Refutation];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Numerical => "numerical",
            Dimension::Entity => "entity",
            Dimension::Faithfulness => "faithfulness",
            Dimension::Refutation => "refutation",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Judge prompts: one per dimension plus the two atomic-fact phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeTemplates {
    pub numerical: String,
    pub entity: String,
    pub faithfulness: String,
    pub refutation: String,
    /// `{response}`; the reply lists one fact per line.
    pub facts: String,
    /// `{evidence}`, `{fact}`; the reply says Supported or Unsupported.
    pub verdict: String,
}

impl Default for JudgeTemplates {
    fn default() -> Self {
        Self {
            numerical: include_str!("../assets/judge/numerical.txt").into(),
            entity: include_str!("../assets/judge/entity.txt").into(),
            faithfulness: include_str!("../assets/judge/faithfulness.txt").into(),
            refutation: include_str!("../assets/judge/refutation.txt").into(),
            facts: include_str!("../assets/judge/facts.txt").into(),
            verdict: include_str!("../assets/judge/verdict.txt").into(),
        }
    }
}

impl JudgeTemplates {
    /// Replaces built-in templates with `<name>.txt` files found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, MetricError> {
        let mut t = Self::default();
        let slots = [
            ("numerical", &mut t.numerical),
            ("entity", &mut t.entity),
            ("faithfulness", &mut t.faithfulness),
            ("refutation", &mut t.refutation),
            ("facts", &mut t.facts),
            ("verdict", &mut t.verdict),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => return Err(MetricError::Io { path: path.display().to_string(), source }),
            }
        }
        Ok(t)
    }

    pub fn dimension(&self, d: Dimension) -> &str {
        match d {
            Dimension::Numerical => &self.numerical,
            Dimension::Entity => &self.entity,
            Dimension::Faithfulness => &self.faithfulness,
            Dimension::Refutation => &self.refutation,
        }
    }
}

/// The first standalone integer in 1..=5. Decimals and numbers glued to
/// letters are skipped.
pub fn parse_rating(reply: &str) -> Option<u8> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"[0-9]+(?:\.[0-9]+)?").unwrap());
    for m in re.find_iter(reply) {
        let before = reply[..m.start()].chars().next_back();
        let after = reply[m.end()..].chars().next();
        if m.as_str().contains('.') || before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric) {
            continue;
        }
        if let Ok(v @ 1..=5) = m.as_str().parse::<u8>() {
            return Some(v);
        }
    }
    None
}

/// Maps a 1–5 rating onto [0, 1].
pub fn scale_rating(rating: u8) -> f64 {
    (f64::from(rating.clamp(1, 5)) - 1.0) / 4.0
}

/// Asks until `parse` accepts a reply, up to `retries` extra calls.
fn ask<T>(
    judge: &dyn ChatClient,
    prompt: String,
    retries: usize,
    what: impl Fn() -> String,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<T, MetricError> {
    let messages = [ChatMessage::user(prompt)];
    let mut last = String::new();
    for _ in 0..=retries {
        let reply = match judge.complete(&messages) {
            Ok(c) => c.text,
            Err(LlmError::EmptyCompletion) => String::new(),
            Err(e) => return Err(e.into()),
        };
        if let Some(v) = parse(&reply) {
            return Ok(v);
        }
        last = reply;
    }
    Err(MetricError::Unparseable { what: what(), attempts: retries + 1, last })
}

/// LLM-judged score for one dimension, scaled to [0, 1].
pub fn geval_score(
    judge: &dyn ChatClient,
    templates: &JudgeTemplates,
    dimension: Dimension,
    claim: &str,
    evidence: &str,
    response: &str,
    retries: usize,
) -> Result<f64, MetricError> {
    let prompt = render(
        templates.dimension(dimension),
        &[("claim", claim), ("evidence", evidence), ("response", response)],
    );
    let rating = ask(judge, prompt, retries, || format!("{dimension} rating"), parse_rating)?;
    Ok(scale_rating(rating))
}

/// `precision × min(1, exp(1 − γ/n))`; zero facts score zero.
pub fn factscore_from_counts(supported: usize, total: usize, gamma: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let precision = supported.min(total) as f64 / n;
    precision * (1.0 - gamma / n).exp().min(1.0)
}

fn parse_facts(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = l.find(|c: char| !c.is_ascii_digit()).unwrap_or(0);
            match l[digits..].strip_prefix(['.', ')']) {
                Some(rest) if digits > 0 => rest.trim_start(),
                _ => l,
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_verdict(reply: &str) -> Option<bool> {
    let r = reply.trim().to_lowercase();
    if r.contains("unsupported") || r.contains("not supported") {
        Some(false)
    } else if r.contains("supported") {
        Some(true)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactScore {
    pub score: f64,
    pub facts: Vec<String>,
    pub supported: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Splits the response into atomic facts, checks each against the evidence
/// and returns length-penalised precision.
pub fn factscore(
    judge: &dyn ChatClient,
    templates: &JudgeTemplates,
    response: &str,
    evidence: &str,
    gamma: f64,
    retries: usize,
) -> Result<FactScore, MetricError> {
    let prompt = render(&templates.facts, &[("response", response)]);
    let facts = match judge.complete(&[ChatMessage::user(prompt)]) {
        Ok(c) => parse_facts(&c.text),
        Err(LlmError::EmptyCompletion) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if facts.is_empty() {
        log::warn!("no atomic facts extracted; score is 0");
        return Ok(FactScore {
            score: 0.0,
            facts,
            supported: Vec::new(),
            warning: Some("no atomic facts extracted".into()),
        });
    }
    let mut supported = Vec::with_capacity(facts.len());
    for (i, fact) in facts.iter().enumerate() {
        let prompt = render(&templates.verdict, &[("evidence", evidence), ("fact", fact)]);
        supported.push(ask(judge, prompt, retries, || format!("verdict for fact {}", i + 1), parse_verdict)?);
    }
    let score = factscore_from_counts(supported.iter().filter(|s| **s).count(), facts.len(), gamma);
    Ok(FactScore { score, facts, supported, warning: None })
}

/// Mean of the four judged dimensions and the fact score, in that order.
/// Every component must be present.
pub fn overall(components: [Option<f64>; 5]) -> Result<f64, MetricError> {
    const NAMES: [&str; 5] = ["numerical", "entity", "faithfulness", "refutation", "factscore"];
    let mut sum = 0.0;
    for (value, name) in components.into_iter().zip(NAMES) {
        let v = value.ok_or_else(|| MetricError::MissingComponent(name.into()))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(MetricError::OutOfRange(v));
        }
        sum += v;
    }
    Ok(sum / 5.0)
}

/// Scores for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub id: String,
    pub numerical: f64,
    pub entity: f64,
    pub faithfulness: f64,
    pub refutation: f64,
    pub factscore: f64,
    pub overall: f64,
    pub atomic_fact_count: usize,
    pub grounding_number: f64,
    pub grounding_entity: f64,
    pub judge_model: String,
}

/// One response to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringItem {
    pub id: String,
    pub claim: String,
    pub evidence: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOptions {
    pub gamma: f64,
    pub retries: usize,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, retries: DEFAULT_JUDGE_RETRIES }
    }
}

pub fn score_response(
    judge: &dyn ChatClient,
    templates: &JudgeTemplates,
    item: &ScoringItem,
    options: &ScoringOptions,
    tagger: Option<&dyn EntityTagger>,
) -> Result<MetricReport, MetricError> {
    let g = |d| geval_score(judge, templates, d, &item.claim, &item.evidence, &item.response, options.retries);
    let (numerical, entity, faithfulness, refutation) =
        (g(Dimension::Numerical)?, g(Dimension::Entity)?, g(Dimension::Faithfulness)?, g(Dimension::Refutation)?);
    let fs = factscore(judge, templates, &item.response, &item.evidence, options.gamma, options.retries)?;
    if let Some(w) = &fs.warning {
        log::warn!("{}: {w}", item.id);
    }
    Ok(MetricReport {
        id: item.id.clone(),
        numerical,
        entity,
        faithfulness,
        refutation,
        factscore: fs.score,
        overall: overall([Some(numerical), Some(entity), Some(faithfulness), Some(refutation), Some(fs.score)])?,
        atomic_fact_count: fs.facts.len(),
        grounding_number: grounding_score(&item.claim, &item.evidence, &item.response, ElementKind::Number, tagger)?,
        grounding_entity: grounding_score(&item.claim, &item.evidence, &item.response, ElementKind::Entity, tagger)?,
        judge_model: judge.model_name().to_string(),
    })
}

/// Scores `items` on at most `parallelism` threads, keeping input order.
pub fn score_batch(
    judge: &dyn ChatClient,
    templates: &JudgeTemplates,
    items: &[ScoringItem],
    options: &ScoringOptions,
    tagger: Option<&dyn EntityTagger>,
    parallelism: usize,
) -> Vec<Result<MetricReport, MetricError>> {
    let run = || items.par_iter().map(|i| score_response(judge, templates, i, options, tagger)).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); scoring sequentially");
            items.iter().map(|i| score_response(judge, templates, i, options, tagger)).collect()
        }
    }
}

/// Means over scored responses. Unscored responses are only counted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub scored: usize,
    pub unscored: usize,
    pub numerical: Option<f64>,
    pub entity: Option<f64>,
    pub faithfulness: Option<f64>,
    pub refutation: Option<f64>,
    pub factscore: Option<f64>,
    pub overall: Option<f64>,
    pub grounding_number: Option<f64>,
    pub grounding_entity: Option<f64>,
    pub mean_atomic_facts: Option<f64>,
}

pub fn summarize(reports: &[MetricReport], unscored: usize) -> MetricSummary {
    let mean = |f: fn(&MetricReport) -> f64| match reports.len() {
        0 => None,
        n => Some(reports.iter().map(f).sum::<f64>() / n as f64),
    };
    MetricSummary {
        scored: reports.len(),
        unscored,
        numerical: mean(|r| r.numerical),
        entity: mean(|r| r.entity),
        faithfulness: mean(|r| r.faithfulness),
        refutation: mean(|r| r.refutation),
        factscore: mean(|r| r.factscore),
        overall: mean(|r| r.overall),
        grounding_number: mean(|r| r.grounding_number),
        grounding_entity: mean(|r| r.grounding_entity),
        mean_atomic_facts: mean(|r| r.atomic_fact_count as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedChat;

    const EVIDENCE: &str = "Official figures show that 122,494 people were experiencing homelessness, only 7,636 of those people were sleeping rough.";

    #[test]
    fn grounding_examples() {
        let g = |r| grounding_score("claim", EVIDENCE, r, ElementKind::Number, None).unwrap();
        assert_eq!(g("only 7,636 people"), 1.0);
        assert_eq!(g("some 122,000 people"), 0.0);
        assert_eq!(g("7636 and 122,000"), 0.5);
        assert_eq!(g("no figures here"), 1.0);
        assert!(grounding_score("c", EVIDENCE, "r", ElementKind::Topic, None).is_err());
        let e = grounding_score("Bill Gates said so", "Reports from Oxford.", "Bill Gates and Oxford and Paris", ElementKind::Entity, None)
            .unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratings() {
        assert_eq!(parse_rating("5"), Some(5));
        assert_eq!(parse_rating("Score: 4/5"), Some(4));
        assert_eq!(parse_rating("I would give 10, no wait, 3."), Some(3));
        assert_eq!(parse_rating("4.5 overall, so 4"), Some(4));
        assert_eq!(parse_rating("COVID19 gets 2"), Some(2));
        assert_eq!(parse_rating("excellent"), None);
        assert_eq!((scale_rating(1), scale_rating(3), scale_rating(5)), (0.0, 0.5, 1.0));
    }

    #[test]
    fn geval_retries_then_errors() {
        let t = JudgeTemplates::default();
        let judge = ScriptedChat::new(["hmm", "Rating: 5"]);
        assert_eq!(geval_score(&judge, &t, Dimension::Faithfulness, "c", "e", "r", 1).unwrap(), 1.0);
        let prompt = &judge.requests()[0][0].content;
        assert!(prompt.contains("Faithfulness (1-5)") && prompt.contains("Response:\nr\n"));
        let judge = ScriptedChat::new(["no", "still no"]);
        assert!(matches!(
            geval_score(&judge, &t, Dimension::Entity, "c", "e", "r", 1),
            Err(MetricError::Unparseable { attempts: 2, .. })
        ));
    }

    #[test]
    fn factscore_penalty() {
        assert_eq!(factscore_from_counts(12, 12, 10.0), 1.0);
        assert!((factscore_from_counts(5, 5, 10.0) - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(factscore_from_counts(10, 10, 10.0), 1.0);
        assert_eq!(factscore_from_counts(0, 0, 10.0), 0.0);
        assert!((factscore_from_counts(6, 12, 10.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn factscore_phases() {
        let t = JudgeTemplates::default();
        let judge = ScriptedChat::new(["1. Only 7,636 people slept rough.\n- The claim is false.\n", "Supported", "Unsupported."]);
        let fs = factscore(&judge, &t, "resp", EVIDENCE, 2.0, 0).unwrap();
        assert_eq!(fs.facts, vec!["Only 7,636 people slept rough.", "The claim is false."]);
        assert_eq!(fs.supported, vec![true, false]);
        assert!((fs.score - 0.5).abs() < 1e-12);
        assert!(judge.requests()[1][0].content.contains("Fact:\nOnly 7,636 people slept rough.\n"));

        let judge = ScriptedChat::new(["\n \n"]);
        let fs = factscore(&judge, &t, "resp", EVIDENCE, 10.0, 0).unwrap();
        assert_eq!(fs.score, 0.0);
        assert!(fs.warning.is_some());
    }

    #[test]
    fn overall_table_rows() {
        let o = overall([Some(0.987), Some(0.873), Some(0.881), Some(0.716), Some(0.733)]).unwrap();
        assert_eq!(format!("{o:.3}"), "0.838");
        let o = overall([Some(0.924), Some(0.741), Some(0.661), Some(0.550), Some(0.540)]).unwrap();
        assert_eq!(format!("{o:.3}"), "0.683");
        assert_eq!(overall([Some(1.0); 5]).unwrap(), 1.0);
        assert!(matches!(overall([Some(1.0), None, Some(1.0), Some(1.0), Some(1.0)]), Err(MetricError::MissingComponent(n)) if n == "entity"));
    }

    #[test]
    fn full_report_with_all_fives() {
        let mut replies = vec!["5"; 4];
        let facts = (1..=10).map(|i| format!("Fact {i}.")).collect::<Vec<_>>().join("\n");
        replies.push(&facts);
        replies.extend(["Supported"; 10]);
        let judge = ScriptedChat::new(replies);
        let item = ScoringItem { id: "x".into(), claim: "c".into(), evidence: EVIDENCE.into(), response: "only 7,636".into() };
        let r = score_response(&judge, &JudgeTemplates::default(), &item, &ScoringOptions::default(), None).unwrap();
        assert_eq!((r.numerical, r.entity, r.faithfulness, r.refutation, r.factscore, r.overall), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(r.atomic_fact_count, 10);
        let s = summarize(&[r], 2);
        assert_eq!((s.scored, s.unscored, s.overall), (1, 2, Some(1.0)));
    }
}
