//! Critic training data built from fact-checking articles.
//!
//! Each article yields factual instances (the journalist's explanation with
//! an affirmative critique) and counterfactual instances: the explanation
//! with one number or one entity swapped for a different one from the
//! evidence, or rewritten off-topic by an LLM. Counterfactual critiques use
//! the correction templates in [`crate::feedback`].

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extract::{extract_entities, extract_numbers, ElementSpan, EntityTagger, ExtractError};
use crate::feedback::{affirmative, correction};
use crate::llm::{ChatClient, ChatMessage, LlmError};
use crate::model::{ArticleError, ElementKind, FactCheckArticle};
use crate::template::render;

pub const DEFAULT_REPLACEMENT_CAP: usize = 20;
pub const DEFAULT_OFFTOPIC_COUNT: usize = 3;

/// Prompt for off-topic rewrites; placeholders `{claim}`, `{explanation}`,
/// `{evidence}`.
pub const OFFTOPIC_PROMPT: &str = include_str!("../assets/offtopic_prompt.txt");

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Article(#[from] ArticleError),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no usable off-topic rewrite for article {id} after {calls} call(s)")]
    NoOffTopic { id: String, calls: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceLabel {
    Factual,
    Counterfactual,
}

/// Where a counterfactual swap happened. Offsets are character offsets of
/// `substitute` inside the variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Replacement {
    pub original: String,
    pub substitute: String,
    pub start: usize,
    pub end: usize,
}

/// One row of critic training data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub id: String,
    pub claim: String,
    pub evidence: String,
    pub explanation_variant: String,
    pub critique: String,
    pub element_kind: ElementKind,
    pub label: InstanceLabel,
    pub replacement: Option<Replacement>,
}

impl TrainingInstance {
    /// Undoes the replacement, recovering the original explanation.
    pub fn restore_original(&self) -> String {
        match &self.replacement {
            None => self.explanation_variant.clone(),
            Some(r) => {
                let bytes = crate::extract::char_range_to_bytes(&self.explanation_variant, r.start, r.end)
                    .expect("replacement offsets lie inside the variant");
                let mut out = String::with_capacity(self.explanation_variant.len());
                out.push_str(&self.explanation_variant[..bytes.start]);
                out.push_str(&r.original);
                out.push_str(&self.explanation_variant[bytes.end..]);
                out
            }
        }
    }
}

fn datagen_inputs(article: &FactCheckArticle) -> Result<&str, ArticleError> {
    article.require_explanation()
}

/// One affirmative instance per element kind.
pub fn make_factual_instances(article: &FactCheckArticle) -> Result<Vec<TrainingInstance>, DatagenError> {
    let explanation = datagen_inputs(article)?;
    Ok(ElementKind::ALL
        .into_iter()
        .map(|kind| TrainingInstance {
            id: format!("{}:{kind}:factual", article.id()),
            claim: article.claim().to_string(),
            evidence: article.evidence().to_string(),
            explanation_variant: explanation.to_string(),
            critique: affirmative(kind).to_string(),
            element_kind: kind,
            label: InstanceLabel::Factual,
            replacement: None,
        })
        .collect())
}

fn splice(text: &str, span: &ElementSpan, substitute: &str) -> String {
    let range = span.byte_range();
    let mut out = String::with_capacity(text.len() + substitute.len());
    out.push_str(&text[..range.start]);
    out.push_str(substitute);
    out.push_str(&text[range.end..]);
    out
}

/// Every single-element swap, in explanation-major, evidence-minor order.
/// Evidence elements are deduplicated by canonical key, keeping the first.
fn replacement_candidates(
    article: &FactCheckArticle,
    kind: ElementKind,
    explanation: &str,
    explanation_spans: &[ElementSpan],
    evidence_spans: &[ElementSpan],
) -> Vec<TrainingInstance> {
    let mut seen = HashSet::new();
    let distinct: Vec<&ElementSpan> = evidence_spans.iter().filter(|s| seen.insert(s.canonical())).collect();
    let mut out = Vec::new();
    for target in explanation_spans {
        for source in distinct.iter().filter(|s| s.canonical() != target.canonical()) {
            let substitute = source.surface();
            let start = target.start();
            out.push(TrainingInstance {
                id: format!("{}:{kind}:{}", article.id(), out.len()),
                claim: article.claim().to_string(),
                evidence: article.evidence().to_string(),
                explanation_variant: splice(explanation, target, substitute),
                critique: correction(kind, substitute, target.surface()),
                element_kind: kind,
                label: InstanceLabel::Counterfactual,
                replacement: Some(Replacement {
                    original: target.surface().to_string(),
                    substitute: substitute.to_string(),
                    start,
                    end: start + substitute.chars().count(),
                }),
            });
        }
    }
    out
}

/// All number swaps before the cap is applied.
pub fn number_replacement_candidates(article: &FactCheckArticle) -> Result<Vec<TrainingInstance>, DatagenError> {
    let explanation = datagen_inputs(article)?;
    let expl = extract_numbers(explanation);
    let ev = extract_numbers(article.evidence());
    Ok(replacement_candidates(article, ElementKind::Number, explanation, &expl, &ev))
}

/// All entity swaps before the cap is applied.
pub fn entity_replacement_candidates(
    article: &FactCheckArticle,
    tagger: Option<&dyn EntityTagger>,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    let explanation = datagen_inputs(article)?;
    let expl = extract_entities(explanation, tagger)?;
    let ev = extract_entities(article.evidence(), tagger)?;
    Ok(replacement_candidates(article, ElementKind::Entity, explanation, &expl, &ev))
}

/// Number-swapped explanations, truncated to `cap` in enumeration order.
pub fn make_number_replacements(
    article: &FactCheckArticle,
    cap: usize,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    let mut all = number_replacement_candidates(article)?;
    all.truncate(cap);
    Ok(all)
}

/// Entity-swapped explanations, truncated to `cap` in enumeration order.
pub fn make_entity_replacements(
    article: &FactCheckArticle,
    cap: usize,
    tagger: Option<&dyn EntityTagger>,
) -> Result<Vec<TrainingInstance>, DatagenError> {
    let mut all = entity_replacement_candidates(article, tagger)?;
    all.truncate(cap);
    Ok(all)
}

/// Off-topic rewrites and what it took to get them.
#[derive(Debug, Clone, Default)]
pub struct OffTopicOutcome {
    pub instances: Vec<TrainingInstance>,
    pub calls: usize,
    pub warnings: Vec<String>,
}

/// Renders the off-topic rewriting prompt for an article.
pub fn offtopic_prompt(claim: &str, explanation: &str, evidence: &str) -> String {
    render(OFFTOPIC_PROMPT, &[("claim", claim), ("explanation", explanation), ("evidence", evidence)])
}

#[derive(Debug, PartialEq, Eq)]
struct Rewrite {
    explanation: String,
    reason: String,
}

/// Pulls `{rewritten_explanation, reason}` items out of a reply. The second
/// value is false when anything in the reply had to be skipped.
fn parse_rewrites(reply: &str) -> (Vec<Rewrite>, bool) {
    let (Some(open), Some(close)) = (reply.find('['), reply.rfind(']')) else {
        return (Vec::new(), false);
    };
    if close < open {
        return (Vec::new(), false);
    }
    let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&reply[open..=close]) else {
        return (Vec::new(), false);
    };
    let mut clean = true;
    let mut out = Vec::new();
    for item in items {
        let field = |name: &str| item.get(name).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty());
        match (field("rewritten_explanation"), field("reason")) {
            (Some(e), Some(r)) => out.push(Rewrite { explanation: e.to_string(), reason: r.to_string() }),
            _ => clean = false,
        }
    }
    (out, clean)
}

/// Asks `llm` for `count` off-topic rewrites of the explanation. Replies that
/// are malformed or short trigger another call while `retries` lasts; if some
/// but not all rewrites arrive, the outcome carries a warning.
pub fn make_offtopic_instances(
    article: &FactCheckArticle,
    llm: &dyn ChatClient,
    count: usize,
    retries: usize,
) -> Result<OffTopicOutcome, DatagenError> {
    let explanation = datagen_inputs(article)?;
    let mut outcome = OffTopicOutcome::default();
    if count == 0 {
        return Ok(outcome);
    }
    let messages = [ChatMessage::user(offtopic_prompt(article.claim(), explanation, article.evidence()))];
    let mut rewrites: Vec<Rewrite> = Vec::new();
    let mut retries_used = 0;
    loop {
        outcome.calls += 1;
        let reply = llm.complete(&messages)?;
        let (items, clean) = parse_rewrites(&reply.text);
        if !clean {
            outcome.warnings.push(format!("call {}: malformed off-topic reply, items skipped", outcome.calls));
        }
        for item in items {
            if rewrites.len() < count {
                rewrites.push(item);
            }
        }
        if rewrites.len() >= count || retries_used >= retries {
            break;
        }
        retries_used += 1;
    }
    if rewrites.is_empty() {
        return Err(DatagenError::NoOffTopic { id: article.id().to_string(), calls: outcome.calls });
    }
    if rewrites.len() < count {
        outcome.warnings.push(format!(
            "article {}: only {} of {count} off-topic rewrites after {} call(s)",
            article.id(),
            rewrites.len(),
            outcome.calls
        ));
    }
    outcome.instances = rewrites
        .into_iter()
        .enumerate()
        .map(|(i, r)| TrainingInstance {
            id: format!("{}:topic:{i}", article.id()),
            claim: article.claim().to_string(),
            evidence: article.evidence().to_string(),
            explanation_variant: r.explanation,
            critique: r.reason,
            element_kind: ElementKind::Topic,
            label: InstanceLabel::Counterfactual,
            replacement: None,
        })
        .collect();
    Ok(outcome)
}

/// Per-article generation limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenOptions {
    pub number_cap: usize,
    pub entity_cap: usize,
    pub offtopic_count: usize,
    pub offtopic_retries: usize,
}

impl Default for DatagenOptions {
    fn default() -> Self {
        Self {
            number_cap: DEFAULT_REPLACEMENT_CAP,
            entity_cap: DEFAULT_REPLACEMENT_CAP,
            offtopic_count: DEFAULT_OFFTOPIC_COUNT,
            offtopic_retries: 2,
        }
    }
}

/// Everything generated for one article.
#[derive(Debug, Clone, Default)]
pub struct ArticleInstances {
    pub instances: Vec<TrainingInstance>,
    pub warnings: Vec<String>,
}

/// Factual, number, entity and (when `llm` is given) off-topic instances for
/// one article, in that order.
pub fn generate_for_article(
    article: &FactCheckArticle,
    options: &DatagenOptions,
    tagger: Option<&dyn EntityTagger>,
    llm: Option<&dyn ChatClient>,
) -> Result<ArticleInstances, DatagenError> {
    let mut out = ArticleInstances { instances: make_factual_instances(article)?, warnings: Vec::new() };
    out.instances.extend(make_number_replacements(article, options.number_cap)?);
    out.instances.extend(make_entity_replacements(article, options.entity_cap, tagger)?);
    if let Some(llm) = llm {
        let topic = make_offtopic_instances(article, llm, options.offtopic_count, options.offtopic_retries)?;
        out.instances.extend(topic.instances);
        out.warnings.extend(topic.warnings);
    }
    Ok(out)
}

/// Runs [`generate_for_article`] over `articles` on at most `parallelism`
/// threads. Results keep input order.
pub fn generate_batch(
    articles: &[FactCheckArticle],
    options: &DatagenOptions,
    tagger: Option<&dyn EntityTagger>,
    llm: Option<&dyn ChatClient>,
    parallelism: usize,
) -> Vec<Result<ArticleInstances, DatagenError>> {
    let run = || articles.par_iter().map(|a| generate_for_article(a, options, tagger, llm)).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); generating sequentially");
            articles.iter().map(|a| generate_for_article(a, options, tagger, llm)).collect()
        }
    }
}

/// Writes one JSON object per line and returns the number of lines.
pub fn emit_jsonl<W: Write>(instances: &[TrainingInstance], sink: &mut W) -> io::Result<usize> {
    for instance in instances {
        serde_json::to_writer(&mut *sink, instance)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(instances.len())
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads instances written by [`emit_jsonl`]. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrainingInstance>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ReadError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::parse_flags;
    use crate::llm::ScriptedChat;
    use crate::model::{Provenance, VeracityLabel};

    fn homelessness() -> FactCheckArticle {
        FactCheckArticle::new(
            "homeless",
            "122,000 people sleeping rough.",
            "Official figures show that 122,494 people were experiencing homelessness, only 7,636 of those people were sleeping rough.",
            Some("only 7,636 people were sleeping rough.".into()),
            VeracityLabel::False,
            Provenance::default(),
        )
        .unwrap()
    }

    fn article(explanation: &str, evidence: &str) -> FactCheckArticle {
        FactCheckArticle::new("a", "some claim", evidence, Some(explanation.into()), VeracityLabel::False, Provenance::default())
            .unwrap()
    }

    #[test]
    fn factual_instances_use_affirmative_templates() {
        let inst = make_factual_instances(&homelessness()).unwrap();
        let critiques: Vec<&str> = inst.iter().map(|i| i.critique.as_str()).collect();
        assert_eq!(
            critiques,
            vec!["The numbers are correct", "The entities are correct", "The explanation is on the topic of the claim"]
        );
        assert!(inst.iter().all(|i| i.label == InstanceLabel::Factual && i.replacement.is_none()));
        assert!(inst.iter().all(|i| i.explanation_variant == "only 7,636 people were sleeping rough."));
    }

    #[test]
    fn missing_explanation_is_precondition_error() {
        let a = FactCheckArticle::new("x", "c", "e", None, VeracityLabel::False, Provenance::default()).unwrap();
        assert!(matches!(make_factual_instances(&a), Err(DatagenError::Article(_))));
    }

    #[test]
    fn worked_example_number_swap() {
        let inst = make_number_replacements(&homelessness(), 20).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].explanation_variant, "only 122,494 people were sleeping rough.");
        assert_eq!(inst[0].critique, "122,494 is not correct, the correct number is 7,636");
        assert_eq!(
            inst[0].replacement,
            Some(Replacement { original: "7,636".into(), substitute: "122,494".into(), start: 5, end: 12 })
        );
        assert_eq!(inst[0].restore_original(), "only 7,636 people were sleeping rough.");
    }

    #[test]
    fn cap_truncates_in_enumeration_order() {
        let evidence = (1..=12).map(|n| format!("group {n} had {} cases.", n * 100)).collect::<Vec<_>>().join(" ");
        let a = article("cases were 100, then 200, then 300.", &evidence);
        // 3 explanation numbers x (12 distinct values minus itself) = 33
        assert_eq!(number_replacement_candidates(&a).unwrap().len(), 33 + 3 * 12);
        let capped = make_number_replacements(&a, 20).unwrap();
        assert_eq!(capped.len(), 20);
        assert_eq!(capped[..], number_replacement_candidates(&a).unwrap()[..20]);
    }

    #[test]
    fn values_not_surfaces_decide_distinctness() {
        let a = article("about 1,000 people", "1000 people and 1,000 more and 2000 others");
        let inst = make_number_replacements(&a, 20).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].replacement.as_ref().unwrap().substitute, "2000");
    }

    #[test]
    fn no_numbers_no_instances() {
        assert!(make_number_replacements(&article("nothing to count", "5 and 6"), 20).unwrap().is_empty());
    }

    #[test]
    fn entity_swaps() {
        let a = article(
            "the problem of homelessness in Australia is growing",
            "Homelessness rose in Australia while rents in Canberra fell.",
        );
        let inst = make_entity_replacements(&a, 20, None).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].critique, "Canberra is not correct, the correct text is Australia");
        assert_eq!(inst[0].explanation_variant, "the problem of homelessness in Canberra is growing");

        let b = article("a statement from Tasmania", "officials in Canberra and Sydney disagreed");
        assert_eq!(make_entity_replacements(&b, 20, None).unwrap().len(), 2);
        assert!(make_entity_replacements(&article("no names", "in Canberra"), 20, None).unwrap().is_empty());
    }

    #[test]
    fn critique_round_trip_recovers_replacement() {
        for inst in make_number_replacements(&homelessness(), 20).unwrap() {
            let flags = parse_flags(ElementKind::Number, &inst.critique);
            let r = inst.replacement.unwrap();
            assert_eq!(flags.len(), 1);
            assert_eq!(flags[0].surface, r.substitute);
            assert_eq!(flags[0].correction.as_deref(), Some(r.original.as_str()));
        }
    }

    const THREE: &str = r#"[{"rewritten_explanation": "Rents rose.", "reason": "The claim is about people sleeping rough, but the explanation is not correct because it is about rents."},
{"rewritten_explanation": "Shelters opened.", "reason": "The claim is about people sleeping rough, but the explanation is not correct because it is about shelters."},
{"rewritten_explanation": "Figures were published.", "reason": "The claim is about people sleeping rough, but the explanation is not correct because it is about publication."}]"#;

    #[test]
    fn offtopic_well_formed() {
        let chat = ScriptedChat::new([format!("```json\n{THREE}\n```")]);
        let out = make_offtopic_instances(&homelessness(), &chat, 3, 2).unwrap();
        assert_eq!(out.instances.len(), 3);
        assert_eq!(out.calls, 1);
        assert!(out.instances.iter().all(|i| i.critique.starts_with("The claim is about")));
        assert!(out.instances.iter().all(|i| i.element_kind == ElementKind::Topic && i.label == InstanceLabel::Counterfactual));
        let prompt = &chat.requests()[0][0].content;
        assert!(prompt.starts_with("Your task is to rewrite the explanation so that it is off-topic"));
        assert!(prompt.contains("This is the claim:\n122,000 people sleeping rough.\n"));
        assert!(prompt.contains("This is the explanation:\nonly 7,636 people were sleeping rough.\n"));
        assert!(prompt.trim_end().ends_with("only 7,636 of those people were sleeping rough."));
    }

    #[test]
    fn offtopic_missing_reason_consumes_retry() {
        let chat = ScriptedChat::new([
            r#"[{"rewritten_explanation": "Rents rose."}]"#.to_string(),
            THREE.to_string(),
        ]);
        let out = make_offtopic_instances(&homelessness(), &chat, 3, 1).unwrap();
        assert_eq!(out.calls, 2);
        assert_eq!(out.instances.len(), 3);
    }

    #[test]
    fn offtopic_short_after_budget_warns() {
        let one = r#"[{"rewritten_explanation": "Rents rose.", "reason": "The claim is about x, but the explanation is not correct because it is about y."}]"#;
        let chat = ScriptedChat::new([one, "not json"]);
        let out = make_offtopic_instances(&homelessness(), &chat, 3, 1).unwrap();
        assert_eq!(out.instances.len(), 1);
        assert!(out.warnings.iter().any(|w| w.contains("only 1 of 3")));
    }

    #[test]
    fn offtopic_nothing_usable_is_error() {
        let chat = ScriptedChat::new(["no", "still no"]);
        assert!(matches!(
            make_offtopic_instances(&homelessness(), &chat, 3, 1),
            Err(DatagenError::NoOffTopic { calls: 2, .. })
        ));
    }

    #[test]
    fn offtopic_zero_count_makes_no_call() {
        let chat = ScriptedChat::new(Vec::<String>::new());
        assert!(make_offtopic_instances(&homelessness(), &chat, 0, 2).unwrap().instances.is_empty());
        assert_eq!(chat.calls(), 0);
    }

    #[test]
    fn offtopic_transport_error_propagates() {
        let chat = ScriptedChat::default();
        chat.push_failure("connection refused");
        assert!(matches!(make_offtopic_instances(&homelessness(), &chat, 3, 2), Err(DatagenError::Llm(_))));
    }

    #[test]
    fn jsonl_round_trip_and_field_order() {
        let mut inst = make_factual_instances(&homelessness()).unwrap();
        inst.extend(make_number_replacements(&homelessness(), 20).unwrap());
        let mut buf = Vec::new();
        assert_eq!(emit_jsonl(&inst, &mut buf).unwrap(), 4);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        let last = text.lines().last().unwrap();
        assert!(last.starts_with(r#"{"id":"homeless:number:0","claim":"#));
        assert!(last.ends_with(r#""element_kind":"number","label":"counterfactual","replacement":{"original":"7,636","substitute":"122,494","start":5,"end":12}}"#));
        assert!(text.lines().next().unwrap().ends_with(r#""replacement":null}"#));
        assert_eq!(read_jsonl(&buf[..]).unwrap(), inst);

        let mut empty = Vec::new();
        assert_eq!(emit_jsonl(&[], &mut empty).unwrap(), 0);
        assert!(empty.is_empty());
    }
}
