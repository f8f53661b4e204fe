//! The generate → critique → refine loop.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critics::{
    AggregatedCritique, Critic, CriticError, CriticPanel, CriticService, FallbackCritic, ModelCritic, RuleCritic,
    DEFAULT_MAX_CRITIQUE_TOKENS, DEFAULT_TOPIC_THRESHOLD,
};
use crate::extract::EntityTagger;
use crate::llm::{ChatClient, ChatMessage, ChatSettings, LlmError, Role};
use crate::model::{CounterResponse, ElementKind, FactCheckArticle, Provenance};
use crate::template::{check_placeholders, render, TemplateError};

pub const DEFAULT_CONTEXT_BUDGET_CHARS: usize = 24_000;
const TRUNCATION_MARK: &str = " [...]";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error("prompt needs {needed} characters but the context budget is {budget}")]
    Overflow { needed: usize, budget: usize },
    #[error("refinement requested but every critique is positive")]
    NothingToRefine,
    #[error("template {name}: {source}")]
    Template { name: &'static str, source: TemplateError },
    #[error("reading template {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// The three prompt templates. Defaults are compiled in; any of them can be
/// replaced by a file of the same name in a template directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub initial: String,
    pub refine: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: include_str!("../assets/prompts/system.txt").to_string(),
            initial: include_str!("../assets/prompts/initial.txt").to_string(),
            refine: include_str!("../assets/prompts/refine.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Reads `system.txt`, `initial.txt` and `refine.txt` from `dir`, keeping
    /// the built-in text for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::default();
        for (name, slot) in [("system.txt", &mut t.system), ("initial.txt", &mut t.initial), ("refine.txt", &mut t.refine)] {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(source) => return Err(PromptError::Io { path: path.display().to_string(), source }),
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let check = |name, text: &str, known: &[&str]| {
            check_placeholders(text, known).map_err(|source| PromptError::Template { name, source })
        };
        check("system", &self.system, &["claim", "evidence"])?;
        check("initial", &self.initial, &["claim", "evidence"])?;
        check("refine", &self.refine, &["claim", "evidence", "response", "critique"])
    }
}

/// Messages sent in one LLM call, plus notes on anything altered to fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    annotations: Vec<String>,
}

impl PromptMessages {
    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn rendered_len(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }

    /// Concatenated text of every message with the given role.
    pub fn text_of(&self, role: Role) -> String {
        self.messages.iter().filter(|m| m.role == role).map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Renders prompts within a character budget.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: PromptTemplates,
    budget_chars: usize,
    truncate_evidence: bool,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(PromptTemplates::default(), DEFAULT_CONTEXT_BUDGET_CHARS, false)
    }
}

impl PromptBuilder {
    pub fn new(templates: PromptTemplates, budget_chars: usize, truncate_evidence: bool) -> Self {
        Self { templates, budget_chars, truncate_evidence }
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn initial(&self, claim: &str, evidence: &str) -> Result<PromptMessages, PromptError> {
        require(claim, "claim")?;
        require(evidence, "evidence")?;
        self.fit(&self.templates.initial, &[("claim", claim), ("response", ""), ("critique", "")], evidence)
    }

    pub fn refine(
        &self,
        claim: &str,
        evidence: &str,
        previous: &CounterResponse,
        critique: &AggregatedCritique,
    ) -> Result<PromptMessages, PromptError> {
        require(claim, "claim")?;
        require(evidence, "evidence")?;
        if critique.all_positive {
            return Err(PromptError::NothingToRefine);
        }
        self.fit(
            &self.templates.refine,
            &[("claim", claim), ("response", &previous.text), ("critique", &critique.text)],
            evidence,
        )
    }

    fn render_with(&self, user: &str, fixed: &[(&str, &str)], evidence: &str) -> PromptMessages {
        let mut values = fixed.to_vec();
        values.push(("evidence", evidence));
        PromptMessages {
            messages: vec![
                ChatMessage::system(render(&self.templates.system, &values)),
                ChatMessage::user(render(user, &values)),
            ],
            annotations: Vec::new(),
        }
    }

    fn fit(&self, user: &str, fixed: &[(&str, &str)], evidence: &str) -> Result<PromptMessages, PromptError> {
        let full = self.render_with(user, fixed, evidence);
        let needed = full.rendered_len();
        if needed <= self.budget_chars {
            return Ok(full);
        }
        let overflow = PromptError::Overflow { needed, budget: self.budget_chars };
        if !self.truncate_evidence {
            return Err(overflow);
        }
        let evidence_chars = evidence.chars().count();
        let overhead = self.render_with(user, fixed, "").rendered_len();
        let uses = (needed - overhead) / evidence_chars.max(1);
        let mark = TRUNCATION_MARK.chars().count();
        let room = self.budget_chars.saturating_sub(overhead) / uses.max(1);
        if uses == 0 || room <= mark {
            return Err(overflow);
        }
        let kept: String = evidence.chars().take(room - mark).collect();
        let kept = format!("{}{TRUNCATION_MARK}", kept.trim_end());
        let mut out = self.render_with(user, fixed, &kept);
        out.annotations.push(format!(
            "evidence truncated from {evidence_chars} to {} characters to fit a budget of {}",
            kept.chars().count() - mark,
            self.budget_chars
        ));
        Ok(out)
    }
}

fn require(text: &str, what: &'static str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        Err(PromptError::EmptyInput(what))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticMode {
    /// Built-in rule critics.
    #[default]
    Rule,
    /// Critique service only; a failing service fails the article.
    Model,
    /// Critique service, falling back to the rule critic when it is
    /// unreachable.
    Mixed,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

/// Settings for one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub retries: u32,
    pub timeout_secs: u64,
    pub max_rounds: usize,
    pub critic_mode: CriticMode,
    /// Critic kinds to run. Empty means no feedback at all: the initial
    /// response is returned as is.
    pub enabled_critics: Vec<ElementKind>,
    pub topic_threshold: f64,
    /// Base address of the critique service, for `model` and `mixed` modes.
    pub critic_endpoint: Option<String>,
    pub critique_max_tokens: usize,
    pub context_budget_chars: usize,
    pub truncate_evidence: bool,
    /// Re-run the critics on the final response for the trace.
    pub verify: bool,
    pub parallelism: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let chat = ChatSettings::default();
        Self {
            endpoint: chat.endpoint,
            model_name: chat.model,
            temperature: chat.temperature,
            max_tokens: chat.max_tokens,
            seed: chat.seed,
            retries: chat.retries,
            timeout_secs: chat.timeout_secs,
            max_rounds: 1,
            critic_mode: CriticMode::Rule,
            enabled_critics: ElementKind::ALL.to_vec(),
            topic_threshold: DEFAULT_TOPIC_THRESHOLD,
            critic_endpoint: None,
            critique_max_tokens: DEFAULT_MAX_CRITIQUE_TOKENS,
            context_budget_chars: DEFAULT_CONTEXT_BUDGET_CHARS,
            truncate_evidence: false,
            verify: false,
            parallelism: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} is outside [0, 2]", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.topic_threshold) {
            return bad(format!("topic_threshold {} is outside [0, 1]", self.topic_threshold));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        let mut kinds = self.enabled_critics.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.enabled_critics.len() {
            return bad("enabled_critics lists a kind twice".into());
        }
        if self.critic_mode != CriticMode::Rule && !self.enabled_critics.is_empty() && self.critic_endpoint.is_none() {
            return bad(format!("critic_mode {:?} needs critic_endpoint", self.critic_mode).to_lowercase());
        }
        Ok(())
    }

    pub fn chat_settings(&self) -> ChatSettings {
        ChatSettings {
            endpoint: self.endpoint.clone(),
            model: self.model_name.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            retries: self.retries,
            timeout_secs: self.timeout_secs,
            ..ChatSettings::default()
        }
    }

    pub fn prompt_builder(&self, templates: PromptTemplates) -> PromptBuilder {
        PromptBuilder::new(templates, self.context_budget_chars, self.truncate_evidence)
    }

    /// Removes `kinds` from the enabled critics.
    pub fn without(mut self, kinds: &[ElementKind]) -> Self {
        self.enabled_critics.retain(|k| !kinds.contains(k));
        self
    }
}

/// Builds the critic panel described by `config`. `service` is required in
/// `model` and `mixed` modes.
pub fn build_panel(
    config: &GenerationConfig,
    service: Option<Arc<dyn CriticService>>,
    tagger: Option<Arc<dyn EntityTagger>>,
) -> Result<CriticPanel, CriticError> {
    let rule = |kind| {
        let mut c = RuleCritic::new(kind).with_topic_threshold(config.topic_threshold);
        if let Some(t) = &tagger {
            c = c.with_tagger(Arc::clone(t));
        }
        Arc::new(c) as Arc<dyn Critic>
    };
    let mut critics = Vec::new();
    for &kind in &config.enabled_critics {
        let critic = match (config.critic_mode, &service) {
            (CriticMode::Rule, _) => rule(kind),
            (_, None) => return Err(CriticError::Contract(format!("{kind} critic needs a critique service"))),
            (mode, Some(svc)) => {
                let model: Arc<dyn Critic> =
                    Arc::new(ModelCritic::new(kind, Arc::clone(svc)).with_max_tokens(config.critique_max_tokens));
                if mode == CriticMode::Mixed {
                    Arc::new(FallbackCritic::new(model, rule(kind)))
                } else {
                    model
                }
            }
        };
        critics.push(critic);
    }
    CriticPanel::new(critics)
}

/// Identifies the article a trace belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRef {
    pub id: String,
    pub source: Provenance,
}

/// Everything that happened while answering one article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub article: ArticleRef,
    pub prompts: Vec<PromptMessages>,
    pub initial: Option<CounterResponse>,
    /// One aggregate per critique pass that decided whether to refine.
    pub critiques: Vec<AggregatedCritique>,
    pub refined: Option<CounterResponse>,
    pub llm_calls: usize,
    pub rounds: usize,
    /// Critique of the final response, when verification is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<AggregatedCritique>,
    /// Wall-clock time of each LLM call. Not serialized, so traces from
    /// identical runs compare equal byte for byte.
    #[serde(skip)]
    pub latencies: Vec<Duration>,
}

impl GenerationTrace {
    fn new(article: &FactCheckArticle) -> Self {
        Self {
            article: ArticleRef { id: article.id().to_string(), source: article.source().clone() },
            prompts: Vec::new(),
            initial: None,
            critiques: Vec::new(),
            refined: None,
            llm_calls: 0,
            rounds: 0,
            verification: None,
            latencies: Vec::new(),
        }
    }

    /// The final counter-response, if generation got that far.
    pub fn response(&self) -> Option<&CounterResponse> {
        self.refined.as_ref().or(self.initial.as_ref())
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Critic(#[from] CriticError),
}

/// A failed generation with whatever was recorded before the failure.
#[derive(Debug, Error)]
#[error("article {}: {error}", trace.article.id)]
pub struct GenerationFailure {
    pub error: GenerationError,
    pub trace: Box<GenerationTrace>,
}

/// What the loop needs besides the article.
pub struct Generator<'a> {
    pub prompts: &'a PromptBuilder,
    pub llm: &'a dyn ChatClient,
    pub critics: &'a CriticPanel,
    pub max_rounds: usize,
    pub verify: bool,
}

impl Generator<'_> {
    fn call(&self, prompt: PromptMessages, trace: &mut GenerationTrace) -> Result<String, LlmError> {
        let started = Instant::now();
        let result = self.llm.complete(prompt.messages());
        trace.latencies.push(started.elapsed());
        trace.prompts.push(prompt);
        trace.llm_calls += 1;
        Ok(result?.text.trim().to_string())
    }

    fn run(&self, article: &FactCheckArticle, trace: &mut GenerationTrace) -> Result<(), GenerationError> {
        let (claim, evidence) = (article.claim(), article.evidence());
        let prompt = self.prompts.initial(claim, evidence)?;
        let initial = CounterResponse::initial(self.call(prompt, trace)?);
        trace.initial = Some(initial.clone());
        let mut current = initial;
        if !self.critics.is_empty() {
            loop {
                let agg = self.critics.run(claim, evidence, &current.text)?;
                let done = agg.all_positive || trace.rounds >= self.max_rounds;
                trace.critiques.push(agg);
                if done {
                    break;
                }
                let prompt = self.prompts.refine(claim, evidence, &current, trace.critiques.last().unwrap())?;
                current = CounterResponse::refined(self.call(prompt, trace)?);
                trace.rounds += 1;
                if trace.rounds >= self.max_rounds {
                    break;
                }
            }
            if self.verify {
                trace.verification = Some(self.critics.run(claim, evidence, &current.text)?);
            }
        }
        trace.refined = Some(current);
        Ok(())
    }

    /// Generates an initial response, critiques it, and refines it while a
    /// critique is negative and rounds remain.
    pub fn generate(&self, article: &FactCheckArticle) -> Result<GenerationTrace, GenerationFailure> {
        let mut trace = GenerationTrace::new(article);
        match self.run(article, &mut trace) {
            Ok(()) => Ok(trace),
            Err(error) => Err(GenerationFailure { error, trace: Box::new(trace) }),
        }
    }

    /// Runs [`Self::generate`] over `articles` on at most `parallelism`
    /// threads. Results keep input order.
    pub fn generate_batch(
        &self,
        articles: &[FactCheckArticle],
        parallelism: usize,
    ) -> Vec<Result<GenerationTrace, GenerationFailure>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build();
        match pool {
            Ok(pool) => pool.install(|| articles.par_iter().map(|a| self.generate(a)).collect()),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); generating sequentially");
                articles.iter().map(|a| self.generate(a)).collect()
            }
        }
    }
}
