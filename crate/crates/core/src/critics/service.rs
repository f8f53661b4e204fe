//! Model-backed critics reached over the `POST /critique` protocol.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Critic, CriticError, Critique, CritiqueSource};
use crate::feedback::parse_flags;
use crate::model::ElementKind;

pub const DEFAULT_MAX_CRITIQUE_TOKENS: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRequest {
    pub element_kind: ElementKind,
    pub claim: String,
    pub evidence: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueReply {
    pub positive: bool,
    pub critique: String,
}

/// A critique model service. Implementations must accept concurrent calls.
pub trait CriticService: Send + Sync {
    fn critique(&self, request: &CritiqueRequest) -> Result<CritiqueReply, CriticError>;
}

/// HTTP client for a critique model server.
#[derive(Debug, Clone)]
pub struct HttpCriticService {
    url: String,
    http: reqwest::blocking::Client,
}

impl HttpCriticService {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, CriticError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| CriticError::Transport(e.to_string()))?;
        Ok(Self { url: format!("{}/critique", base_url.trim_end_matches('/')), http })
    }
}

impl CriticService for HttpCriticService {
    fn critique(&self, request: &CritiqueRequest) -> Result<CritiqueReply, CriticError> {
        let resp = self
            .http
            .post(&self.url)
            .json(request)
            .send()
            .map_err(|e| CriticError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(CriticError::Transport(format!("critic returned HTTP {status}")));
        }
        if !status.is_success() {
            return Err(CriticError::Protocol(format!("critic returned HTTP {status}")));
        }
        let body = resp.text().map_err(|e| CriticError::Transport(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| CriticError::Protocol(format!("bad critic body: {e}")))
    }
}

/// Keeps the text up to the end of its `max_tokens`-th whitespace token.
fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                in_token = false;
                if count == max_tokens {
                    return &text[..i];
                }
            }
        } else if !in_token {
            in_token = true;
            count += 1;
        }
    }
    text
}

/// Asks `service` for a critique of `response` and converts the reply.
pub fn model_critique(
    service: &dyn CriticService,
    kind: ElementKind,
    claim: &str,
    evidence: &str,
    response: &str,
    max_tokens: usize,
) -> Result<Critique, CriticError> {
    let request = CritiqueRequest {
        element_kind: kind,
        claim: claim.to_string(),
        evidence: evidence.to_string(),
        response: response.to_string(),
    };
    let reply = service.critique(&request)?;
    if reply.positive {
        return Ok(Critique::affirm(kind, CritiqueSource::Model));
    }
    let text = truncate_tokens(reply.critique.trim(), max_tokens).to_string();
    if text.is_empty() {
        return Err(CriticError::Protocol(format!("negative {kind} critique without text")));
    }
    let flagged = parse_flags(kind, &text);
    Critique::negative(kind, text, flagged, CritiqueSource::Model)
}

/// A [`Critic`] backed by a critique model service.
#[derive(Clone)]
pub struct ModelCritic {
    kind: ElementKind,
    service: Arc<dyn CriticService>,
    max_tokens: usize,
}

impl ModelCritic {
    pub fn new(kind: ElementKind, service: Arc<dyn CriticService>) -> Self {
        Self { kind, service, max_tokens: DEFAULT_MAX_CRITIQUE_TOKENS }
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

impl Critic for ModelCritic {
    fn kind(&self) -> ElementKind {
        self.kind
    }

    fn critique(&self, claim: &str, evidence: &str, response: &str) -> Result<Critique, CriticError> {
        model_critique(self.service.as_ref(), self.kind, claim, evidence, response, self.max_tokens)
    }
}
