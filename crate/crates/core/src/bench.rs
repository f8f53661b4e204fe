//! Sequential single-instance throughput measurement for critique subjects.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critics::{CriticPanel, CritiqueRequest};
use crate::llm::{ChatClient, ChatMessage};
use crate::template::render;

/// Prompt asking a generation model for free-form feedback on its own
/// response; placeholders `{claim}`, `{evidence}`, `{response}`.
pub const SELF_FEEDBACK_PROMPT: &str = include_str!("../assets/prompts/self_feedback.txt");

/// Per-item latency charged to the virtual clock in simulated mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatencyModel {
    Fixed { ms: f64 },
    /// Uniform in `[mean_ms - spread_ms, mean_ms + spread_ms]`, seeded.
    Sampled { mean_ms: f64, spread_ms: f64, seed: u64 },
}

impl LatencyModel {
    /// A fixed latency that yields `rate` items per second.
    pub fn for_rate(rate: f64) -> Self {
        LatencyModel::Fixed { ms: 1000.0 / rate }
    }

    fn validate(&self) -> Result<(), BenchError> {
        let ok = match *self {
            LatencyModel::Fixed { ms } => ms > 0.0 && ms.is_finite(),
            LatencyModel::Sampled { mean_ms, spread_ms, .. } => {
                mean_ms.is_finite() && spread_ms >= 0.0 && mean_ms - spread_ms > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BenchError::BadLatencyModel(self.clone()))
        }
    }

    fn sampler(&self) -> impl FnMut() -> f64 {
        let model = self.clone();
        let mut rng = match model {
            LatencyModel::Sampled { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
            LatencyModel::Fixed { .. } => ChaCha8Rng::seed_from_u64(0),
        };
        move || match model {
            LatencyModel::Fixed { ms } => ms / 1000.0,
            LatencyModel::Sampled { mean_ms, spread_ms, .. } if spread_ms == 0.0 => mean_ms / 1000.0,
            LatencyModel::Sampled { mean_ms, spread_ms, .. } => {
                rng.gen_range(mean_ms - spread_ms..=mean_ms + spread_ms) / 1000.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    /// Wall-clock time of the subject itself.
    Measured,
    /// The subject still runs, but time comes from the latency model.
    Simulated { latency: LatencyModel },
}

/// Outcome of one throughput run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    pub subject: String,
    pub items_processed: usize,
    pub wall_time_secs: f64,
    pub rate: f64,
    pub mode: String,
    pub latency_model: Option<LatencyModel>,
}

impl ThroughputResult {
    fn new(subject: &str, items: usize, secs: f64, mode: &Mode) -> Self {
        let (mode, latency_model) = match mode {
            Mode::Measured => ("measured", None),
            Mode::Simulated { latency } => ("simulated", Some(latency.clone())),
        };
        Self {
            subject: subject.to_string(),
            items_processed: items,
            wall_time_secs: secs,
            rate: if secs > 0.0 { items as f64 / secs } else { 0.0 },
            mode: mode.to_string(),
            latency_model,
        }
    }
}

impl fmt::Display for ThroughputResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} items in {:.3}s = {:.3}/s ({})",
            self.subject, self.items_processed, self.wall_time_secs, self.rate, self.mode
        )
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("workload is empty")]
    EmptyWorkload,
    #[error("latency model {0:?} must have positive latencies")]
    BadLatencyModel(LatencyModel),
    #[error("{subject} failed on item {item}: {message} (partial: {partial})")]
    Aborted { subject: String, item: usize, message: String, partial: Box<ThroughputResult> },
}

/// Something that processes one workload item at a time.
pub trait Subject<W> {
    fn name(&self) -> &str;
    fn process(&mut self, item: &W) -> Result<(), String>;
}

/// Runs `subject` over `workload` strictly in order on the calling thread.
pub fn measure_throughput<W>(
    subject: &mut dyn Subject<W>,
    workload: &[W],
    mode: &Mode,
) -> Result<ThroughputResult, BenchError> {
    if workload.is_empty() {
        return Err(BenchError::EmptyWorkload);
    }
    let mut sample = match mode {
        Mode::Measured => None,
        Mode::Simulated { latency } => {
            latency.validate()?;
            Some(latency.sampler())
        }
    };
    let mut virtual_secs = 0.0;
    let started = Instant::now();
    for (i, item) in workload.iter().enumerate() {
        if let Err(message) = subject.process(item) {
            let secs = match sample {
                None => started.elapsed().as_secs_f64(),
                Some(_) => virtual_secs,
            };
            return Err(BenchError::Aborted {
                subject: subject.name().to_string(),
                item: i,
                message,
                partial: Box::new(ThroughputResult::new(subject.name(), i, secs, mode)),
            });
        }
        if let Some(next) = sample.as_mut() {
            virtual_secs += next();
        }
    }
    let secs = match sample {
        None => started.elapsed().as_secs_f64().max(1e-9),
        Some(_) => virtual_secs,
    };
    Ok(ThroughputResult::new(subject.name(), workload.len(), secs, mode))
}

/// Rule or model critics producing one aggregated critique per request.
pub struct CritiqueSubject<'a> {
    pub name: String,
    pub panel: &'a CriticPanel,
}

impl Subject<CritiqueRequest> for CritiqueSubject<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, item: &CritiqueRequest) -> Result<(), String> {
        self.panel.run(&item.claim, &item.evidence, &item.response).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Long-form self-feedback from a generation model, one call per request.
pub struct SelfFeedbackSubject<'a> {
    pub name: String,
    pub llm: &'a dyn ChatClient,
    pub template: String,
}

impl<'a> SelfFeedbackSubject<'a> {
    pub fn new(llm: &'a dyn ChatClient) -> Self {
        Self { name: "self-feedback".into(), llm, template: SELF_FEEDBACK_PROMPT.to_string() }
    }
}

impl Subject<CritiqueRequest> for SelfFeedbackSubject<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn process(&mut self, item: &CritiqueRequest) -> Result<(), String> {
        let prompt = render(
            &self.template,
            &[("claim", &item.claim), ("evidence", &item.evidence), ("response", &item.response)],
        );
        self.llm.complete(&[ChatMessage::user(prompt)]).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Does nothing; used when only the latency model matters.
pub struct IdleSubject(pub String);

impl<W> Subject<W> for IdleSubject {
    fn name(&self) -> &str {
        &self.0
    }

    fn process(&mut self, _: &W) -> Result<(), String> {
        Ok(())
    }
}
