//! Language-model access: the provider trait, a gateway that adds call
//! accounting, budgets, stop handling and a transcript cache, plus mock and
//! HTTP providers.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::TranscriptCache;
pub use http::{HttpConfig, HttpProvider};
pub use mock::{AdversarialLm, GoldLm, GoldTarget, OracleLm, ScriptedLm, CORRUPTION_TOKENS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("provider error: {0}")]
    Provider(String),
    #[error("call budget of {cap} exhausted")]
    BudgetExceeded { cap: u64 },
    #[error("provider cannot {0}")]
    CapabilityUnavailable(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            presence_penalty: 0.0,
            frequency_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub prompt: String,
    #[serde(default)]
    pub stop: Vec<String>,
    /// Generation length cap in provider units.
    pub max_new_text: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl LmRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        LmRequest {
            prompt: prompt.into(),
            stop: Vec::new(),
            max_new_text: 512,
            sampling: Sampling::default(),
            seed: None,
        }
    }

    pub fn with_stop(mut self, stop: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

/// Raw provider output, before stop truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<(String, f64)>>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            token_logprobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub call_id: u64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    /// `score` is available.
    pub logprobs: bool,
}

pub trait LanguageModel: Send + Sync {
    /// Identifies the provider in cache keys.
    fn name(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    fn complete(&self, req: &LmRequest) -> Result<Completion, LmError>;

    /// Mean per-token log-probability of `continuation` after `prompt`.
    fn score(&self, _req: &ScoreRequest) -> Result<f64, LmError> {
        Err(LmError::CapabilityUnavailable("score continuations"))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LmError> {
        Ok(trigram_embedding(text))
    }
}

pub const EMBEDDING_DIM: usize = 256;

/// Hashed character-trigram counts, L2-normalized. The empty string maps
/// to the zero vector.
pub fn trigram_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    if text.is_empty() {
        return v;
    }
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    for w in chars.windows(3.min(chars.len())) {
        let mut h: u64 = 0xcbf29ce484222325;
        for c in w {
            for b in (*c as u32).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        v[(h % EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatewayStats {
    pub complete_calls: u64,
    pub score_calls: u64,
    /// Calls that reached the provider (cache misses).
    pub provider_calls: u64,
    pub cache_hits: u64,
}

/// Shared entry point to a provider. Safe to use from several threads.
pub struct Gateway {
    lm: Arc<dyn LanguageModel>,
    cache: Option<TranscriptCache>,
    max_complete_calls: Option<u64>,
    next_call_id: AtomicU64,
    complete_calls: AtomicU64,
    score_calls: AtomicU64,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl Gateway {
    pub fn new(lm: impl LanguageModel + 'static) -> Self {
        Self::from_arc(Arc::new(lm))
    }

    pub fn from_arc(lm: Arc<dyn LanguageModel>) -> Self {
        Gateway {
            lm,
            cache: None,
            max_complete_calls: None,
            next_call_id: AtomicU64::new(0),
            complete_calls: AtomicU64::new(0),
            score_calls: AtomicU64::new(0),
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: TranscriptCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_budget(mut self, max_complete_calls: u64) -> Self {
        self.max_complete_calls = Some(max_complete_calls);
        self
    }

    pub fn provider(&self) -> &dyn LanguageModel {
        self.lm.as_ref()
    }

    pub fn capabilities(&self) -> Capabilities {
        self.lm.capabilities()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            complete_calls: self.complete_calls.load(Ordering::SeqCst),
            score_calls: self.score_calls.load(Ordering::SeqCst),
            provider_calls: self.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, req: &LmRequest) -> Result<LmResponse, LmError> {
        if req.prompt.is_empty() {
            return Err(LmError::InvalidRequest("empty prompt".into()));
        }
        let n = self.complete_calls.fetch_add(1, Ordering::SeqCst);
        if let Some(cap) = self.max_complete_calls {
            if n >= cap {
                self.complete_calls.fetch_sub(1, Ordering::SeqCst);
                return Err(LmError::BudgetExceeded { cap });
            }
        }
        let call_id = self.next_call_id.fetch_add(1, Ordering::SeqCst);
        let key = self.cache.as_ref().map(|_| {
            cache::request_key(
                "complete",
                &self.lm.name(),
                &serde_json::to_value(req).expect("request serializes"),
            )
        });
        let cached: Option<Completion> = match (&self.cache, &key) {
            (Some(c), Some(k)) => c.get(k).and_then(|v| serde_json::from_value(v).ok()),
            _ => None,
        };
        let (completion, hit) = match cached {
            Some(c) => {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                (c, true)
            }
            None => {
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                let c = self.lm.complete(req)?;
                if let (Some(cache), Some(k)) = (&self.cache, key) {
                    cache.put(
                        k,
                        serde_json::to_value(req).expect("request serializes"),
                        serde_json::to_value(&c).expect("completion serializes"),
                    );
                }
                (c, false)
            }
        };
        log::debug!("complete #{call_id} cached={hit}");
        Ok(LmResponse {
            text: truncate_at_stop(&completion.text, &req.stop),
            token_logprobs: completion.token_logprobs,
            call_id,
            cached: hit,
        })
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        if req.continuation.is_empty() {
            return Err(LmError::InvalidRequest("empty continuation".into()));
        }
        if !self.lm.capabilities().logprobs {
            return Err(LmError::CapabilityUnavailable("score continuations"));
        }
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        let key = self.cache.as_ref().map(|_| {
            cache::request_key(
                "score",
                &self.lm.name(),
                &serde_json::to_value(req).expect("request serializes"),
            )
        });
        if let (Some(c), Some(k)) = (&self.cache, &key) {
            if let Some(v) = c.get(k).and_then(|v| v.as_f64()) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(v);
            }
        }
        self.provider_calls.fetch_add(1, Ordering::SeqCst);
        let s = self.lm.score(req)?;
        if let (Some(cache), Some(k)) = (&self.cache, key) {
            cache.put(
                k,
                serde_json::to_value(req).expect("request serializes"),
                s.into(),
            );
        }
        Ok(s)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, LmError> {
        self.lm.embed(text)
    }
}
