use std::env;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use super::{Capabilities, Completion, LanguageModel, LmError, LmRequest, ScoreRequest};

pub const ENV_ENDPOINT: &str = "GRAMMAR_STEER_ENDPOINT";
pub const ENV_MODEL: &str = "GRAMMAR_STEER_MODEL";
pub const ENV_KEY_VAR: &str = "GRAMMAR_STEER_API_KEY_VAR";
pub const ENV_LOGPROBS: &str = "GRAMMAR_STEER_LOGPROBS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; requests go to `{endpoint}/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_var: String,
    /// Whether the endpoint returns token log-probabilities with `echo`.
    pub logprobs: bool,
    pub timeout_secs: u64,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, LmError> {
        let model = env::var(ENV_MODEL)
            .map_err(|_| LmError::Provider(format!("{ENV_MODEL} is not set")))?;
        Ok(HttpConfig {
            endpoint: env::var(ENV_ENDPOINT).unwrap_or_else(|_| "https://api.openai.com/v1".into()),
            model,
            api_key_var: env::var(ENV_KEY_VAR).unwrap_or_else(|_| "OPENAI_API_KEY".into()),
            logprobs: env::var(ENV_LOGPROBS)
                .is_ok_and(|v| matches!(v.as_str(), "1" | "true" | "yes")),
            timeout_secs: 120,
        })
    }
}

/// Client for completion endpoints in the OpenAI text-completions format.
pub struct HttpProvider {
    cfg: HttpConfig,
    agent: Agent,
}

impl HttpProvider {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        HttpProvider { cfg, agent }
    }

    fn post(&self, body: &Value) -> Result<Value, LmError> {
        let url = format!("{}/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Ok(key) = env::var(&self.cfg.api_key_var) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| LmError::Provider(e.to_string()))?;
        resp.into_body()
            .read_json()
            .map_err(|e| LmError::Provider(format!("bad response body: {e}")))
    }
}

fn first_choice(v: &Value) -> Result<&Value, LmError> {
    v.get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LmError::Provider("response has no choices".into()))
}

impl LanguageModel for HttpProvider {
    fn name(&self) -> String {
        format!("http:{}", self.cfg.model)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            logprobs: self.cfg.logprobs,
        }
    }

    fn complete(&self, req: &LmRequest) -> Result<Completion, LmError> {
        let mut body = json!({
            "model": self.cfg.model,
            "prompt": req.prompt,
            "max_tokens": req.max_new_text,
            "temperature": req.sampling.temperature,
            "presence_penalty": req.sampling.presence_penalty,
            "frequency_penalty": req.sampling.frequency_penalty,
        });
        if !req.stop.is_empty() {
            // providers cap the number of stop sequences; the gateway
            // applies the full list afterwards anyway
            body["stop"] = json!(req.stop.iter().take(4).collect::<Vec<_>>());
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let v = self.post(&body)?;
        let text = first_choice(&v)?
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| LmError::Provider("choice has no text".into()))?;
        Ok(Completion::text(text))
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        if !self.cfg.logprobs {
            return Err(LmError::CapabilityUnavailable("score continuations"));
        }
        let body = json!({
            "model": self.cfg.model,
            "prompt": format!("{}{}", req.prompt, req.continuation),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let v = self.post(&body)?;
        let lp = first_choice(&v)?
            .get("logprobs")
            .ok_or_else(|| LmError::Provider("no logprobs in response".into()))?;
        let offsets = lp.get("text_offset").and_then(Value::as_array);
        let values = lp.get("token_logprobs").and_then(Value::as_array);
        let (Some(offsets), Some(values)) = (offsets, values) else {
            return Err(LmError::Provider("malformed logprobs".into()));
        };
        let start = req.prompt.chars().count() as u64;
        let picked: Vec<f64> = offsets
            .iter()
            .zip(values)
            .filter(|(o, _)| o.as_u64().is_some_and(|o| o >= start))
            .filter_map(|(_, v)| v.as_f64())
            .collect();
        if picked.is_empty() {
            return Err(LmError::Provider("continuation produced no tokens".into()));
        }
        Ok(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}
