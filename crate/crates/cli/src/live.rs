//! Remote client for an OpenAI-compatible chat completions endpoint.

use std::time::Duration;

use periphemu_core::frontend::{ClientError, ClientRequest, LlmClient};
use serde_json::{json, Value};

pub const KEY_VAR: &str = "PERIPHEMU_API_KEY";
pub const BASE_VAR: &str = "PERIPHEMU_API_BASE";
pub const MODEL_VAR: &str = "PERIPHEMU_MODEL";

const DEFAULT_BASE: &str = "https://api.openai.com/v1";
const DEFAULT_MODEL: &str = "gpt-4o";

pub struct LiveClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    key: String,
}

impl LiveClient {
    /// Settings from the config file win over the environment; the key only
    /// comes from the environment.
    pub fn from_env(model: Option<&str>, endpoint: Option<&str>) -> Result<Self, ClientError> {
        let key = std::env::var(KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ClientError::Config(format!("--live needs an API key in ${KEY_VAR}")))?;
        let base = endpoint
            .map(String::from)
            .or_else(|| std::env::var(BASE_VAR).ok())
            .unwrap_or_else(|| DEFAULT_BASE.into());
        let model = model
            .map(String::from)
            .or_else(|| std::env::var(MODEL_VAR).ok())
            .unwrap_or_else(|| DEFAULT_MODEL.into());
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(600))).build().into();
        Ok(Self { agent, url: format!("{}/chat/completions", base.trim_end_matches('/')), model, key })
    }
}

/// The driver files go in one user message ahead of the prompt.
fn corpus_message(req: &ClientRequest<'_>) -> Option<String> {
    if req.corpus.is_empty() {
        return None;
    }
    let mut s = String::from("Driver code files for this MCU follow.\n");
    for h in req.corpus {
        s.push_str(&format!("\n===== {} =====\n{}\n", h.name, h.text));
    }
    Some(s)
}

impl LlmClient for LiveClient {
    fn complete(&mut self, req: &ClientRequest<'_>) -> Result<String, ClientError> {
        let mut messages = vec![json!({ "role": "system", "content": req.system })];
        if let Some(c) = corpus_message(req) {
            messages.push(json!({ "role": "user", "content": c }));
        }
        messages.push(json!({ "role": "user", "content": req.prompt }));
        let mut body = json!({ "model": self.model, "messages": messages });
        if let Some(t) = req.temperature {
            body["temperature"] = json!(t);
        }
        log::info!("stage {} `{}`: querying {}", req.stage.number(), req.subject, self.model);
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let v: Value = resp.body_mut().read_json().map_err(|e| ClientError::Transport(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| ClientError::Transport("response has no choices[0].message.content".into()))
    }
}
