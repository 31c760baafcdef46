//! The model client interface, transcripts, and the replaying mock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resolver::HeaderSource;
use crate::validator::Stage;

/// One query. `stage` and `subject` identify it for transcripts; a remote
/// client only needs `system`, `prompt` and the driver files.
#[derive(Debug, Clone, Copy)]
pub struct ClientRequest<'a> {
    pub stage: Stage,
    /// What the query is about: the MCU, a category, or `CATEGORY.REG`.
    pub subject: &'a str,
    pub system: &'a str,
    pub prompt: &'a str,
    pub corpus: &'a [HeaderSource],
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transcript exhausted after {0} response(s)")]
    Exhausted(usize),
    #[error("transcript record {index} does not match the request: {detail}")]
    Mismatch { index: usize, detail: String },
    #[error("client configuration: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
}

pub trait LlmClient {
    fn complete(&mut self, req: &ClientRequest<'_>) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub stage: Stage,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub response: String,
}

/// Ordered query/response records.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn push(&mut self, r: TranscriptRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("transcripts serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Replays a transcript in order. Each record must name the requested
/// stage and subject; stored prompts and system instructions must match
/// exactly.
#[derive(Debug, Clone)]
pub struct MockClient {
    records: Vec<TranscriptRecord>,
    next: usize,
}

impl MockClient {
    pub fn new(t: Transcript) -> Self {
        Self { records: t.records, next: 0 }
    }

    /// Responses handed out so far.
    pub fn consumed(&self) -> usize {
        self.next
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - self.next
    }
}

impl LlmClient for MockClient {
    fn complete(&mut self, req: &ClientRequest<'_>) -> Result<String, ClientError> {
        let index = self.next;
        let r = self.records.get(index).ok_or(ClientError::Exhausted(index))?;
        let mismatch = |detail: String| ClientError::Mismatch { index, detail };
        if r.stage != req.stage || r.subject != req.subject {
            return Err(mismatch(format!(
                "recorded stage {} `{}`, requested stage {} `{}`",
                r.stage.number(),
                r.subject,
                req.stage.number(),
                req.subject
            )));
        }
        if r.system.as_deref().is_some_and(|s| s != req.system) {
            return Err(mismatch("system instruction differs".into()));
        }
        if r.prompt.as_deref().is_some_and(|p| p != req.prompt) {
            return Err(mismatch(format!("prompt for stage {} `{}` differs", r.stage.number(), r.subject)));
        }
        self.next += 1;
        Ok(r.response.clone())
    }
}
