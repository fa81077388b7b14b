//! Pluggable model-client abstraction.
//!
//! One backend instance serves all three roles (planning, reasoning,
//! deciding); roles differ only in the composition's role prompt. Two
//! implementations share the same generate semantics and timing contract:
//! a deterministic scriptable mock for tests and an HTTP client for real
//! omni-model endpoints.

mod http;
mod mock;

pub use http::{HttpClient, HttpConfig};
pub use mock::{MockClient, MockClientBuilder, MockResponder, MockRule, MockRuleSpec, RuleMatcher};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Fingerprint, MessageComposition, Stage};

/// Decoding parameters forwarded with every call. At temperature 0 a backend
/// must behave deterministically for identical compositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0, seed: 0, max_tokens: 1024 }
    }
}

/// One generation outcome with its reported timings. `prefill_s` is `None`
/// when the backend cannot observe time-to-first-token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResult {
    pub text: String,
    pub prefill_s: Option<f64>,
    pub gen_s_per_tok: f64,
    pub tokens: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no mock rule matched (stage {stage}, fingerprint {fingerprint}); add a catch-all default rule")]
    RuleMiss { stage: Stage, fingerprint: String },
    #[error("auth env var {0} is not set")]
    MissingAuth(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

/// A logged call, in issue order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedCall {
    pub seq: u64,
    pub stage: Stage,
    pub fingerprint: Fingerprint,
}

/// The model client shared by every stage of the engine.
#[async_trait]
pub trait ModelClient: Send + Sync {
    /// Generate a completion for a composition. With temperature 0, identical
    /// `(composition, params)` must yield identical text across calls. Every
    /// call is appended to the client's call log at issue time.
    async fn generate(
        &self,
        composition: &MessageComposition,
        params: &DecodingParams,
    ) -> Result<GenerateResult, BackendError>;

    /// The ordered call log; order equals call issue order.
    fn call_log(&self) -> Vec<LoggedCall>;

    /// Clear the call log.
    fn reset_log(&self);
}

/// Issue-ordered call log shared by client implementations. Internally
/// synchronized; a monotone sequence number preserves issue order even under
/// concurrent in-flight requests.
#[derive(Debug, Default)]
pub(crate) struct CallLog {
    seq: AtomicU64,
    entries: Mutex<Vec<LoggedCall>>,
}

impl CallLog {
    pub(crate) fn record(&self, composition: &MessageComposition) {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        let entry = LoggedCall { seq, stage: composition.stage, fingerprint: composition.fingerprint() };
        let mut entries = self.entries.lock().expect("call log poisoned");
        entries.push(entry);
    }

    pub(crate) fn snapshot(&self) -> Vec<LoggedCall> {
        let mut entries = self.entries.lock().expect("call log poisoned").clone();
        entries.sort_by_key(|e| e.seq);
        entries
    }

    pub(crate) fn clear(&self) {
        self.entries.lock().expect("call log poisoned").clear();
    }
}

/// Backend selection, loadable from a config file. HTTP auth tokens are
/// never stored here; the config names an environment variable instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendConfig {
    Mock { rules: Vec<MockRuleSpec> },
    Http(HttpConfig),
}

impl BackendConfig {
    pub fn build(&self) -> Result<Arc<dyn ModelClient>, BackendError> {
        match self {
            BackendConfig::Mock { rules } => Ok(Arc::new(MockClient::from_specs(rules.clone()))),
            BackendConfig::Http(cfg) => Ok(Arc::new(HttpClient::new(cfg.clone())?)),
        }
    }
}

/// Token accounting used when a backend reports no usage: whitespace-split
/// word count, with nonempty text counting as at least one token.
pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    let count = text.split_whitespace().count() as u64;
    if count == 0 && !text.is_empty() {
        1
    } else {
        count
    }
}
