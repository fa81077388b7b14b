//! Deterministic scriptable mock backend.
//!
//! Rules are ordered and the first match wins. Matchers operate on the
//! composition's stage, modality-kind layout, and text content — never on
//! raw media bytes — so tests need no real media files. A catch-all default
//! rule is required; a miss without one is a configuration error.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, BackendError, CallLog, DecodingParams, GenerateResult, LoggedCall, ModelClient};
use crate::types::{MessageComposition, ModalityKind, Stage};

/// Predicates over a composition. All present predicates must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleMatcher {
    /// Match the stage implied by the role prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    /// Every listed kind must be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub has_kinds: Vec<ModalityKind>,
    /// None of the listed kinds may be present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lacks_kinds: Vec<ModalityKind>,
    /// First-appearance order of media kinds must equal this exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind_order: Option<Vec<ModalityKind>>,
    /// Some text part must contain this substring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_contains: Option<String>,
}

impl RuleMatcher {
    pub fn any() -> Self {
        RuleMatcher::default()
    }

    pub fn stage(stage: Stage) -> Self {
        RuleMatcher { stage: Some(stage), ..Default::default() }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.text_contains = Some(needle.into());
        self
    }

    pub fn with_kinds(mut self, kinds: &[ModalityKind]) -> Self {
        self.has_kinds = kinds.to_vec();
        self
    }

    pub fn without_kinds(mut self, kinds: &[ModalityKind]) -> Self {
        self.lacks_kinds = kinds.to_vec();
        self
    }

    pub fn ordered(mut self, kinds: &[ModalityKind]) -> Self {
        self.kind_order = Some(kinds.to_vec());
        self
    }

    pub fn matches(&self, composition: &MessageComposition) -> bool {
        if let Some(stage) = self.stage {
            if composition.stage != stage {
                return false;
            }
        }
        let kinds = composition.media_kind_order();
        if !self.has_kinds.iter().all(|k| kinds.contains(k)) {
            return false;
        }
        if self.lacks_kinds.iter().any(|k| kinds.contains(k)) {
            return false;
        }
        if let Some(order) = &self.kind_order {
            if &kinds != order {
                return false;
            }
        }
        if let Some(needle) = &self.text_contains {
            if !composition.text_content().contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

/// A programmatic responder: a pure function of the call.
pub type ResponderFn = Arc<dyn Fn(&MessageComposition, &DecodingParams) -> String + Send + Sync>;

/// Response payload of a rule: fixed text, or a pure function of the call.
/// Functions must be deterministic for the temperature-0 contract to hold.
#[derive(Clone)]
pub enum MockResponder {
    Text(String),
    Fn(ResponderFn),
}

impl std::fmt::Debug for MockResponder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MockResponder::Text(t) => f.debug_tuple("Text").field(t).finish(),
            MockResponder::Fn(_) => f.write_str("Fn(..)"),
        }
    }
}

/// An ordered rule: matcher, response, and optional simulated latencies.
/// Delays are actually slept and then reported verbatim, so reruns serialize
/// identically while wall-clock measurements still line up with the report.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: RuleMatcher,
    pub responder: MockResponder,
    pub prefill_delay_s: Option<f64>,
    pub per_token_delay_s: Option<f64>,
}

impl MockRule {
    pub fn text(matcher: RuleMatcher, response: impl Into<String>) -> Self {
        MockRule { matcher, responder: MockResponder::Text(response.into()), prefill_delay_s: None, per_token_delay_s: None }
    }

    pub fn with_delays(mut self, prefill_s: f64, per_token_s: f64) -> Self {
        self.prefill_delay_s = Some(prefill_s);
        self.per_token_delay_s = Some(per_token_s);
        self
    }
}

/// JSON-file form of a rule (ordered array). Function responders cannot be
/// expressed in a file; use the builder for those.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRuleSpec {
    #[serde(default)]
    pub when: RuleMatcher,
    pub respond: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefill_delay_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token_delay_s: Option<f64>,
}

impl From<MockRuleSpec> for MockRule {
    fn from(spec: MockRuleSpec) -> Self {
        MockRule {
            matcher: spec.when,
            responder: MockResponder::Text(spec.respond),
            prefill_delay_s: spec.prefill_delay_s,
            per_token_delay_s: spec.per_token_delay_s,
        }
    }
}

/// Deterministic scripted backend. Safe to share across concurrent tasks.
pub struct MockClient {
    rules: Vec<MockRule>,
    log: CallLog,
}

impl MockClient {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockClient { rules, log: CallLog::default() }
    }

    /// A mock whose every answer is `text`.
    pub fn answering(text: impl Into<String>) -> Self {
        MockClient::new(vec![MockRule::text(RuleMatcher::any(), text)])
    }

    pub fn builder() -> MockClientBuilder {
        MockClientBuilder { rules: Vec::new() }
    }

    pub fn from_specs(specs: Vec<MockRuleSpec>) -> Self {
        MockClient::new(specs.into_iter().map(MockRule::from).collect())
    }

    /// Load an ordered rule array from JSON.
    pub fn from_rules_json(json: &str) -> Result<Self, BackendError> {
        let specs: Vec<MockRuleSpec> =
            serde_json::from_str(json).map_err(|e| BackendError::Config(format!("mock rules: {e}")))?;
        Ok(MockClient::from_specs(specs))
    }
}

/// Incremental construction of an ordered rule list.
pub struct MockClientBuilder {
    rules: Vec<MockRule>,
}

impl MockClientBuilder {
    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn text_rule(self, matcher: RuleMatcher, response: impl Into<String>) -> Self {
        self.rule(MockRule::text(matcher, response))
    }

    pub fn fn_rule<F>(mut self, matcher: RuleMatcher, f: F) -> Self
    where
        F: Fn(&MessageComposition, &DecodingParams) -> String + Send + Sync + 'static,
    {
        self.rules.push(MockRule {
            matcher,
            responder: MockResponder::Fn(Arc::new(f)),
            prefill_delay_s: None,
            per_token_delay_s: None,
        });
        self
    }

    /// Append the required catch-all default.
    pub fn default_response(self, response: impl Into<String>) -> MockClient {
        MockClient::new(self.text_rule(RuleMatcher::any(), response).rules)
    }

    pub fn build(self) -> MockClient {
        MockClient::new(self.rules)
    }
}

#[async_trait]
impl ModelClient for MockClient {
    async fn generate(
        &self,
        composition: &MessageComposition,
        params: &DecodingParams,
    ) -> Result<GenerateResult, BackendError> {
        self.log.record(composition);
        let rule = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(composition))
            .ok_or_else(|| BackendError::RuleMiss {
                stage: composition.stage,
                fingerprint: composition.fingerprint().joined(),
            })?;

        let text = match &rule.responder {
            MockResponder::Text(t) => t.clone(),
            MockResponder::Fn(f) => f(composition, params),
        };
        let tokens = whitespace_tokens(&text).min(u64::from(params.max_tokens.max(1)));

        let prefill = rule.prefill_delay_s.unwrap_or(0.0);
        let per_token = rule.per_token_delay_s.unwrap_or(0.0);
        if prefill > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(prefill)).await;
        }
        if per_token > 0.0 && tokens > 0 {
            tokio::time::sleep(Duration::from_secs_f64(per_token * tokens as f64)).await;
        }

        Ok(GenerateResult { text, prefill_s: Some(prefill), gen_s_per_tok: per_token, tokens })
    }

    fn call_log(&self) -> Vec<LoggedCall> {
        self.log.snapshot()
    }

    fn reset_log(&self) {
        self.log.clear();
    }
}
