//! HTTP client for chat-style omni-model endpoints.
//!
//! The wire schema is a fixed canonical chat JSON: a system string carrying
//! the role prompt and a user content array of typed parts
//! (`"text" | "audio" | "video" | "image"`). Providers that spell part types
//! differently can be adapted through `part_type_names`; the internal schema
//! never changes.
//!
//! Auth tokens are read from the environment variable named in the config
//! and are never stored in config files or printed by this module.

use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{whitespace_tokens, BackendError, CallLog, DecodingParams, GenerateResult, LoggedCall, ModelClient};
use crate::types::{MessageComposition, MessagePart, ModalityKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default)]
    pub retries: u32,
    /// Stream the response to measure time-to-first-byte as prefill time.
    /// Without streaming, prefill is reported as unavailable.
    #[serde(default)]
    pub stream: bool,
    /// Optional remap of canonical part type names per provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part_type_names: Option<HashMap<String, String>>,
}

fn default_timeout_s() -> f64 {
    60.0
}

pub struct HttpClient {
    cfg: HttpConfig,
    auth_header: Option<String>,
    http: reqwest::Client,
    log: CallLog,
}

impl fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("auth", &self.auth_header.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpClient {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        if cfg.timeout_s <= 0.0 {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        let auth_header = match &cfg.auth_env {
            Some(var) => {
                let token = std::env::var(var).map_err(|_| BackendError::MissingAuth(var.clone()))?;
                Some(format!("Bearer {token}"))
            }
            None => None,
        };
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpClient { cfg, auth_header, http, log: CallLog::default() })
    }

    fn part_type(&self, canonical: &str) -> String {
        self.cfg
            .part_type_names
            .as_ref()
            .and_then(|m| m.get(canonical).cloned())
            .unwrap_or_else(|| canonical.to_string())
    }

    fn render_parts(&self, composition: &MessageComposition) -> Vec<Value> {
        composition
            .parts
            .iter()
            .map(|part| match part {
                MessagePart::Text(t) => json!({"type": self.part_type("text"), "text": t}),
                MessagePart::Media(m) => {
                    let canonical = match m.kind {
                        ModalityKind::Audio => "audio",
                        ModalityKind::Video => "video",
                        ModalityKind::Images => "image",
                    };
                    let mut media = json!({"source": m.source, "refs": m.refs});
                    if let Some(span) = m.span {
                        media["start_s"] = json!(span.start_s);
                        media["end_s"] = json!(span.end_s);
                    }
                    json!({"type": self.part_type(canonical), "media": media})
                }
            })
            .collect()
    }

    fn request_body(&self, composition: &MessageComposition, params: &DecodingParams) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": params.temperature,
            "seed": params.seed,
            "max_tokens": params.max_tokens,
            "stream": self.cfg.stream,
            "messages": [
                {"role": "system", "content": composition.role_prompt},
                {"role": "user", "content": self.render_parts(composition)},
            ],
        })
    }

    async fn attempt(&self, body: &Value) -> Result<GenerateResult, (bool, BackendError)> {
        let started = Instant::now();
        let timeout = Duration::from_secs_f64(self.cfg.timeout_s);
        let mut req = self.http.post(&self.cfg.endpoint).json(body).timeout(timeout);
        if let Some(auth) = &self.auth_header {
            req = req.header(reqwest::header::AUTHORIZATION, auth.as_str());
        }

        // No response received yet: connect and timeout failures are safe to retry.
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                (true, BackendError::Timeout(self.cfg.timeout_s))
            } else {
                (true, BackendError::Transport(e.to_string()))
            }
        })?;

        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error();
            let detail = resp.text().await.unwrap_or_default();
            let msg = format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>());
            return Err((retryable, BackendError::Transport(msg)));
        }

        // A success response has begun; from here on nothing is retried.
        if self.cfg.stream {
            self.read_streamed(resp, started).await.map_err(|e| (false, e))
        } else {
            let text = resp
                .text()
                .await
                .map_err(|e| (false, BackendError::Transport(format!("response interrupted: {e}"))))?;
            let elapsed = started.elapsed().as_secs_f64();
            let (content, usage_tokens) = parse_chat_body(&text)?;
            let tokens = usage_tokens.unwrap_or_else(|| whitespace_tokens(&content)).max(1);
            Ok(GenerateResult {
                text: content,
                prefill_s: None,
                gen_s_per_tok: elapsed / tokens as f64,
                tokens,
            })
        }
    }

    async fn read_streamed(&self, mut resp: reqwest::Response, started: Instant) -> Result<GenerateResult, BackendError> {
        let mut prefill: Option<f64> = None;
        let mut buffer = String::new();
        let mut content = String::new();
        let mut usage_tokens: Option<u64> = None;

        while let Some(chunk) = resp
            .chunk()
            .await
            .map_err(|e| BackendError::Transport(format!("stream interrupted: {e}")))?
        {
            if prefill.is_none() {
                prefill = Some(started.elapsed().as_secs_f64());
            }
            buffer.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(pos) = buffer.find('\n') {
                let line = buffer[..pos].trim().to_string();
                buffer.drain(..=pos);
                let Some(data) = line.strip_prefix("data:").map(str::trim) else { continue };
                if data == "[DONE]" {
                    continue;
                }
                let Ok(value) = serde_json::from_str::<Value>(data) else {
                    return Err(BackendError::MalformedResponse(format!("bad stream event: {data}")));
                };
                if let Some(delta) = value
                    .pointer("/choices/0/delta/content")
                    .and_then(Value::as_str)
                {
                    content.push_str(delta);
                }
                if let Some(n) = value.pointer("/usage/completion_tokens").and_then(Value::as_u64) {
                    usage_tokens = Some(n);
                }
            }
        }

        if content.is_empty() && usage_tokens.is_none() {
            return Err(BackendError::MalformedResponse("stream carried no content".into()));
        }
        let elapsed = started.elapsed().as_secs_f64();
        let prefill_s = prefill.unwrap_or(elapsed);
        let tokens = usage_tokens.unwrap_or_else(|| whitespace_tokens(&content)).max(1);
        Ok(GenerateResult {
            text: content,
            prefill_s: Some(prefill_s),
            gen_s_per_tok: (elapsed - prefill_s).max(0.0) / tokens as f64,
            tokens,
        })
    }
}

/// Extract the assistant text and usage count from a chat completion body.
fn parse_chat_body(body: &str) -> Result<(String, Option<u64>), (bool, BackendError)> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| (false, BackendError::MalformedResponse(format!("invalid JSON: {e}"))))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            (false, BackendError::MalformedResponse("missing choices[0].message.content".into()))
        })?
        .to_string();
    let usage = value.pointer("/usage/completion_tokens").and_then(Value::as_u64);
    Ok((content, usage))
}

#[async_trait]
impl ModelClient for HttpClient {
    async fn generate(
        &self,
        composition: &MessageComposition,
        params: &DecodingParams,
    ) -> Result<GenerateResult, BackendError> {
        self.log.record(composition);
        let body = self.request_body(composition, params);
        let mut last_err = BackendError::Transport("no attempts made".into());
        for _attempt in 0..=self.cfg.retries {
            match self.attempt(&body).await {
                Ok(result) => return Ok(result),
                Err((retryable, err)) => {
                    if !retryable {
                        return Err(err);
                    }
                    last_err = err;
                }
            }
        }
        Err(last_err)
    }

    fn call_log(&self) -> Vec<LoggedCall> {
        self.log.snapshot()
    }

    fn reset_log(&self) {
        self.log.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{MediaPart, Stage, TimeSpan};

    fn cfg(endpoint: &str) -> HttpConfig {
        HttpConfig {
            endpoint: endpoint.into(),
            model: "test-model".into(),
            auth_env: None,
            timeout_s: 5.0,
            retries: 0,
            stream: false,
            part_type_names: None,
        }
    }

    #[test]
    fn missing_auth_env_fails_eagerly() {
        let mut config = cfg("http://127.0.0.1:1/v1/chat");
        config.auth_env = Some("OMNIROUTE_TEST_TOKEN_THAT_DOES_NOT_EXIST".into());
        let err = HttpClient::new(config).unwrap_err();
        assert!(matches!(err, BackendError::MissingAuth(_)));
    }

    #[test]
    fn debug_output_redacts_the_token() {
        std::env::set_var("OMNIROUTE_TEST_TOKEN", "super-secret-token");
        let mut config = cfg("http://127.0.0.1:1/v1/chat");
        config.auth_env = Some("OMNIROUTE_TEST_TOKEN".into());
        let client = HttpClient::new(config).unwrap();
        let rendered = format!("{client:?}");
        assert!(!rendered.contains("super-secret-token"));
        assert!(rendered.contains("redacted"));
    }

    #[test]
    fn canonical_parts_render_typed_entries_with_remap() {
        let mut config = cfg("http://127.0.0.1:1/v1/chat");
        config.part_type_names = Some(HashMap::from([("audio".to_string(), "input_audio".to_string())]));
        let client = HttpClient::new(config).unwrap();
        let comp = MessageComposition::new(
            Stage::Decide,
            "p",
            vec![
                MessagePart::Media(MediaPart {
                    kind: ModalityKind::Audio,
                    source: "a.wav".into(),
                    span: Some(TimeSpan::new(0.0, 2.0)),
                    refs: vec![],
                }),
                MessagePart::Text("q".into()),
            ],
        )
        .unwrap();
        let body = client.request_body(&comp, &DecodingParams::default());
        let parts = body.pointer("/messages/1/content").unwrap().as_array().unwrap();
        assert_eq!(parts[0]["type"], "input_audio");
        assert_eq!(parts[0]["media"]["start_s"], 0.0);
        assert_eq!(parts[1]["type"], "text");
        assert_eq!(body["stream"], false);
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn chat_body_parse_requires_content() {
        let ok = parse_chat_body(r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"completion_tokens":7}}"#);
        assert_eq!(ok.unwrap(), ("hi".to_string(), Some(7)));
        assert!(parse_chat_body(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_body("not json").is_err());
    }
}
