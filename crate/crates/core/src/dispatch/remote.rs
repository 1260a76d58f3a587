//! Generic chat-completions client for remote providers.
//!
//! One request shape serves every provider: `model`, `messages`,
//! `temperature`, `top_p` and `max_tokens`, posted as JSON to the endpoint
//! configured on the expert. The credential is read from an environment
//! variable, `COUNCIL_<PROVIDER>_API_KEY` unless the expert config names another.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentRequest, ChatMessage, DeltaFn, ExpertAgent, ExpertSpec, ReasoningLevel};

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning_effort: Option<&'static str>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

pub fn default_key_env(provider: &str) -> String {
    let upper: String = provider
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("COUNCIL_{upper}_API_KEY")
}

pub struct ChatCompletionAgent {
    spec: ExpertSpec,
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::Client,
}

impl ChatCompletionAgent {
    /// Builds the agent from its spec, reading the credential from the
    /// environment. A missing endpoint is a configuration error.
    pub fn from_spec(spec: ExpertSpec) -> Result<Self, AgentError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| AgentError::Provider(format!("expert {} has no endpoint configured", spec.expert_id)))?;
        let key_env = spec.api_key_env.clone().unwrap_or_else(|| default_key_env(&spec.provider));
        let api_key = std::env::var(key_env).ok();
        Ok(Self { spec, endpoint, api_key, http: reqwest::Client::new() })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

fn reasoning_effort(level: ReasoningLevel) -> Option<&'static str> {
    match level {
        ReasoningLevel::Default => None,
        ReasoningLevel::Minimal => Some("minimal"),
        ReasoningLevel::High => Some("high"),
        ReasoningLevel::Maximum => Some("high"),
    }
}

#[async_trait]
impl ExpertAgent for ChatCompletionAgent {
    fn spec(&self) -> &ExpertSpec {
        &self.spec
    }

    async fn generate(&self, request: &AgentRequest, on_delta: Option<DeltaFn<'_>>) -> Result<String, AgentError> {
        let body = CompletionRequest {
            model: &self.spec.model_id,
            messages: &request.messages,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_new_tokens,
            reasoning_effort: reasoning_effort(request.params.reasoning_level),
        };
        let mut call = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().await.map_err(|e| AgentError::Provider(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let detail = response.text().await.unwrap_or_default();
            return Err(AgentError::Provider(format!("HTTP {status}: {detail}")));
        }
        let parsed: CompletionResponse = response.json().await.map_err(|e| AgentError::Malformed(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AgentError::Malformed("reply has no message content".into()))?;
        if let Some(emit) = on_delta {
            emit(&text);
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::GenerationParams;
    use axum::{http::HeaderMap, routing::post, Json, Router};
    use serde_json::{json, Value};

    async fn spawn_provider() -> String {
        async fn complete(headers: HeaderMap, Json(body): Json<Value>) -> (axum::http::StatusCode, Json<Value>) {
            if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer secret") {
                return (axum::http::StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})));
            }
            let echo = format!(
                "{}|{}|{}|{}|{}",
                body["model"].as_str().unwrap(),
                body["messages"].as_array().unwrap().len(),
                body["temperature"],
                body["top_p"],
                body["max_tokens"]
            );
            (axum::http::StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": echo}}]})))
        }
        let app = Router::new().route("/v1/chat/completions", post(complete));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        format!("http://{addr}/v1/chat/completions")
    }

    #[tokio::test]
    async fn sends_wire_fields_and_reads_reply() {
        let endpoint = spawn_provider().await;
        let mut spec = ExpertSpec::new("gpt", "openai", "gpt-5.4");
        spec.endpoint = Some(endpoint);
        let agent = ChatCompletionAgent::from_spec(spec).unwrap().with_api_key(Some("secret".into()));
        let params = GenerationParams { temperature: 0.5, top_p: 0.95, max_new_tokens: 4096, ..Default::default() };
        let reply = agent.generate(&AgentRequest::single("hello", params), None).await.unwrap();
        assert_eq!(reply, "gpt-5.4|1|0.5|0.95|4096");
    }

    #[tokio::test]
    async fn http_errors_become_provider_errors() {
        let endpoint = spawn_provider().await;
        let mut spec = ExpertSpec::new("gpt", "openai", "gpt-5.4");
        spec.endpoint = Some(endpoint);
        let agent = ChatCompletionAgent::from_spec(spec).unwrap().with_api_key(None);
        let err = agent.generate(&AgentRequest::single("hello", GenerationParams::default()), None).await;
        assert!(matches!(err, Err(AgentError::Provider(msg)) if msg.contains("401")));
    }

    #[test]
    fn key_env_naming() {
        assert_eq!(default_key_env("openai"), "COUNCIL_OPENAI_API_KEY");
        assert_eq!(default_key_env("byte-dance"), "COUNCIL_BYTE_DANCE_API_KEY");
        assert!(ChatCompletionAgent::from_spec(ExpertSpec::new("x", "p", "m")).is_err());
    }
}
