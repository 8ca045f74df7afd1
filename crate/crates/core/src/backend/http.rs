//! Blocking client for OpenAI-style `/chat/completions` servers (vLLM,
//! llama.cpp, SGLang, ...) with optional per-token log-probabilities.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Backend, ChatMessage, Completion, CompletionRequest, Decision, ModelFamily, Role, ToolCall, ToolSyntax,
    TriggerTokens,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    /// Model name sent in the request body.
    pub model: String,
    pub family: ModelFamily,
    /// Overrides the family's built-in trigger tokens when set.
    #[serde(default)]
    pub triggers: Option<TriggerTokens>,
    #[serde(default)]
    pub tool_syntax: Option<ToolSyntax>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_top_logprobs() -> u32 {
    20
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    pub fn triggers(&self) -> TriggerTokens {
        self.triggers
            .clone()
            .unwrap_or_else(|| TriggerTokens::for_family(self.family))
    }
}

pub struct HttpBackend {
    model_id: String,
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(model_id: impl Into<String>, config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(HttpBackend {
            model_id: model_id.into(),
            config,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    }
}

/// Builds the JSON request body. Fails if tools are requested but no
/// tool-syntax adapter is configured.
pub(crate) fn request_body(config: &HttpConfig, request: &CompletionRequest) -> Result<Value> {
    let tools = request.tools.as_deref().filter(|t| !t.is_empty());
    let syntax = match (tools, config.tool_syntax) {
        (Some(_), None) => {
            return Err(Error::Config(format!(
                "no tool-syntax adapter configured for model family {}",
                config.family
            )))
        }
        (_, s) => s,
    };

    let mut messages: Vec<ChatMessage> = request.messages.clone();
    if let (Some(tools), Some(syntax)) = (tools, syntax) {
        if let Some(text) = syntax.system_prompt(tools) {
            match messages.first_mut() {
                Some(m) if m.role == Role::System => {
                    m.content = format!("{}\n\n{text}", m.content);
                }
                _ => messages.insert(0, ChatMessage::system(text)),
            }
        }
    }
    let native = syntax == Some(ToolSyntax::Native);

    let mut call_index = 0usize;
    let wire: Vec<Value> = messages
        .iter()
        .map(|m| match (&m.tool_call, m.role) {
            (Some(call), Role::Assistant) if native => {
                call_index += 1;
                json!({
                    "role": "assistant",
                    "content": if m.content.is_empty() { Value::Null } else { Value::String(m.content.clone()) },
                    "tool_calls": [{
                        "id": format!("call_{}", call_index - 1),
                        "type": "function",
                        "function": {"name": call.name, "arguments": call.arguments.to_string()},
                    }],
                })
            }
            (_, Role::Tool) if native => json!({
                "role": "tool",
                "tool_call_id": format!("call_{}", call_index.saturating_sub(1)),
                "content": m.content,
            }),
            _ => json!({"role": role_name(m.role), "content": m.content}),
        })
        .collect();

    let mut body = json!({
        "model": config.model,
        "messages": wire,
        "temperature": request.temperature,
    });
    if let Some(max) = config.max_tokens {
        body["max_tokens"] = json!(max);
    }
    if let (Some(tools), true) = (tools, native) {
        body["tools"] = Value::Array(
            tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                    })
                })
                .collect(),
        );
    }
    if request.capture_decision {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(config.top_logprobs);
    }
    Ok(body)
}

/// Reads the first choice of a chat-completions response.
pub(crate) fn parse_response(config: &HttpConfig, request: &CompletionRequest, v: &Value) -> Result<Completion> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Protocol("response has no choices".into()))?;
    let message = choice
        .get("message")
        .ok_or_else(|| Error::Protocol("choice has no message".into()))?;
    let text = message.get("content").and_then(Value::as_str).unwrap_or("").to_string();

    let mut tool_call = None;
    if let Some(f) = message
        .get("tool_calls")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("function"))
    {
        let name = f
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol("tool call without a function name".into()))?;
        let arguments = match f.get("arguments") {
            Some(Value::String(s)) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
            Some(other) => other.clone(),
            None => Value::Object(Default::default()),
        };
        tool_call = Some(ToolCall {
            name: name.to_string(),
            arguments,
        });
    }
    let tools_offered = request.tools.as_ref().is_some_and(|t| !t.is_empty());
    if tool_call.is_none() && tools_offered {
        if let Some(syntax) = config.tool_syntax {
            tool_call = syntax.parse_call(&text);
        }
    }

    let decision = if request.capture_decision {
        decision_from_logprobs(&config.triggers(), choice.get("logprobs"))?
    } else {
        None
    };
    if request.capture_decision && decision.is_none() {
        log::warn!("decision capture requested but the response carries no log-probabilities");
    }

    Ok(Completion {
        text,
        tool_call,
        decision,
    })
}

/// Derives trigger vs. best non-trigger probabilities from the first
/// generated position's top log-probs. A trigger outside the returned top-k
/// counts as probability 0.
fn decision_from_logprobs(triggers: &TriggerTokens, logprobs: Option<&Value>) -> Result<Option<Decision>> {
    let Some(first) = logprobs.and_then(|l| l.get("content")).and_then(|c| c.get(0)) else {
        return Ok(None);
    };
    let mut candidates: Vec<(&str, f64)> = Vec::new();
    if let (Some(tok), Some(lp)) = (
        first.get("token").and_then(Value::as_str),
        first.get("logprob").and_then(Value::as_f64),
    ) {
        candidates.push((tok, lp));
    }
    if let Some(top) = first.get("top_logprobs").and_then(Value::as_array) {
        for entry in top {
            if let (Some(tok), Some(lp)) = (
                entry.get("token").and_then(Value::as_str),
                entry.get("logprob").and_then(Value::as_f64),
            ) {
                candidates.push((tok, lp));
            }
        }
    }
    if candidates.is_empty() {
        return Ok(None);
    }
    let mut p_tool: f64 = 0.0;
    let mut p_best: f64 = 0.0;
    for (tok, lp) in candidates {
        let p = lp.exp().clamp(0.0, 1.0);
        if triggers.matches_text(tok) {
            p_tool = p_tool.max(p);
        } else {
            p_best = p_best.max(p);
        }
    }
    // Rounding in reported log-probs can push the pair marginally above 1.
    let sum = p_tool + p_best;
    if sum > 1.0 {
        p_tool /= sum;
        p_best /= sum;
    }
    Decision::new(p_tool, p_best).map(Some)
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        let body = request_body(&self.config, request)?;
        let mut req = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("invalid JSON body: {e}")))?;
        parse_response(&self.config, request, &v)
    }
}
