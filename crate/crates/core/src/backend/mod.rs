//! Language-model inference surface: sampled and greedy completion, tool
//! exposure and decision-point next-token probabilities.

mod http;
mod mock;
mod syntax;
mod tools;
mod trigger;

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, ScriptLine};
pub use syntax::ToolSyntax;
pub use tools::{run_tool, Calculator, Search, ToolHandler, Toolbox, NO_RESULTS};
pub use trigger::{detect_tool_trigger, ModelFamily, TriggerDecision, TriggerTokens};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self::text(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::text(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::text(Role::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::text(Role::Tool, content)
    }

    fn text(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
            tool_call: None,
        }
    }
}

/// Tool description as exposed to the model: a name, a description and a
/// JSON-schema object for its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Label,
    Collect,
    VerbalAssess,
    VerbalAnswer,
    Judge,
}

/// Identifies which pipeline step a request belongs to. Real backends ignore
/// it; the mock backend uses it to look up its script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub sample_id: String,
    pub run: usize,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    /// 0 means greedy decoding.
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolSpec>>,
    /// Ask for next-token probabilities at the first generated position.
    #[serde(default)]
    pub capture_decision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<RequestTag>,
}

impl CompletionRequest {
    pub fn greedy(messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            messages,
            temperature: 0.0,
            tools: None,
            capture_decision: false,
            tag: None,
        }
    }
}

/// Probabilities at the position where a tool call would begin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p_tool: f64,
    pub p_best_nontool: f64,
}

impl Decision {
    pub fn new(p_tool: f64, p_best_nontool: f64) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(p_tool) || !ok(p_best_nontool) || p_tool + p_best_nontool > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "decision probabilities ({p_tool}, {p_best_nontool}) are not a valid split"
            )));
        }
        Ok(Decision { p_tool, p_best_nontool })
    }

    /// Whether the trigger token wins the greedy argmax; ties go to the
    /// non-tool token.
    pub fn is_tool_argmax(&self) -> bool {
        self.p_tool > self.p_best_nontool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 250,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            base_delay_ms: 0,
        }
    }
}

/// Calls `backend.complete`, retrying transport errors with exponential
/// backoff. Other errors are returned immediately.
pub fn complete_with_retry<B: Backend + ?Sized>(
    backend: &B,
    request: &CompletionRequest,
    policy: RetryPolicy,
) -> Result<Completion> {
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Err(e) if e.is_retryable() && attempt < policy.max_retries => {
                let delay = policy.base_delay_ms.saturating_mul(1 << attempt.min(16));
                log::debug!("retrying after transport error ({e}); sleeping {delay} ms");
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    impl Backend for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _: &CompletionRequest) -> Result<Completion> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(Error::Transport("connection reset".into()))
            } else {
                Ok(Completion {
                    text: "ok".into(),
                    tool_call: None,
                    decision: None,
                })
            }
        }
    }

    #[test]
    fn retries_transport_errors_up_to_limit() {
        let req = CompletionRequest::greedy(vec![ChatMessage::user("hi")]);
        let policy = RetryPolicy {
            max_retries: 2,
            base_delay_ms: 0,
        };
        let b = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
        };
        assert_eq!(complete_with_retry(&b, &req, policy).unwrap().text, "ok");
        let b = Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
        };
        assert!(complete_with_retry(&b, &req, policy).unwrap_err().is_retryable());
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn decision_validation_and_tie_rule() {
        assert!(Decision::new(0.6, 0.5).is_err());
        assert!(Decision::new(-0.1, 0.5).is_err());
        assert!(Decision::new(0.3, 0.1).unwrap().is_tool_argmax());
        assert!(!Decision::new(0.2, 0.2).unwrap().is_tool_argmax());
    }
}
