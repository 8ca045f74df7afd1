//! Per-family tool-call syntax: how tools are described to the model and how
//! a call is recognized in its output.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ToolCall, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolSyntax {
    /// The server's structured `tools` / `tool_calls` fields.
    Native,
    /// `<tool_call>{"name": .., "arguments": ..}</tool_call>` (Qwen).
    Hermes,
    /// Bare `{"name": .., "parameters": ..}`, optionally after `<|python_tag|>` (Llama 3.x).
    Llama3Json,
}

fn function_json(spec: &ToolSpec) -> Value {
    serde_json::json!({
        "type": "function",
        "function": {
            "name": spec.name,
            "description": spec.description,
            "parameters": spec.parameters,
        }
    })
}

impl ToolSyntax {
    /// System-prompt text that describes the tools, for syntaxes that expose
    /// tools through the prompt. `None` for [`ToolSyntax::Native`].
    pub fn system_prompt(self, tools: &[ToolSpec]) -> Option<String> {
        let specs: Vec<String> = tools.iter().map(|t| function_json(t).to_string()).collect();
        match self {
            ToolSyntax::Native => None,
            ToolSyntax::Hermes => Some(format!(
                "# Tools\n\nYou may call one or more functions to assist with the user query.\n\n\
                 You are provided with function signatures within <tools></tools> XML tags:\n\
                 <tools>\n{}\n</tools>\n\n\
                 For each function call, return a json object with function name and arguments \
                 within <tool_call></tool_call> XML tags:\n\
                 <tool_call>\n{{\"name\": <function-name>, \"arguments\": <args-json-object>}}\n</tool_call>",
                specs.join("\n")
            )),
            ToolSyntax::Llama3Json => Some(format!(
                "You have access to the following functions. To call a function, respond with \
                 JSON for a function call in the format {{\"name\": function name, \"parameters\": \
                 dictionary of argument name and its value}}. Do not use variables.\n\n{}",
                specs.join("\n\n")
            )),
        }
    }

    /// Recognizes a tool call in raw generated text.
    pub fn parse_call(self, text: &str) -> Option<ToolCall> {
        match self {
            ToolSyntax::Native => None,
            ToolSyntax::Hermes => {
                let start = text.find("<tool_call>")? + "<tool_call>".len();
                let rest = &text[start..];
                let body = rest.find("</tool_call>").map_or(rest, |end| &rest[..end]);
                call_from_json(body.trim(), "arguments")
            }
            ToolSyntax::Llama3Json => {
                let body = text.trim();
                let body = body.strip_prefix("<|python_tag|>").unwrap_or(body).trim();
                if !body.starts_with('{') {
                    return None;
                }
                call_from_json(body, "parameters").or_else(|| call_from_json(body, "arguments"))
            }
        }
    }
}

fn call_from_json(body: &str, args_key: &str) -> Option<ToolCall> {
    let v: Value = serde_json::from_str(body).ok()?;
    let name = v.get("name")?.as_str()?.to_string();
    let arguments = match v.get(args_key)? {
        // Some models emit the arguments object as an encoded string.
        Value::String(s) => serde_json::from_str(s).unwrap_or(Value::String(s.clone())),
        other => other.clone(),
    };
    Some(ToolCall { name, arguments })
}
