use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

use super::ToolSpec;
use crate::arith::evaluate;
use crate::error::Result;
use crate::io;

/// Returned by the search tool when no fixture matches.
pub const NO_RESULTS: &str = "[no results]";

pub trait ToolHandler: Send + Sync {
    fn spec(&self) -> ToolSpec;

    /// Runs the tool. `Err` carries a message to hand back to the model.
    fn execute(&self, arguments: &Value) -> std::result::Result<String, String>;
}

/// Runs a handler, turning argument or execution failures into an error
/// string for the model rather than a hard failure.
pub fn run_tool(handler: &dyn ToolHandler, arguments: &Value) -> String {
    match handler.execute(arguments) {
        Ok(out) => out,
        Err(msg) => format!("error: {msg}"),
    }
}

fn string_arg<'a>(arguments: &'a Value, key: &str) -> std::result::Result<&'a str, String> {
    match arguments {
        Value::String(s) => Ok(s),
        Value::Object(map) => map
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| format!("missing string argument `{key}`")),
        _ => Err(format!("arguments must be an object with `{key}`")),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Calculator;

impl ToolHandler for Calculator {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "calculator".into(),
            description: "Evaluate an integer arithmetic expression using + - * % and parentheses.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "expression": {"type": "string", "description": "The expression to evaluate"}
                },
                "required": ["expression"]
            }),
        }
    }

    fn execute(&self, arguments: &Value) -> std::result::Result<String, String> {
        let expr = string_arg(arguments, "expression")?;
        evaluate(expr).map(|v| v.to_string()).map_err(|e| e.to_string())
    }
}

/// Search over a fixed fixture store, keyed by query with case and
/// whitespace normalized.
#[derive(Debug, Clone, Default)]
pub struct Search {
    fixtures: BTreeMap<String, String>,
}

pub(crate) fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Search {
    pub fn new(fixtures: impl IntoIterator<Item = (String, String)>) -> Self {
        Search {
            fixtures: fixtures.into_iter().map(|(k, v)| (normalize_query(&k), v)).collect(),
        }
    }

    /// Loads a JSON object mapping query to snippet.
    pub fn from_file(path: &Path) -> Result<Self> {
        let map: BTreeMap<String, String> = io::read_json(path)?;
        Ok(Search::new(map))
    }

    pub fn lookup(&self, query: &str) -> &str {
        self.fixtures
            .get(&normalize_query(query))
            .map(String::as_str)
            .unwrap_or(NO_RESULTS)
    }
}

impl ToolHandler for Search {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "search".into(),
            description: "Search the web and return a short snippet.".into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Search query"}
                },
                "required": ["query"]
            }),
        }
    }

    fn execute(&self, arguments: &Value) -> std::result::Result<String, String> {
        let q = string_arg(arguments, "query")?;
        Ok(self.lookup(q).to_string())
    }
}

/// The tools exposed to a model in one collection run.
#[derive(Default)]
pub struct Toolbox {
    handlers: Vec<Box<dyn ToolHandler>>,
}

impl Toolbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, handler: impl ToolHandler + 'static) -> Self {
        self.handlers.push(Box::new(handler));
        self
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.handlers.iter().map(|h| h.spec()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.handlers.is_empty()
    }

    /// Dispatches a call by tool name; unknown names come back as an error
    /// message for the model.
    pub fn call(&self, name: &str, arguments: &Value) -> String {
        match self.handlers.iter().find(|h| h.spec().name == name) {
            Some(h) => run_tool(h.as_ref(), arguments),
            None => format!("error: unknown tool `{name}`"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calculator_evaluates() {
        let out = run_tool(&Calculator, &json!({"expression": "(67 + 68) * (52 - 88)"}));
        assert_eq!(out, "-4860");
    }

    #[test]
    fn calculator_rejects_division_without_panicking() {
        let out = run_tool(&Calculator, &json!({"expression": "1 / 0"}));
        assert!(out.starts_with("error:"), "{out}");
        let out = run_tool(&Calculator, &json!({"expr": "1 + 1"}));
        assert!(out.starts_with("error:"), "{out}");
    }

    #[test]
    fn search_normalizes_keys() {
        let s = Search::new([("Capital of France".to_string(), "Paris is the capital.".to_string())]);
        assert_eq!(
            run_tool(&s, &json!({"query": "  capital   of FRANCE "})),
            "Paris is the capital."
        );
        assert_eq!(run_tool(&s, &json!({"query": "capital of Spain"})), NO_RESULTS);
    }

    #[test]
    fn toolbox_dispatch() {
        let tb = Toolbox::new().with(Calculator).with(Search::default());
        assert_eq!(tb.specs().len(), 2);
        assert_eq!(tb.call("calculator", &json!({"expression": "2 * 3"})), "6");
        assert!(tb.call("browser", &json!({})).starts_with("error:"));
    }
}
