//! Scripted backend: answers, tool calls and decision probabilities come from
//! a per-sample script instead of a model.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, Completion, CompletionRequest, Decision, Purpose, Role, ToolCall};
use crate::corpus::{option_letter, Corpus, Domain, Sample};
use crate::error::{Error, Result};
use crate::io;

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub sample_id: String,
    /// Outcome of each no-tool labeling run, in run order.
    pub per_run_correct: Vec<bool>,
    /// Whether the greedy decode with tools exposed opens a tool call.
    pub calls_tool: bool,
    /// `[p_tool, p_best_nontool]` at the first generated position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<[f64; 2]>,
    /// Raw stage-one reply in the verbalized protocol; defaults to
    /// `"yes"`/`"no"` following `calls_tool`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbal: Option<String>,
    /// Call decision in the verbalized protocol's second stage; defaults to
    /// `calls_tool`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verbal_calls_tool: Option<bool>,
}

impl ScriptLine {
    pub fn load(path: &Path) -> Result<Vec<ScriptLine>> {
        io::read_jsonl(path)
    }

    /// Necessity the script implies: unnecessary only if every run is correct.
    pub fn necessary(&self) -> bool {
        !self.per_run_correct.iter().all(|&c| c)
    }
}

pub struct MockBackend {
    model_id: String,
    lines: HashMap<String, ScriptLine>,
    samples: HashMap<String, Sample>,
}

impl MockBackend {
    /// Validates the script against the corpus: every scripted sample must
    /// exist, and a scripted decision must agree with `calls_tool` under the
    /// greedy argmax rule.
    pub fn new(model_id: impl Into<String>, script: Vec<ScriptLine>, corpus: &Corpus) -> Result<Self> {
        let samples: HashMap<String, Sample> = corpus.samples.iter().map(|s| (s.id.clone(), s.clone())).collect();
        let mut lines = HashMap::with_capacity(script.len());
        for line in script {
            if !samples.contains_key(&line.sample_id) {
                return Err(Error::InvalidInput(format!(
                    "mock script names unknown sample `{}`",
                    line.sample_id
                )));
            }
            if let Some([p_tool, p_best]) = line.decision {
                let d = Decision::new(p_tool, p_best)?;
                if d.is_tool_argmax() != line.calls_tool {
                    return Err(Error::InvalidInput(format!(
                        "mock script for `{}`: calls_tool={} contradicts decision ({p_tool}, {p_best})",
                        line.sample_id, line.calls_tool
                    )));
                }
            }
            if lines.insert(line.sample_id.clone(), line).is_some() {
                return Err(Error::DuplicateId("duplicate sample in mock script".to_string()));
            }
        }
        Ok(MockBackend {
            model_id: model_id.into(),
            lines,
            samples,
        })
    }

    pub fn line(&self, sample_id: &str) -> Option<&ScriptLine> {
        self.lines.get(sample_id)
    }
}

fn answer_text(sample: &Sample, correct: bool) -> String {
    match (sample.domain, &sample.choices, sample.correct_choice) {
        (Domain::Arithmetic, _, _) => {
            let truth = sample.answer.integer().unwrap_or_default();
            let said = if correct { truth } else { truth.wrapping_add(1) };
            format!("The answer is {said}.")
        }
        (Domain::Factual, Some(choices), Some(k)) => {
            let pick = if correct { k } else { (k + 1) % choices.len() };
            option_letter(pick).map(String::from).unwrap_or_default()
        }
        (Domain::Factual, _, _) => {
            if correct {
                sample.answer.references().first().cloned().unwrap_or_default()
            } else {
                "I am not sure.".into()
            }
        }
    }
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        let tag = request
            .tag
            .as_ref()
            .ok_or_else(|| Error::Config("the mock backend needs tagged requests".into()))?;
        let line = self
            .lines
            .get(&tag.sample_id)
            .ok_or_else(|| Error::InvalidInput(format!("mock script has no line for `{}`", tag.sample_id)))?;
        let sample = &self.samples[&tag.sample_id];
        let text_only = |text: String| Completion {
            text,
            tool_call: None,
            decision: None,
        };

        match tag.purpose {
            Purpose::Label => {
                let correct = *line.per_run_correct.get(tag.run).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "mock script for `{}` has {} runs, run {} requested",
                        tag.sample_id,
                        line.per_run_correct.len(),
                        tag.run
                    ))
                })?;
                Ok(text_only(answer_text(sample, correct)))
            }
            Purpose::VerbalAssess => Ok(text_only(
                line.verbal
                    .clone()
                    .unwrap_or_else(|| if line.calls_tool { "yes" } else { "no" }.into()),
            )),
            Purpose::Collect | Purpose::VerbalAnswer => {
                if let Some(last) = request.messages.last().filter(|m| m.role == Role::Tool) {
                    return Ok(text_only(format!("The answer is {}.", last.content.trim())));
                }
                let calls = match tag.purpose {
                    Purpose::Collect => line.calls_tool,
                    _ => line.verbal_calls_tool.unwrap_or(line.calls_tool),
                };
                let decision = match (tag.purpose, request.capture_decision, line.decision) {
                    (Purpose::Collect, true, Some([p_tool, p_best])) => Some(Decision::new(p_tool, p_best)?),
                    _ => None,
                };
                let tool = request.tools.as_ref().and_then(|t| t.first());
                match (calls, tool) {
                    (true, Some(tool)) => {
                        let query = sample.query.clone().unwrap_or_else(|| sample.prompt.clone());
                        let arguments = if tool.name == "calculator" {
                            json!({ "expression": query })
                        } else {
                            json!({ "query": query })
                        };
                        Ok(Completion {
                            text: String::new(),
                            tool_call: Some(ToolCall {
                                name: tool.name.clone(),
                                arguments,
                            }),
                            decision,
                        })
                    }
                    _ => Ok(Completion {
                        text: answer_text(sample, !line.necessary()),
                        tool_call: None,
                        decision,
                    }),
                }
            }
            Purpose::Judge => Err(Error::Config("the mock backend cannot act as a judge".into())),
        }
    }
}
