//! Model-adaptive tool necessity: a sample is tool-unnecessary for a model
//! only if the model answers it correctly in every one of N no-tool runs.

use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{complete_with_retry, Backend, ChatMessage, CompletionRequest, Purpose, RequestTag, RetryPolicy};
use crate::corpus::{option_letter, Domain, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    /// Number of independent no-tool runs (N).
    pub runs: usize,
    /// Sampling temperature (T).
    pub temperature: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            runs: 10,
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub response: String,
    pub graded_correct: bool,
    /// Judge output, verbatim, when an external judge graded the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
}

pub(crate) mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityRecord {
    pub model_id: String,
    pub sample_id: String,
    pub runs: Vec<Run>,
    /// Necessity label: 1 if any run was graded incorrect.
    #[serde(with = "bit")]
    pub n: bool,
    pub params: LabelParams,
}

impl NecessityRecord {
    pub fn from_runs(
        model_id: impl Into<String>,
        sample_id: impl Into<String>,
        runs: Vec<Run>,
        params: LabelParams,
    ) -> Self {
        let n = runs.iter().any(|r| !r.graded_correct);
        NecessityRecord {
            model_id: model_id.into(),
            sample_id: sample_id.into(),
            runs,
            n,
            params,
        }
    }

    /// Checks the record against its own runs.
    pub fn is_consistent(&self) -> bool {
        self.runs.len() == self.params.runs && self.n == self.runs.iter().any(|r| !r.graded_correct)
    }

    /// Whether every run was correct; the per-model correctness used for
    /// boundary ordering.
    pub fn all_correct(&self) -> bool {
        !self.n
    }
}

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-−]?\d{1,3}(?:,\d{3})+\b|[-−]?\d+").unwrap());

/// Extracts the last integer literal in `response`. Accepts a leading sign
/// (`-` or `−`) and comma thousands separators. A minus directly after a
/// digit, letter or `)` is read as subtraction, not as a sign.
pub fn last_integer(response: &str) -> Option<i64> {
    let m = INTEGER.find_iter(response).last()?;
    let mut lit = m.as_str();
    let preceding = response[..m.start()].chars().next_back();
    let signed = lit.starts_with('-') || lit.starts_with('−');
    if signed && preceding.is_some_and(|c| c.is_alphanumeric() || c == ')') {
        lit = lit.trim_start_matches(['-', '−']);
    }
    let negative = lit.starts_with('-') || lit.starts_with('−');
    let digits: String = lit.chars().filter(char::is_ascii_digit).collect();
    let value: i64 = digits.parse().ok()?;
    Some(if negative { -value } else { value })
}

pub fn grade_arithmetic(response: &str, truth: i64) -> bool {
    last_integer(response) == Some(truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradingMode {
    ChoiceMatch,
    ReferenceMatch,
    ExternalJudge,
}

static ANSWER_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\banswer(?:\s+is)?\s*[:\-]?\s*\(?([A-Za-z])\)?(?:[\s.):,]|$)").unwrap());
static LEADING_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(?([A-Z])\)?(?:[\s.):,]|$)").unwrap());

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Index of the option a response selects, from a leading letter, an
/// "answer is X" phrase, or an exact restatement of one option's text.
pub fn selected_option(response: &str, choices: &[String]) -> Option<usize> {
    let trimmed = response.trim();
    let letter = LEADING_LETTER
        .captures(trimmed)
        .or_else(|| ANSWER_IS.captures(trimmed))
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().to_ascii_uppercase());
    if let Some(l) = letter {
        let idx = (0..choices.len()).find(|&i| option_letter(i).map(String::from) == Some(l.clone()));
        if idx.is_some() {
            return idx;
        }
    }
    let norm = normalize(trimmed);
    let mut hits = choices.iter().enumerate().filter(|(_, c)| normalize(c) == norm);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}

/// Whether the normalized response contains any normalized reference answer
/// as a whole-word span.
pub fn reference_match(response: &str, references: &[String]) -> bool {
    let resp = format!(" {} ", normalize(response));
    references
        .iter()
        .map(|r| normalize(r))
        .filter(|r| !r.is_empty())
        .any(|r| resp.contains(&format!(" {r} ")))
}

/// An external grader for free-form factual answers.
pub trait Judge: Send + Sync {
    /// Returns the judge's verdict text verbatim.
    fn judge(&self, sample: &Sample, response: &str) -> Result<String>;
}

/// Reads a verdict: correct iff it starts with "correct" (case-insensitive).
pub fn verdict_is_correct(verdict: &str) -> bool {
    normalize(verdict).starts_with("correct")
}

/// A judge backed by another chat model.
pub struct BackendJudge<B> {
    pub backend: B,
    pub retry: RetryPolicy,
}

impl<B: Backend> Judge for BackendJudge<B> {
    fn judge(&self, sample: &Sample, response: &str) -> Result<String> {
        let refs = sample.answer.references().join("; ");
        let question = sample.query.as_deref().unwrap_or(&sample.prompt);
        let prompt = format!(
            "Question: {question}\nReference answers: {refs}\nResponse: {response}\n\n\
             Is the response correct with respect to the reference answers? \
             Reply with exactly one word: correct or incorrect."
        );
        let mut req = CompletionRequest::greedy(vec![ChatMessage::user(prompt)]);
        req.tag = Some(RequestTag {
            sample_id: sample.id.clone(),
            run: 0,
            purpose: Purpose::Judge,
        });
        Ok(complete_with_retry(&self.backend, &req, self.retry)?.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graded {
    pub correct: bool,
    pub verdict: Option<String>,
}

/// Grades a factual response. Fails only when the external judge cannot be
/// reached, which makes the run ungradable.
pub fn grade_factual(response: &str, sample: &Sample, mode: GradingMode, judge: Option<&dyn Judge>) -> Result<Graded> {
    match mode {
        GradingMode::ChoiceMatch => {
            let (Some(choices), Some(k)) = (&sample.choices, sample.correct_choice) else {
                return Err(Error::Config(format!(
                    "choice-match grading needs a multiple-choice sample; `{}` has no options",
                    sample.id
                )));
            };
            Ok(Graded {
                correct: selected_option(response, choices) == Some(k),
                verdict: None,
            })
        }
        GradingMode::ReferenceMatch => Ok(Graded {
            correct: reference_match(response, sample.answer.references()),
            verdict: None,
        }),
        GradingMode::ExternalJudge => {
            let judge = judge.ok_or_else(|| Error::Config("external-judge grading without a judge".into()))?;
            let verdict = judge.judge(sample, response)?;
            Ok(Graded {
                correct: verdict_is_correct(&verdict),
                verdict: Some(verdict),
            })
        }
    }
}

/// Grading configuration for one labeling pass.
#[derive(Clone, Copy)]
pub struct Grader<'a> {
    pub mode: GradingMode,
    pub judge: Option<&'a dyn Judge>,
}

impl<'a> Grader<'a> {
    pub fn new(mode: GradingMode) -> Self {
        Grader { mode, judge: None }
    }

    pub fn with_judge(mode: GradingMode, judge: &'a dyn Judge) -> Self {
        Grader {
            mode,
            judge: Some(judge),
        }
    }

    pub fn grade(&self, sample: &Sample, response: &str) -> Result<Graded> {
        match sample.domain {
            Domain::Arithmetic => {
                let truth = sample
                    .answer
                    .integer()
                    .ok_or_else(|| Error::InvalidInput(format!("sample `{}` has no integer answer", sample.id)))?;
                Ok(Graded {
                    correct: grade_arithmetic(response, truth),
                    verdict: None,
                })
            }
            Domain::Factual => grade_factual(response, sample, self.mode, self.judge),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteLabel {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelOutcome {
    Complete(NecessityRecord),
    Incomplete(IncompleteLabel),
}

/// Runs N no-tool completions of `sample` and grades each.
///
/// A run that still fails after retries, or cannot be graded, makes the
/// whole record incomplete; configuration errors are returned as `Err`.
pub fn label_necessity<B: Backend + ?Sized>(
    backend: &B,
    sample: &Sample,
    params: LabelParams,
    grader: Grader<'_>,
    retry: RetryPolicy,
) -> Result<LabelOutcome> {
    if params.runs == 0 {
        return Err(Error::InvalidInput("labeling needs at least one run".into()));
    }
    if params.temperature < 0.0 || !params.temperature.is_finite() {
        return Err(Error::InvalidInput("temperature must be non-negative".into()));
    }
    let mut runs = Vec::with_capacity(params.runs);
    for run in 0..params.runs {
        let request = CompletionRequest {
            messages: vec![ChatMessage::user(&sample.prompt)],
            temperature: params.temperature,
            tools: None,
            capture_decision: false,
            tag: Some(RequestTag {
                sample_id: sample.id.clone(),
                run,
                purpose: Purpose::Label,
            }),
        };
        let incomplete = |e: Error| {
            Ok(LabelOutcome::Incomplete(IncompleteLabel {
                sample_id: sample.id.clone(),
                reason: format!("run {run}: {e}"),
            }))
        };
        let completion = match complete_with_retry(backend, &request, retry) {
            Ok(c) => c,
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => return incomplete(e),
        };
        let graded = match grader.grade(sample, &completion.text) {
            Ok(g) => g,
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => return incomplete(e),
        };
        runs.push(Run {
            response: completion.text,
            graded_correct: graded.correct,
            verdict: graded.verdict,
        });
    }
    Ok(LabelOutcome::Complete(NecessityRecord::from_runs(
        backend.model_id(),
        &sample.id,
        runs,
        params,
    )))
}

#[derive(Debug, Default)]
pub struct Labeled {
    pub records: Vec<NecessityRecord>,
    pub incomplete: Vec<IncompleteLabel>,
}

/// Labels every sample, in parallel on the current rayon pool; outputs keep
/// corpus order.
pub fn label_all<B: Backend + ?Sized>(
    backend: &B,
    samples: &[Sample],
    params: LabelParams,
    grader: Grader<'_>,
    retry: RetryPolicy,
) -> Result<Labeled> {
    let outcomes: Vec<LabelOutcome> = samples
        .par_iter()
        .map(|s| label_necessity(backend, s, params, grader, retry))
        .collect::<Result<_>>()?;
    let mut out = Labeled::default();
    for o in outcomes {
        match o {
            LabelOutcome::Complete(r) => out.records.push(r),
            LabelOutcome::Incomplete(i) => out.incomplete.push(i),
        }
    }
    if !out.incomplete.is_empty() {
        log::warn!(
            "{} sample(s) could not be labeled and are excluded downstream",
            out.incomplete.len()
        );
    }
    Ok(out)
}
