//! Greedy tool-call behavior with tools exposed, the four necessity x action
//! categories, P(call), and the verbalized yes/no self-assessment protocol.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    complete_with_retry, Backend, ChatMessage, CompletionRequest, Decision, Purpose, RequestTag, RetryPolicy, Toolbox,
};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::labeler::NecessityRecord;
use crate::metrics::{Confusion, Mcc};

/// Normalized probability of opening a tool call:
/// `p_tool / (p_tool + p_best_nontool)`.
pub fn p_call<F: Float>(p_tool: F, p_best_nontool: F) -> Result<F> {
    let in_unit = |p: F| p >= F::zero() && p <= F::one();
    if !in_unit(p_tool) || !in_unit(p_best_nontool) {
        return Err(Error::InvalidInput(
            "P(call) inputs must be probabilities in [0, 1]".into(),
        ));
    }
    let denom = p_tool + p_best_nontool;
    if denom.is_zero() {
        return Err(Error::InvalidInput(
            "P(call) undefined: tool and best non-tool probabilities are both zero".into(),
        ));
    }
    Ok(p_tool / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "N-C")]
    NecessaryCalled,
    #[serde(rename = "N-NC")]
    NecessaryNotCalled,
    #[serde(rename = "UN-C")]
    UnnecessaryCalled,
    #[serde(rename = "UN-NC")]
    UnnecessaryNotCalled,
}

impl Category {
    pub fn is_mismatch(self) -> bool {
        matches!(self, Category::NecessaryNotCalled | Category::UnnecessaryCalled)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::NecessaryCalled => "N-C",
            Category::NecessaryNotCalled => "N-NC",
            Category::UnnecessaryCalled => "UN-C",
            Category::UnnecessaryNotCalled => "UN-NC",
        })
    }
}

pub fn classify(necessary: bool, called: bool) -> Category {
    match (necessary, called) {
        (true, true) => Category::NecessaryCalled,
        (true, false) => Category::NecessaryNotCalled,
        (false, true) => Category::UnnecessaryCalled,
        (false, false) => Category::UnnecessaryNotCalled,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub model_id: String,
    pub sample_id: String,
    /// A tool call was opened at any decision point within the round cap.
    pub called: bool,
    /// A tool call was opened at the first generated position.
    pub first_position_call: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_call: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    pub tool_rounds: usize,
    /// The round cap was hit while the model still wanted a tool.
    #[serde(default)]
    pub truncated: bool,
    pub transcript: Vec<ChatMessage>,
    pub final_answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectParams {
    pub max_tool_rounds: usize,
    pub capture_decision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
}

impl Default for CollectParams {
    fn default() -> Self {
        CollectParams {
            max_tool_rounds: 3,
            capture_decision: true,
            system: None,
        }
    }
}

struct LoopOutcome {
    called: bool,
    first_position_call: bool,
    decision: Option<Decision>,
    tool_rounds: usize,
    truncated: bool,
    transcript: Vec<ChatMessage>,
    final_answer: String,
}

/// Greedy generation with tools until the model answers without a call or
/// the round cap is reached. Decision probabilities are taken at the first
/// position only.
fn tool_loop<B: Backend + ?Sized>(
    backend: &B,
    sample: &Sample,
    mut messages: Vec<ChatMessage>,
    tools: &Toolbox,
    params: &CollectParams,
    purpose: Purpose,
    retry: RetryPolicy,
) -> Result<LoopOutcome> {
    let specs = tools.specs();
    let mut out = LoopOutcome {
        called: false,
        first_position_call: false,
        decision: None,
        tool_rounds: 0,
        truncated: false,
        transcript: Vec::new(),
        final_answer: String::new(),
    };
    for step in 0.. {
        let request = CompletionRequest {
            messages: messages.clone(),
            temperature: 0.0,
            tools: (!specs.is_empty()).then(|| specs.clone()),
            capture_decision: params.capture_decision && step == 0,
            tag: Some(RequestTag {
                sample_id: sample.id.clone(),
                run: step,
                purpose,
            }),
        };
        let completion = complete_with_retry(backend, &request, retry)?;
        if step == 0 {
            out.decision = completion.decision;
            out.first_position_call = completion.tool_call.is_some();
        }
        match completion.tool_call {
            Some(call) => {
                out.called = true;
                if out.tool_rounds >= params.max_tool_rounds {
                    out.truncated = true;
                    messages.push(ChatMessage {
                        role: crate::backend::Role::Assistant,
                        content: completion.text,
                        tool_call: Some(call),
                    });
                    break;
                }
                let result = tools.call(&call.name, &call.arguments);
                messages.push(ChatMessage {
                    role: crate::backend::Role::Assistant,
                    content: completion.text,
                    tool_call: Some(call),
                });
                messages.push(ChatMessage::tool(result));
                out.tool_rounds += 1;
            }
            None => {
                out.final_answer = completion.text.clone();
                messages.push(ChatMessage::assistant(completion.text));
                break;
            }
        }
    }
    out.transcript = messages;
    Ok(out)
}

fn opening_messages(params: &CollectParams, user: String) -> Vec<ChatMessage> {
    let mut messages = Vec::new();
    if let Some(system) = &params.system {
        messages.push(ChatMessage::system(system.clone()));
    }
    messages.push(ChatMessage::user(user));
    messages
}

/// Collects the greedy tool-call behavior for one sample.
pub fn collect_behavior<B: Backend + ?Sized>(
    backend: &B,
    sample: &Sample,
    tools: &Toolbox,
    params: &CollectParams,
    retry: RetryPolicy,
) -> Result<BehaviorRecord> {
    let messages = opening_messages(params, sample.prompt.clone());
    let out = tool_loop(backend, sample, messages, tools, params, Purpose::Collect, retry)?;
    let p_call = out.decision.and_then(|d| match p_call(d.p_tool, d.p_best_nontool) {
        Ok(p) => Some(p),
        Err(e) => {
            log::warn!("{}: {e}", sample.id);
            None
        }
    });
    Ok(BehaviorRecord {
        model_id: backend.model_id().to_string(),
        sample_id: sample.id.clone(),
        called: out.called,
        first_position_call: out.first_position_call,
        p_call,
        decision: out.decision,
        tool_rounds: out.tool_rounds,
        truncated: out.truncated,
        transcript: out.transcript,
        final_answer: out.final_answer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectFailure {
    pub sample_id: String,
    pub reason: String,
}

/// Collects behavior for every sample in parallel; records keep input order.
/// Samples whose exchange fails are reported, not dropped silently.
pub fn collect_all<B: Backend + ?Sized>(
    backend: &B,
    samples: &[Sample],
    tools: &Toolbox,
    params: &CollectParams,
    retry: RetryPolicy,
) -> Result<(Vec<BehaviorRecord>, Vec<CollectFailure>)> {
    let results: Vec<Result<BehaviorRecord>> = samples
        .par_iter()
        .map(|s| collect_behavior(backend, s, tools, params, retry))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => failures.push(CollectFailure {
                sample_id: s.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok((records, failures))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub n_c: u64,
    pub n_nc: u64,
    pub un_c: u64,
    pub un_nc: u64,
}

/// Percentage of `count` in `total`, rounded half-up to one decimal, as text.
pub fn percent_one_decimal(count: u64, total: u64) -> String {
    let tenths = Ratio::new(count * 1000, total).round().to_integer();
    format!("{}.{}", tenths / 10, tenths % 10)
}

impl CategoryCounts {
    pub fn add(&mut self, c: Category) {
        match c {
            Category::NecessaryCalled => self.n_c += 1,
            Category::NecessaryNotCalled => self.n_nc += 1,
            Category::UnnecessaryCalled => self.un_c += 1,
            Category::UnnecessaryNotCalled => self.un_nc += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_c + self.n_nc + self.un_c + self.un_nc
    }

    pub fn mismatches(&self) -> u64 {
        self.n_nc + self.un_c
    }

    pub fn mismatch_rate(&self) -> f64 {
        self.mismatches() as f64 / self.total() as f64
    }

    pub fn mismatch_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.mismatches(), self.total())
    }

    /// Percentages for N-C, N-NC, UN-C, UN-NC and the mismatch, one decimal.
    pub fn percentages(&self) -> [String; 5] {
        let t = self.total();
        [
            percent_one_decimal(self.n_c, t),
            percent_one_decimal(self.n_nc, t),
            percent_one_decimal(self.un_c, t),
            percent_one_decimal(self.un_nc, t),
            percent_one_decimal(self.mismatches(), t),
        ]
    }
}

pub fn aggregate(categories: impl IntoIterator<Item = Category>) -> Result<CategoryCounts> {
    let mut counts = CategoryCounts::default();
    for c in categories {
        counts.add(c);
    }
    if counts.total() == 0 {
        return Err(Error::Empty("no classified samples to aggregate".into()));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub sample_id: String,
    pub category: Category,
}

/// Joins necessity and behavior records by sample id. Samples present on
/// only one side are returned as unclassifiable. Output follows the order of
/// `behavior`.
pub fn classify_records(necessity: &[NecessityRecord], behavior: &[BehaviorRecord]) -> (Vec<Classified>, Vec<String>) {
    let n_by_id: HashMap<&str, bool> = necessity.iter().map(|r| (r.sample_id.as_str(), r.n)).collect();
    let b_ids: std::collections::HashSet<&str> = behavior.iter().map(|b| b.sample_id.as_str()).collect();
    let mut classified = Vec::new();
    let mut missing = Vec::new();
    for b in behavior {
        match n_by_id.get(b.sample_id.as_str()) {
            Some(&n) => classified.push(Classified {
                sample_id: b.sample_id.clone(),
                category: classify(n, b.called),
            }),
            None => missing.push(b.sample_id.clone()),
        }
    }
    missing.extend(
        necessity
            .iter()
            .filter(|r| !b_ids.contains(r.sample_id.as_str()))
            .map(|r| r.sample_id.clone()),
    );
    (classified, missing)
}

/// Category report rows as CSV with a header line.
pub fn category_csv(rows: &[(String, String, CategoryCounts)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "domain", "N-C", "N-NC", "UN-C", "UN-NC", "mismatch_pct"])?;
    for (model, domain, c) in rows {
        let pct = c.percentages();
        w.write_record([
            model.clone(),
            domain.clone(),
            c.n_c.to_string(),
            c.n_nc.to_string(),
            c.un_c.to_string(),
            c.un_nc.to_string(),
            pct[4].clone(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

// ---------------------------------------------------------------------------
// Verbalized self-assessment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalRecord {
    pub model_id: String,
    pub sample_id: String,
    /// Stage-one reply, verbatim.
    pub stage_one: String,
    /// Parsed yes/no; `None` when the reply is neither.
    pub verbal_necessary: Option<bool>,
    pub called: bool,
    pub changed_vs_direct: bool,
    pub transcript: Vec<ChatMessage>,
}

pub const ANSWER_NOW: &str = "Now answer the original user request.";

fn assessment_prompt(sample: &Sample, tools: &Toolbox) -> String {
    let names: Vec<String> = tools.specs().into_iter().map(|s| s.name).collect();
    format!(
        "{}\n\nBefore answering, decide whether it is necessary to invoke an external tool \
         (available: {}) to answer this request correctly. Answer only with 'yes' or 'no'.",
        sample.prompt,
        names.join(", ")
    )
}

/// Reads a yes/no reply: the first word after stripping punctuation,
/// case-insensitive.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Two-stage prompting: ask for a yes/no necessity judgment, then ask for
/// the answer with that exchange in context and tools exposed.
pub fn verbalized_protocol<B: Backend + ?Sized>(
    backend: &B,
    sample: &Sample,
    tools: &Toolbox,
    direct: &BehaviorRecord,
    params: &CollectParams,
    retry: RetryPolicy,
) -> Result<VerbalRecord> {
    if direct.sample_id != sample.id {
        return Err(Error::InvalidInput(format!(
            "direct behavior record is for `{}`, not `{}`",
            direct.sample_id, sample.id
        )));
    }
    let mut messages = opening_messages(params, assessment_prompt(sample, tools));
    let assess = CompletionRequest {
        messages: messages.clone(),
        temperature: 0.0,
        tools: None,
        capture_decision: false,
        tag: Some(RequestTag {
            sample_id: sample.id.clone(),
            run: 0,
            purpose: Purpose::VerbalAssess,
        }),
    };
    let stage_one = complete_with_retry(backend, &assess, retry)?.text;
    messages.push(ChatMessage::assistant(stage_one.clone()));
    messages.push(ChatMessage::user(ANSWER_NOW));
    let stage_two_params = CollectParams {
        capture_decision: false,
        ..params.clone()
    };
    let out = tool_loop(
        backend,
        sample,
        messages,
        tools,
        &stage_two_params,
        Purpose::VerbalAnswer,
        retry,
    )?;
    Ok(VerbalRecord {
        model_id: backend.model_id().to_string(),
        sample_id: sample.id.clone(),
        verbal_necessary: parse_yes_no(&stage_one),
        stage_one,
        called: out.called,
        changed_vs_direct: out.called != direct.called,
        transcript: out.transcript,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalMetrics {
    /// MCC between the yes/no answer and the necessity label.
    pub mcc: Mcc<f64>,
    /// Fraction of valid records where the yes/no answer disagrees with the
    /// call decision.
    pub cog_exe_mismatch_rate: f64,
    /// Fraction of records whose call decision differs from direct prompting.
    pub changed_rate: f64,
    pub joined: usize,
    pub invalid: usize,
}

/// Joins verbal records with necessity labels by sample id. Records with an
/// unparseable stage-one reply are excluded from MCC and the mismatch rate
/// but still count toward the changed rate.
pub fn verbal_metrics(records: &[VerbalRecord], necessity: &[NecessityRecord]) -> Result<VerbalMetrics> {
    let n_by_id: HashMap<&str, bool> = necessity.iter().map(|r| (r.sample_id.as_str(), r.n)).collect();
    let joined: Vec<(&VerbalRecord, bool)> = records
        .iter()
        .filter_map(|r| n_by_id.get(r.sample_id.as_str()).map(|&n| (r, n)))
        .collect();
    if joined.is_empty() {
        return Err(Error::Empty("no verbal records join with necessity labels".into()));
    }
    let valid: Vec<(bool, bool, bool)> = joined
        .iter()
        .filter_map(|(r, n)| r.verbal_necessary.map(|v| (v, *n, r.called)))
        .collect();
    let confusion = Confusion::from_pairs(valid.iter().map(|&(v, n, _)| (v, n)));
    let mismatch = if valid.is_empty() {
        0.0
    } else {
        valid.iter().filter(|(v, _, called)| v != called).count() as f64 / valid.len() as f64
    };
    let changed = joined.iter().filter(|(r, _)| r.changed_vs_direct).count() as f64 / joined.len() as f64;
    Ok(VerbalMetrics {
        mcc: confusion.mcc(),
        cog_exe_mismatch_rate: mismatch,
        changed_rate: changed,
        joined: joined.len(),
        invalid: joined.len() - valid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::{LabelParams, Run};

    #[test]
    fn p_call_examples() {
        assert!((p_call(0.3, 0.1).unwrap() - 0.75f64).abs() < 1e-15);
        assert_eq!(p_call(0.37f32, 0.37).unwrap(), 0.5);
        assert_eq!(p_call(0.0, 0.4).unwrap(), 0.0);
        assert!(p_call(0.0, 0.0).is_err());
        assert!(p_call(1.2, 0.0).is_err());
    }

    #[test]
    fn classify_truth_table() {
        assert_eq!(classify(true, true), Category::NecessaryCalled);
        assert_eq!(classify(false, true), Category::UnnecessaryCalled);
        assert_eq!(classify(true, false), Category::NecessaryNotCalled);
        assert_eq!(classify(false, false), Category::UnnecessaryNotCalled);
        assert_eq!(serde_json::to_string(&Category::UnnecessaryCalled).unwrap(), "\"UN-C\"");
    }

    fn counts(n_c: u64, n_nc: u64, un_c: u64, un_nc: u64) -> CategoryCounts {
        CategoryCounts { n_c, n_nc, un_c, un_nc }
    }

    #[test]
    fn table_row_reproduction() {
        let c = counts(438, 140, 1526, 1896);
        assert_eq!(c.total(), 4000);
        assert_eq!(
            c.percentages(),
            ["11.0", "3.5", "38.2", "47.4", "41.7"].map(String::from)
        );
        assert!((c.mismatch_rate() - 0.4165).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rows() {
        assert_eq!(counts(0, 0, 0, 9).percentages()[4], "0.0");
        assert_eq!(counts(0, 9, 0, 0).percentages()[4], "100.0");
        assert!(aggregate(std::iter::empty()).is_err());
    }

    #[test]
    fn csv_report() {
        let csv = category_csv(&[("qwen".into(), "arithmetic".into(), counts(438, 140, 1526, 1896))]).unwrap();
        assert_eq!(
            csv,
            "model,domain,N-C,N-NC,UN-C,UN-NC,mismatch_pct\nqwen,arithmetic,438,140,1526,1896,41.7\n"
        );
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_yes_no("Yes."), Some(true));
        assert_eq!(parse_yes_no("  'no' "), Some(false));
        assert_eq!(parse_yes_no("NO, I can do it"), Some(false));
        assert_eq!(parse_yes_no("Nope"), None);
        assert_eq!(parse_yes_no("I think yes"), None);
    }

    fn necessity(id: &str, n: bool) -> NecessityRecord {
        NecessityRecord::from_runs(
            "m",
            id,
            vec![Run {
                response: String::new(),
                graded_correct: !n,
                verdict: None,
            }],
            LabelParams {
                runs: 1,
                temperature: 0.7,
            },
        )
    }

    fn verbal(id: &str, v: Option<bool>, called: bool, changed: bool) -> VerbalRecord {
        VerbalRecord {
            model_id: "m".into(),
            sample_id: id.into(),
            stage_one: String::new(),
            verbal_necessary: v,
            called,
            changed_vs_direct: changed,
            transcript: vec![],
        }
    }

    #[test]
    fn verbal_all_no_never_calls() {
        let nec: Vec<_> = (0..5).map(|i| necessity(&i.to_string(), true)).collect();
        let rec: Vec<_> = (0..5)
            .map(|i| verbal(&i.to_string(), Some(false), false, false))
            .collect();
        let m = verbal_metrics(&rec, &nec).unwrap();
        assert!(!m.mcc.defined);
        assert_eq!(m.cog_exe_mismatch_rate, 0.0);
        assert_eq!(m.changed_rate, 0.0);
    }

    #[test]
    fn verbal_mcc_extremes() {
        let nec: Vec<_> = (0..6).map(|i| necessity(&i.to_string(), i % 2 == 0)).collect();
        let same: Vec<_> = (0..6)
            .map(|i| verbal(&i.to_string(), Some(i % 2 == 0), false, i < 3))
            .collect();
        let m = verbal_metrics(&same, &nec).unwrap();
        assert_eq!(m.mcc.value, 1.0);
        assert!((m.changed_rate - 0.5).abs() < 1e-12);
        let flipped: Vec<_> = (0..6)
            .map(|i| verbal(&i.to_string(), Some(i % 2 != 0), true, false))
            .collect();
        assert_eq!(verbal_metrics(&flipped, &nec).unwrap().mcc.value, -1.0);
    }

    #[test]
    fn yes_without_call_is_a_mismatch() {
        let nec = vec![necessity("a", true), necessity("b", false)];
        let rec = vec![verbal("a", Some(true), false, false), verbal("b", None, false, false)];
        let m = verbal_metrics(&rec, &nec).unwrap();
        assert_eq!(m.cog_exe_mismatch_rate, 1.0);
        assert_eq!(m.invalid, 1);
        assert!(verbal_metrics(&rec, &[]).is_err());
    }

    #[test]
    fn mock_tool_loop() {
        use crate::arith::generate_corpus;
        use crate::backend::{Calculator, MockBackend, ScriptLine};
        use crate::corpus::{Corpus, PromptTemplate};

        let corpus = Corpus::from_expressions(3, &generate_corpus(3, 100).unwrap(), &PromptTemplate::default());
        let script = |s: &Sample, calls: bool, d: [f64; 2]| ScriptLine {
            sample_id: s.id.clone(),
            per_run_correct: vec![true],
            calls_tool: calls,
            decision: Some(d),
            verbal: None,
            verbal_calls_tool: Some(!calls),
        };
        let (a, b) = (&corpus.samples[95], &corpus.samples[2]);
        let mock = MockBackend::new(
            "m",
            vec![script(a, true, [0.6, 0.2]), script(b, false, [0.0, 0.0])],
            &corpus,
        )
        .unwrap();
        let tools = Toolbox::new().with(Calculator);
        let params = CollectParams::default();
        let (recs, failed) = collect_all(&mock, &corpus.samples[..0], &tools, &params, RetryPolicy::none()).unwrap();
        assert!(recs.is_empty() && failed.is_empty());

        let ra = collect_behavior(&mock, a, &tools, &params, RetryPolicy::none()).unwrap();
        assert!(ra.called && ra.first_position_call && !ra.truncated);
        assert_eq!(ra.tool_rounds, 1);
        assert!((ra.p_call.unwrap() - 0.75).abs() < 1e-12);
        let truth = a.answer.integer().unwrap();
        assert_eq!(ra.final_answer, format!("The answer is {truth}."));
        assert_eq!(ra.transcript.len(), 4);

        let rb = collect_behavior(&mock, b, &tools, &params, RetryPolicy::none()).unwrap();
        assert!(!rb.called && rb.p_call.is_none());

        let v = verbalized_protocol(&mock, a, &tools, &ra, &params, RetryPolicy::none()).unwrap();
        assert_eq!(v.stage_one, "yes");
        assert_eq!(v.verbal_necessary, Some(true));
        assert!(!v.called && v.changed_vs_direct);
        assert!(verbalized_protocol(&mock, b, &tools, &ra, &params, RetryPolicy::none()).is_err());
    }
}
