//! Sample sets for both domains: persistence and factual-QA ingestion.
//!
//! A corpus file is line-delimited JSON. The first line is a header object
//! `{"corpus": {"domain": ..., "provenance": ...}}`; every following line is
//! one [`Sample`]. Files without a header are accepted and get their domain
//! from the first sample.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arith::Expression;
use crate::error::{Error, Result};
use crate::io;

pub const GENERATOR_VERSION: &str = concat!("toolgap ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Arithmetic,
    Factual,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Arithmetic => "arithmetic",
            Domain::Factual => "factual",
        })
    }
}

/// Ground truth: an integer string for arithmetic, a set of acceptable
/// reference answers for factual questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Integer(String),
    References(Vec<String>),
}

impl Answer {
    pub fn integer(&self) -> Option<i64> {
        match self {
            Answer::Integer(s) => s.parse().ok(),
            Answer::References(_) => None,
        }
    }

    pub fn references(&self) -> &[String] {
        match self {
            Answer::References(r) => r,
            Answer::Integer(_) => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    pub prompt: String,
    pub answer: Answer,
    /// The bare query (expression text or question) without prompt framing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_choice: Option<usize>,
}

impl Sample {
    fn check(&self) -> Result<()> {
        match (&self.domain, &self.answer) {
            (Domain::Arithmetic, a @ Answer::Integer(_)) if a.integer().is_some() => Ok(()),
            (Domain::Arithmetic, _) => Err(Error::InvalidInput(format!(
                "arithmetic sample `{}` needs exactly one integer answer",
                self.id
            ))),
            (Domain::Factual, Answer::References(r)) if !r.is_empty() => match (&self.choices, self.correct_choice) {
                (Some(c), Some(i)) if i >= c.len() => Err(Error::InvalidInput(format!(
                    "sample `{}` correct_choice {i} out of range",
                    self.id
                ))),
                _ => Ok(()),
            },
            (Domain::Factual, _) => Err(Error::InvalidInput(format!(
                "factual sample `{}` needs a non-empty reference set",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Seed(u64),
    File { name: String, sha256: String },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    pub generator_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub domain: Domain,
    pub provenance: Provenance,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    corpus: Header,
}

#[derive(Serialize, Deserialize)]
struct Header {
    domain: Domain,
    provenance: Provenance,
}

/// Prompt template with a `{expression}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate(pub String);

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(
            "{expression}\n\nCompute the value of this expression. \
             Give the final answer as a single integer."
                .into(),
        )
    }
}

impl PromptTemplate {
    pub fn render(&self, expression: &str) -> String {
        self.0.replace("{expression}", expression)
    }
}

impl Corpus {
    pub fn new(domain: Domain, provenance: Provenance, samples: Vec<Sample>) -> Result<Self> {
        let corpus = Corpus {
            domain,
            provenance,
            samples,
        };
        corpus.check()?;
        Ok(corpus)
    }

    /// Wraps generated expressions as arithmetic samples `arith-0000`, ...
    pub fn from_expressions(seed: u64, exprs: &[Expression], template: &PromptTemplate) -> Self {
        let samples = exprs
            .iter()
            .enumerate()
            .map(|(i, e)| Sample {
                id: format!("arith-{i:04}"),
                domain: Domain::Arithmetic,
                family: Some(e.family.name().to_string()),
                prompt: template.render(&e.text),
                answer: Answer::Integer(e.value.to_string()),
                query: Some(e.text.clone()),
                choices: None,
                correct_choice: None,
            })
            .collect();
        Corpus {
            domain: Domain::Arithmetic,
            provenance: Provenance {
                source: Source::Seed(seed),
                generator_version: GENERATOR_VERSION.into(),
            },
            samples,
        }
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn check(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if s.domain != self.domain {
                return Err(Error::InvalidInput(format!(
                    "sample `{}` has domain {} in a {} corpus",
                    s.id, s.domain, self.domain
                )));
            }
            s.check()?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = serde_json::to_vec(&HeaderLine {
            corpus: Header {
                domain: self.domain,
                provenance: self.provenance.clone(),
            },
        })?;
        buf.push(b'\n');
        buf.extend(io::to_jsonl(&self.samples)?);
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check()?;
        io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();
        let malformed = |line: usize, e: serde_json::Error| Error::MalformedLine {
            path: path.to_path_buf(),
            line: line + 1,
            message: e.to_string(),
        };
        let mut header = None;
        if let Some(&(i, first)) = lines.peek() {
            let value: serde_json::Value = serde_json::from_str(first).map_err(|e| malformed(i, e))?;
            if value.get("corpus").is_some() {
                let h: HeaderLine = serde_json::from_value(value).map_err(|e| malformed(i, e))?;
                header = Some(h.corpus);
                lines.next();
            }
        }
        let samples = lines
            .map(|(i, l)| serde_json::from_str::<Sample>(l).map_err(|e| malformed(i, e)))
            .collect::<Result<Vec<_>>>()?;
        if samples.is_empty() {
            log::warn!("{}: corpus file has no samples", path.display());
        }
        let (domain, provenance) = match header {
            Some(h) => (h.domain, h.provenance),
            None => (
                samples.first().map(|s| s.domain).unwrap_or(Domain::Arithmetic),
                Provenance {
                    source: Source::Unknown,
                    generator_version: String::new(),
                },
            ),
        };
        Corpus::new(domain, provenance, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactualForm {
    MultipleChoice,
    Generative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based data row (the header row is not counted).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub skipped: Vec<SkippedRow>,
}

const OPTION_LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

pub fn option_letter(index: usize) -> Option<char> {
    OPTION_LETTERS.get(index).map(|&b| b as char)
}

fn split_answers(field: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(s.to_string()))
        .map(str::to_string)
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidInput(format!("source has no `{name}` column")))
}

/// Reads the published CSV distribution of the 817-question factual QA set
/// (`Question`, `Best Answer`, `Correct Answers`, `Incorrect Answers`
/// columns; answer lists separated by `;`).
///
/// Sample ids are `tqa-NNNN` from the data row index, so re-ingesting the
/// same bytes yields the same ids. In multiple-choice form the options are
/// the best answer plus the incorrect answers, shuffled with a seed derived
/// from the question text.
pub fn ingest_factual(source: &Path, form: FactualForm) -> Result<Ingested> {
    let bytes = std::fs::read(source).map_err(|e| Error::io(format!("reading {}", source.display()), e))?;
    ingest_factual_bytes(
        &bytes,
        source
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        form,
    )
}

pub fn ingest_factual_bytes(bytes: &[u8], name: String, form: FactualForm) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty("no samples ingested".into()));
    }
    let q_col = column(&headers, "Question")?;
    let best_col = column(&headers, "Best Answer")?;
    let correct_col = column(&headers, "Correct Answers")?;
    let incorrect_col = column(&headers, "Incorrect Answers")?;

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let question = field(q_col);
        let best = field(best_col);
        let mut references = split_answers(field(correct_col));
        let incorrect = split_answers(field(incorrect_col));
        if question.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "missing question".into(),
            });
            continue;
        }
        if best.is_empty() && references.is_empty() {
            skipped.push(SkippedRow {
                row,
                reason: "missing answers".into(),
            });
            continue;
        }
        if !best.is_empty() {
            references.retain(|r| r != best);
            references.insert(0, best.to_string());
        }
        let best = if best.is_empty() {
            references[0].clone()
        } else {
            best.to_string()
        };
        let id = format!("tqa-{i:04}");
        let sample = match form {
            FactualForm::Generative => Sample {
                id,
                domain: Domain::Factual,
                family: None,
                prompt: format!("{question}\n\nAnswer the question briefly."),
                answer: Answer::References(references),
                query: Some(question.to_string()),
                choices: None,
                correct_choice: None,
            },
            FactualForm::MultipleChoice => {
                let mut choices = vec![best.clone()];
                choices.extend(incorrect.into_iter().filter(|c| *c != best));
                if choices.len() < 2 {
                    skipped.push(SkippedRow {
                        row,
                        reason: "no incorrect answers to form choices".into(),
                    });
                    continue;
                }
                if choices.len() > OPTION_LETTERS.len() {
                    skipped.push(SkippedRow {
                        row,
                        reason: format!("{} options exceed A-Z", choices.len()),
                    });
                    continue;
                }
                let digest = Sha256::digest(question.as_bytes());
                let mut seed = [0u8; 32];
                seed.copy_from_slice(&digest);
                let mut rng = ChaCha8Rng::from_seed(seed);
                choices.shuffle(&mut rng);
                let correct = choices.iter().position(|c| *c == best).unwrap();
                let mut prompt = format!("{question}\n\n");
                for (k, c) in choices.iter().enumerate() {
                    prompt.push_str(&format!("{}. {c}\n", option_letter(k).unwrap()));
                }
                prompt.push_str("\nAnswer with the letter of the correct option.");
                Sample {
                    id,
                    domain: Domain::Factual,
                    family: None,
                    prompt,
                    answer: Answer::References(references),
                    query: Some(question.to_string()),
                    choices: Some(choices),
                    correct_choice: Some(correct),
                }
            }
        };
        samples.push(sample);
    }
    if !skipped.is_empty() {
        log::warn!("skipped {} malformed row(s) while ingesting {name}", skipped.len());
    }
    if samples.is_empty() {
        return Err(Error::Empty("no samples ingested".into()));
    }
    let corpus = Corpus::new(
        Domain::Factual,
        Provenance {
            source: Source::File {
                name,
                sha256: hex(&Sha256::digest(bytes)),
            },
            generator_version: GENERATOR_VERSION.into(),
        },
        samples,
    )?;
    Ok(Ingested { corpus, skipped })
}
