use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Qwen,
    Llama,
    Generic,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Qwen => "qwen",
            ModelFamily::Llama => "llama",
            ModelFamily::Generic => "generic",
        })
    }
}

/// Tokens that open a tool call for one model family, by vocabulary id and
/// by surface text (servers that report top log-probs by string).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriggerTokens {
    #[serde(default)]
    pub ids: Vec<usize>,
    #[serde(default)]
    pub texts: Vec<String>,
}

impl TriggerTokens {
    /// Built-in triggers: `<tool_call>` (id 151657) for Qwen and
    /// `<|python_tag|>` (id 128010) for Llama 3.x. `Generic` has none.
    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Qwen => TriggerTokens {
                ids: vec![151657],
                texts: vec!["<tool_call>".into()],
            },
            ModelFamily::Llama => TriggerTokens {
                ids: vec![128010],
                texts: vec!["<|python_tag|>".into()],
            },
            ModelFamily::Generic => TriggerTokens::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty() && self.texts.is_empty()
    }

    pub fn matches_text(&self, token: &str) -> bool {
        if self.texts.iter().any(|t| t == token) {
            return true;
        }
        token
            .strip_prefix("token_id:")
            .and_then(|id| id.parse::<usize>().ok())
            .is_some_and(|id| self.ids.contains(&id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision<F> {
    pub is_tool_argmax: bool,
    pub p_tool: F,
    pub p_best_nontool: F,
}

/// Splits a full next-token distribution into the trigger probability (the
/// maximum over the family's trigger ids) and the best non-trigger
/// probability.
pub fn detect_tool_trigger<F: Float>(
    family: ModelFamily,
    triggers: &TriggerTokens,
    distribution: &[F],
) -> Result<TriggerDecision<F>> {
    if triggers.ids.is_empty() {
        return Err(Error::Config(format!(
            "no tool-trigger token ids configured for model family {family}"
        )));
    }
    if let Some(&bad) = triggers.ids.iter().find(|&&id| id >= distribution.len()) {
        return Err(Error::Config(format!(
            "trigger token id {bad} outside vocabulary of size {}",
            distribution.len()
        )));
    }
    let mut total = F::zero();
    for &p in distribution {
        if !p.is_finite() || p < F::zero() {
            return Err(Error::InvalidInput(
                "next-token distribution has a negative or non-finite entry".into(),
            ));
        }
        total = total + p;
    }
    let tol = F::from(1e-3).unwrap();
    if (total - F::one()).abs() > tol {
        return Err(Error::InvalidInput(format!(
            "next-token distribution sums to {}, not 1",
            total.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let mut p_tool = F::zero();
    let mut p_best_nontool = F::zero();
    for (id, &p) in distribution.iter().enumerate() {
        if triggers.ids.contains(&id) {
            p_tool = p_tool.max(p);
        } else {
            p_best_nontool = p_best_nontool.max(p);
        }
    }
    Ok(TriggerDecision {
        is_tool_argmax: p_tool > p_best_nontool,
        p_tool,
        p_best_nontool,
    })
}
