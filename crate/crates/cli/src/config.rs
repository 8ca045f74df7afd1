use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toolgap_core::backend::HttpConfig;
use toolgap_core::collector::CollectParams;
use toolgap_core::labeler::{GradingMode, LabelParams};
use toolgap_core::probes::ProbeHyper;

pub const API_KEY_VAR: &str = "TOOLGAP_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Mock { script: PathBuf },
    Http(HttpConfig),
}

/// The pipeline config file. Every field is optional; command-line flags
/// take precedence over values here, which take precedence over defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_id: Option<String>,
    pub work_dir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub seed: Option<u64>,
    pub total: Option<usize>,
    pub template: Option<String>,
    pub backend: Option<BackendConfig>,
    pub labeling: Option<LabelParams>,
    pub grading: Option<GradingMode>,
    pub judge: Option<HttpConfig>,
    pub collect: Option<CollectParams>,
    pub search_fixtures: Option<PathBuf>,
    pub probe: Option<ProbeHyper>,
    pub split_seed: Option<u64>,
    pub allow_partial: bool,
    pub dump: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = &self.labeling {
            if l.runs == 0 {
                bail!("labeling.runs must be at least 1");
            }
            if l.temperature.is_nan() || l.temperature < 0.0 {
                bail!("labeling.temperature must be non-negative");
            }
        }
        if let Some(p) = &self.probe {
            if p.lr.is_nan() || p.lr <= 0.0 || p.epochs == 0 {
                bail!("probe.lr must be positive and probe.epochs at least 1");
            }
            if !(0.0..1.0).contains(&p.test_fraction) {
                bail!("probe.test_fraction must lie in [0, 1)");
            }
        }
        if let Some(p) = &self.search_fixtures {
            if !p.exists() {
                bail!("search_fixtures {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let json = r#"{
            "model_id": "qwen-7b",
            "work_dir": "out",
            "backend": {"kind": "http", "endpoint": "http://localhost:8000/v1", "model": "Qwen", "family": "qwen"},
            "labeling": {"runs": 10, "temperature": 0.7},
            "grading": "choice-match",
            "split_seed": 3
        }"#;
        let c: PipelineConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert!(matches!(c.backend, Some(BackendConfig::Http(_))));
        assert_eq!(c.grading, Some(GradingMode::ChoiceMatch));
    }

    #[test]
    fn rejects_bad_values() {
        let c: PipelineConfig = serde_json::from_str(r#"{"labeling": {"runs": 0, "temperature": 0.7}}"#).unwrap();
        assert!(c.validate().is_err());
        let c: PipelineConfig = serde_json::from_str(r#"{"labeling": {"runs": 3, "temperature": -1}}"#).unwrap();
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"modle_id": "x"}"#).is_err());
    }
}
