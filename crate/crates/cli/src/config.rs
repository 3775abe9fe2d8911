//! The single declarative pipeline configuration, with dotted-path
//! overrides from the command line.

use dsvb_core::dynconn::WindowSpec;
use dsvb_core::evaluation::{CvSpec, InnerSelection};
use dsvb_core::model::ModelConfig;
use dsvb_core::synthgen::SynthSpec;
use dsvb_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// State-analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub k_states: usize,
    pub restarts: usize,
    /// Write SVG heatmaps of centroids and transition matrices.
    pub svg: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            k_states: 3,
            restarts: 20,
            svg: true,
        }
    }
}

/// Everything the pipeline needs, as one document. The top-level `seed`
/// drives every component seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cv: CvSpec,
    pub inner_selection: InnerSelection,
    pub analysis: AnalysisSpec,
    pub synth: SynthSpec,
    pub seed: u64,
}

impl PipelineConfig {
    /// Loads a config, applies `key=value` overrides (dotted paths into the
    /// document) and an optional seed override, then validates.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, String> {
        let mut value: serde_json::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("{}: {e}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => serde_json::json!({}),
        };
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let mut config: PipelineConfig =
            serde_json::from_value(value).map_err(|e| format!("config: {e}"))?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.resolve_seeds();
        config.validate()?;
        Ok(config)
    }

    /// Component seeds all derive from the pipeline seed.
    fn resolve_seeds(&mut self) {
        self.train.seed = self.seed;
        self.cv.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), String> {
        self.window.validate().map_err(|e| e.to_string())?;
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.synth.validate().map_err(|e| e.to_string())?;
        if self.cv.k_outer < 2 {
            return Err("cv.k_outer must be >= 2".into());
        }
        if self.analysis.k_states == 0 || self.analysis.restarts == 0 {
            return Err("analysis.k_states and analysis.restarts must be >= 1".into());
        }
        Ok(())
    }
}

fn apply_override(value: &mut serde_json::Value, entry: &str) -> Result<(), String> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| format!("override '{entry}' is not key=value"))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(format!("override '{entry}' has an empty path segment"));
        }
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| format!("override '{entry}': '{segment}' is not an object"))?;
        if i + 1 == segments.len() {
            map.insert((*segment).to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry((*segment).to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    unreachable!("override paths are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        PipelineConfig::load(None, &[], None).unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "train.learning_rate=0.001".into(),
                "model.latent_dim=8".into(),
                "window.keep_fraction=0.5".into(),
                "model.bce_mode=\"positive_only\"".into(),
            ],
            Some(42),
        )
        .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert_eq!(cfg.model.latent_dim, 8);
        assert_eq!(cfg.window.keep_fraction, 0.5);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::load(None, &["train.momentum=0.9".into()], None);
        assert!(err.is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = PipelineConfig::load(None, &["seed=7".into()], None).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
