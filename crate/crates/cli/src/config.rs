//! Optional TOML defaults loaded with `--config`. Command-line flags win.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub scorer: ScorerSection,
    /// Dataset name -> shot count, merged over the built-in policy.
    #[serde(default)]
    pub shots: BTreeMap<String, usize>,
    #[serde(default)]
    pub elo: EloSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    pub kind: Option<String>,
    pub base_url: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_retries: Option<u32>,
    pub concurrency: Option<usize>,
    pub length_normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EloSection {
    pub initial_rating: Option<f64>,
    pub k_factor: Option<f64>,
    pub logistic_scale: Option<f64>,
    pub n_permutations: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub listen: Option<String>,
    pub questions: Option<String>,
    pub responses: Option<String>,
    pub votes: Option<String>,
    pub ui_dir: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_sections() {
        let cfg: FileConfig = toml::from_str(
            r#"
            [scorer]
            kind = "remote"
            base_url = "http://localhost:9000"
            [shots]
            ARC = 10
            [elo]
            k_factor = 16.0
            [serve]
            listen = "0.0.0.0:80"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scorer.kind.as_deref(), Some("remote"));
        assert_eq!(cfg.shots["ARC"], 10);
        assert_eq!(cfg.elo.k_factor, Some(16.0));
        assert_eq!(cfg.serve.listen.as_deref(), Some("0.0.0.0:80"));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("[scorer]\nkindd = \"x\"\n").is_err());
    }
}
