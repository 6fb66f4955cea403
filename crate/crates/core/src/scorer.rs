//! Continuation scoring backends.
//!
//! A score is the summed log-likelihood of a continuation given the prompt;
//! higher means more likely. The stubs make the pipeline testable without a
//! model, and the remote backend speaks a one-endpoint JSON protocol:
//!
//! ```text
//! POST {base_url}/score  {"prompt": "...", "continuations": ["...", ...]}
//! 200                    {"scores": [..]}
//! ```

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;

/// First backoff delay for remote retries; doubles on every further attempt.
pub const INITIAL_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("invalid scorer config: {0}")]
    InvalidConfig(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Gold continuation strictly highest.
    StubOracle,
    /// Gold continuation strictly lowest.
    StubAdversarial,
    /// Seeded hash of (prompt, continuation) mapped into `[-10, 0]`.
    StubHash,
    Remote,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::StubOracle => "stub-oracle",
            ScorerKind::StubAdversarial => "stub-adversarial",
            ScorerKind::StubHash => "stub-hash",
            ScorerKind::Remote => "remote",
        }
    }

    fn needs_gold(self) -> bool {
        matches!(self, ScorerKind::StubOracle | ScorerKind::StubAdversarial)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub-oracle" => Ok(ScorerKind::StubOracle),
            "stub-adversarial" => Ok(ScorerKind::StubAdversarial),
            "stub-hash" => Ok(ScorerKind::StubHash),
            "remote" => Ok(ScorerKind::Remote),
            other => Err(ScorerError::InvalidConfig(format!("unknown scorer kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    #[serde(default)]
    pub seed: u64,
    /// Divide each score by the continuation length in characters.
    #[serde(default)]
    pub length_normalize: bool,
    /// Maximum in-flight scoring requests during a dataset run.
    pub concurrency: usize,
}

impl ScorerConfig {
    pub fn stub(kind: ScorerKind) -> Self {
        Self {
            kind,
            base_url: None,
            timeout_ms: 30_000,
            max_retries: 3,
            seed: 0,
            length_normalize: false,
            concurrency: 4,
        }
    }

    pub fn stub_hash(seed: u64) -> Self {
        Self { seed, ..Self::stub(ScorerKind::StubHash) }
    }

    pub fn remote(base_url: impl Into<String>) -> Self {
        Self { base_url: Some(base_url.into()), ..Self::stub(ScorerKind::Remote) }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.timeout_ms == 0 {
            return Err(ScorerError::InvalidConfig("timeout must be > 0".into()));
        }
        if self.concurrency == 0 {
            return Err(ScorerError::InvalidConfig("concurrency must be >= 1".into()));
        }
        match (self.kind, self.base_url.as_deref()) {
            (ScorerKind::Remote, None) | (ScorerKind::Remote, Some("")) => {
                Err(ScorerError::InvalidConfig("remote scorer requires a base_url".into()))
            }
            (ScorerKind::Remote, Some(_)) | (_, None) => Ok(()),
            (kind, Some(_)) => Err(ScorerError::InvalidConfig(format!(
                "{kind} scorer does not take a base_url"
            ))),
        }
    }
}

/// One finite score per requested continuation, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScores {
    pub scores: Vec<f64>,
}

impl ContinuationScores {
    /// Index of the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some((i, s)),
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuations: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// A validated scorer; holds the HTTP client for the remote backend.
#[derive(Debug, Clone)]
pub struct Scorer {
    config: ScorerConfig,
    client: Option<reqwest::blocking::Client>,
}

impl Scorer {
    pub fn new(config: ScorerConfig) -> Result<Self, ScorerError> {
        config.validate()?;
        let client = if config.kind == ScorerKind::Remote {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_millis(config.timeout_ms))
                .build()
                .map_err(|e| ScorerError::InvalidConfig(e.to_string()))?;
            Some(client)
        } else {
            None
        };
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn score(
        &self,
        prompt: &str,
        continuations: &[String],
        gold_index: Option<usize>,
    ) -> Result<ContinuationScores, ScorerError> {
        if continuations.is_empty() {
            return Err(ScorerError::Usage("no continuations to score".into()));
        }
        if let Some(gold) = gold_index {
            if gold >= continuations.len() {
                return Err(ScorerError::Usage(format!(
                    "gold index {gold} out of range for {} continuations",
                    continuations.len()
                )));
            }
        }
        let n = continuations.len();
        let mut scores = match self.config.kind {
            ScorerKind::StubOracle => {
                let gold = self.require_gold(gold_index)?;
                (0..n).map(|i| if i == gold { 0.0 } else { -1.0 }).collect()
            }
            ScorerKind::StubAdversarial => {
                let gold = self.require_gold(gold_index)?;
                (0..n).map(|i| if i == gold { -1.0 } else { 0.0 }).collect()
            }
            ScorerKind::StubHash => continuations
                .iter()
                .map(|c| hash_score(self.config.seed, prompt, c))
                .collect(),
            ScorerKind::Remote => self.score_remote(prompt, continuations)?,
        };
        if self.config.length_normalize && !self.config.kind.needs_gold() {
            for (s, c) in scores.iter_mut().zip(continuations) {
                *s /= c.chars().count().max(1) as f64;
            }
        }
        Ok(ContinuationScores { scores })
    }

    fn require_gold(&self, gold_index: Option<usize>) -> Result<usize, ScorerError> {
        gold_index.ok_or_else(|| {
            ScorerError::Usage(format!("{} scorer requires a gold index", self.config.kind))
        })
    }

    fn score_remote(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, ScorerError> {
        let client = self.client.as_ref().expect("remote scorer always has a client");
        let base = self.config.base_url.as_deref().unwrap_or_default();
        let url = format!("{}/score", base.trim_end_matches('/'));
        let body = ScoreRequest { prompt, continuations };

        let mut attempt = 0u32;
        let response = loop {
            attempt += 1;
            match client.post(&url).json(&body).send() {
                Ok(resp) => break resp,
                Err(err) if attempt <= self.config.max_retries => {
                    let delay = INITIAL_BACKOFF * 2u32.saturating_pow(attempt - 1);
                    tracing::debug!(%err, attempt, ?delay, "retrying score request");
                    thread::sleep(delay);
                }
                Err(err) => {
                    return Err(ScorerError::Transport { attempts: attempt, message: err.to_string() })
                }
            }
        };

        let status = response.status();
        if status != reqwest::StatusCode::OK {
            return Err(ScorerError::Protocol(format!("server answered {status}")));
        }
        let text = response.text().map_err(|e| ScorerError::Transport {
            attempts: attempt,
            message: e.to_string(),
        })?;
        let parsed: ScoreResponse = serde_json::from_str(&text)
            .map_err(|e| ScorerError::Protocol(format!("malformed reply: {e}")))?;
        if parsed.scores.len() != continuations.len() {
            return Err(ScorerError::Protocol(format!(
                "expected {} scores, got {}",
                continuations.len(),
                parsed.scores.len()
            )));
        }
        if let Some(bad) = parsed.scores.iter().find(|s| !s.is_finite()) {
            return Err(ScorerError::Protocol(format!("non-finite score {bad}")));
        }
        Ok(parsed.scores)
    }
}

/// Maps `(seed, prompt, continuation)` to a score in `[-10, 0]`.
fn hash_score(seed: u64, prompt: &str, continuation: &str) -> f64 {
    let mut label = Vec::with_capacity(8 + prompt.len() + continuation.len());
    label.extend_from_slice(&(prompt.len() as u64).to_le_bytes());
    label.extend_from_slice(prompt.as_bytes());
    label.extend_from_slice(continuation.as_bytes());
    let h = derive_seed(seed, &label);
    -10.0 * ((h >> 11) as f64 / (1u64 << 53) as f64)
}

/// One-shot convenience over [`Scorer::new`] + [`Scorer::score`].
pub fn score_continuations(
    config: &ScorerConfig,
    prompt: &str,
    continuations: &[String],
    gold_index: Option<usize>,
) -> Result<ContinuationScores, ScorerError> {
    Scorer::new(config.clone())?.score(prompt, continuations, gold_index)
}
