use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoteError {
    #[error("vote `{vote_id}`: {reason}")]
    Invalid { vote_id: String, reason: String },
    #[error("vote log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Judgment between `model_a` and `model_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    A,
    B,
    #[serde(rename = "BOTH")]
    Both,
}

impl Outcome {
    /// ELO score credited to `model_a`.
    pub fn score_a(self) -> f64 {
        match self {
            Outcome::A => 1.0,
            Outcome::B => 0.0,
            Outcome::Both => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub vote_id: String,
    pub judge_id: String,
    pub question_id: String,
    pub category: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
    pub timestamp: DateTime<Utc>,
}

impl Vote {
    pub fn validate(&self) -> Result<(), VoteError> {
        let invalid = |reason: &str| VoteError::Invalid {
            vote_id: self.vote_id.clone(),
            reason: reason.to_string(),
        };
        if self.vote_id.is_empty()
            || self.judge_id.is_empty()
            || self.question_id.is_empty()
            || self.model_a.is_empty()
            || self.model_b.is_empty()
        {
            return Err(invalid("empty identifier"));
        }
        if self.model_a == self.model_b {
            return Err(invalid("model_a equals model_b"));
        }
        Ok(())
    }

    pub fn involves(&self, model: &str) -> bool {
        self.model_a == model || self.model_b == model
    }

    /// Whether `model` won outright.
    pub fn won_by(&self, model: &str) -> bool {
        match self.outcome {
            Outcome::A => self.model_a == model,
            Outcome::B => self.model_b == model,
            Outcome::Both => false,
        }
    }
}

pub fn read_votes_jsonl<R: BufRead>(reader: R) -> Result<Vec<Vote>, VoteError> {
    let mut votes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vote: Vote = serde_json::from_str(&line)
            .map_err(|e| VoteError::Parse { line: i + 1, message: e.to_string() })?;
        vote.validate()?;
        votes.push(vote);
    }
    Ok(votes)
}

pub fn write_vote_line<W: Write>(mut writer: W, vote: &Vote) -> Result<(), VoteError> {
    let mut line = serde_json::to_string(vote).expect("votes always serialize");
    line.push('\n');
    writer.write_all(line.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(outcome: Outcome) -> Vote {
        Vote {
            vote_id: "v1".into(),
            judge_id: "j1".into(),
            question_id: "q1".into(),
            category: "Logic".into(),
            model_a: "alpha".into(),
            model_b: "beta".into(),
            outcome,
            timestamp: "2024-05-01T12:00:00Z".parse().unwrap(),
        }
    }

    #[test]
    fn outcome_wire_names() {
        assert_eq!(serde_json::to_string(&Outcome::A).unwrap(), "\"A\"");
        assert_eq!(serde_json::to_string(&Outcome::Both).unwrap(), "\"BOTH\"");
        assert!(serde_json::from_str::<Outcome>("\"LEFT\"").is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let votes = vec![vote(Outcome::A), vote(Outcome::Both)];
        let mut buf = Vec::new();
        for v in &votes {
            write_vote_line(&mut buf, v).unwrap();
        }
        assert_eq!(read_votes_jsonl(buf.as_slice()).unwrap(), votes);
    }

    #[test]
    fn self_match_rejected() {
        let mut v = vote(Outcome::A);
        v.model_b = "alpha".into();
        assert!(v.validate().is_err());
        let line = serde_json::to_string(&v).unwrap();
        assert!(read_votes_jsonl(line.as_bytes()).is_err());
    }

    #[test]
    fn win_helpers() {
        let v = vote(Outcome::B);
        assert!(v.won_by("beta"));
        assert!(!v.won_by("alpha"));
        assert!(v.involves("alpha") && !v.involves("gamma"));
    }
}
