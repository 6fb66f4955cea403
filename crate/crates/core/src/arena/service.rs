//! Blind matchup scheduling and append-only vote capture.
//!
//! Tickets carry only the question and two anonymous responses; the
//! left/right to model mapping stays server-side until the vote arrives.
//! Votes are stored with `model_a < model_b` lexicographically so analytics
//! never see presentation order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::analytics::{elo_permuted, win_pct_all, AnalyticsError, EloConfig};
use super::vote::{read_votes_jsonl, write_vote_line, Outcome, Vote, VoteError};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("no model pair shares a question; matchups are exhausted")]
    Exhausted,
    #[error("unknown matchup `{0}`")]
    UnknownTicket(String),
    #[error("matchup `{0}` was already voted on")]
    AlreadyVoted(String),
    #[error("matchup `{matchup_id}` was issued to judge `{issued_to}`")]
    JudgeMismatch { matchup_id: String, issued_to: String },
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("invalid response store: {0}")]
    InvalidStore(String),
    #[error("vote log: {0}")]
    Log(#[from] VoteError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub category: String,
}

#[derive(Deserialize)]
struct QuestionLine {
    question_id: String,
    text: String,
    category: String,
}

#[derive(Deserialize)]
struct ResponseLine {
    model: String,
    question_id: String,
    response: String,
}

/// Pre-generated model answers to the judging questions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResponseStore {
    pub questions: BTreeMap<String, Question>,
    /// `(model, question_id) -> response`
    pub responses: BTreeMap<(String, String), String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ArenaError> {
    let file = File::open(path).map_err(|source| ArenaError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ArenaError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            ArenaError::InvalidStore(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

impl ResponseStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_question(&mut self, id: impl Into<String>, text: impl Into<String>, category: impl Into<String>) {
        self.questions.insert(id.into(), Question { text: text.into(), category: category.into() });
    }

    pub fn add_response(&mut self, model: impl Into<String>, question_id: impl Into<String>, response: impl Into<String>) {
        self.responses.insert((model.into(), question_id.into()), response.into());
    }

    pub fn load(questions: &Path, responses: &Path) -> Result<Self, ArenaError> {
        let mut store = Self::new();
        for q in read_jsonl::<QuestionLine>(questions)? {
            if store.questions.contains_key(&q.question_id) {
                return Err(ArenaError::InvalidStore(format!("duplicate question `{}`", q.question_id)));
            }
            store.add_question(q.question_id, q.text, q.category);
        }
        for r in read_jsonl::<ResponseLine>(responses)? {
            let key = (r.model, r.question_id);
            if store.responses.contains_key(&key) {
                return Err(ArenaError::InvalidStore(format!(
                    "duplicate response for model `{}` on `{}`",
                    key.0, key.1
                )));
            }
            store.responses.insert(key, r.response);
        }
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        for (model, qid) in self.responses.keys() {
            if model.is_empty() {
                return Err(ArenaError::InvalidStore("empty model name".into()));
            }
            if !self.questions.contains_key(qid) {
                return Err(ArenaError::InvalidStore(format!(
                    "response from `{model}` references unknown question `{qid}`"
                )));
            }
        }
        if self.pairs().is_empty() {
            return Err(ArenaError::InvalidStore("no two models share a question".into()));
        }
        Ok(())
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.responses.keys().map(|(m, _)| m.as_str()).collect()
    }

    fn questions_of(&self, model: &str) -> BTreeSet<&str> {
        self.responses
            .keys()
            .filter(|(m, _)| m == model)
            .map(|(_, q)| q.as_str())
            .collect()
    }

    /// Unordered model pairs (lexicographic) with the questions both answered.
    pub fn pairs(&self) -> Vec<((String, String), Vec<String>)> {
        let models: Vec<&str> = self.models().into_iter().collect();
        let answered: Vec<BTreeSet<&str>> = models.iter().map(|m| self.questions_of(m)).collect();
        let mut pairs = Vec::new();
        for i in 0..models.len() {
            for j in (i + 1)..models.len() {
                let shared: Vec<String> =
                    answered[i].intersection(&answered[j]).map(|q| q.to_string()).collect();
                if !shared.is_empty() {
                    pairs.push(((models[i].to_string(), models[j].to_string()), shared));
                }
            }
        }
        pairs
    }
}

/// What a judge sees. Carries no model identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupTicket {
    pub matchup_id: String,
    pub question_id: String,
    pub question_text: String,
    pub category: String,
    pub response_left: String,
    pub response_right: String,
    pub issued_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TicketSecret {
    model_left: String,
    model_right: String,
    question_id: String,
    judge_id: String,
}

/// Outcome as submitted against a ticket's presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SideOutcome {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model: String,
    pub elo_mean: f64,
    pub ci_plus: f64,
    pub ci_minus: f64,
    pub winpct: f64,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub total_votes: usize,
    pub per_judge: BTreeMap<String, usize>,
    /// Keyed `"model_a vs model_b"`; includes pairs with no votes yet.
    pub per_pair: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArenaConfig {
    pub seed: u64,
    pub elo: EloConfig,
}

struct ArenaState {
    rng: ChaCha8Rng,
    secrets: HashMap<String, TicketSecret>,
    consumed: HashSet<String>,
    votes: Arc<Vec<Vote>>,
    pair_counts: BTreeMap<(String, String), usize>,
    log: File,
}

/// Matchup service state. Issuing and voting serialize through one lock;
/// leaderboard reads work on a snapshot of the log.
pub struct Arena {
    store: ResponseStore,
    pairs: Vec<((String, String), Vec<String>)>,
    log_path: PathBuf,
    elo: EloConfig,
    state: Mutex<ArenaState>,
}

fn pair_key(x: &str, y: &str) -> (String, String) {
    if x <= y {
        (x.to_string(), y.to_string())
    } else {
        (y.to_string(), x.to_string())
    }
}

fn random_hex(rng: &mut impl Rng) -> String {
    format!("{:032x}", rng.random::<u128>())
}

impl Arena {
    /// Opens the service, replaying any votes already in `log_path`.
    pub fn open(store: ResponseStore, log_path: impl Into<PathBuf>, config: ArenaConfig) -> Result<Self, ArenaError> {
        store.validate()?;
        config.elo.validate()?;
        let log_path = log_path.into();
        let io_err = |source| ArenaError::Io { path: log_path.clone(), source };

        let existing = if log_path.exists() {
            let file = File::open(&log_path).map_err(io_err)?;
            read_votes_jsonl(BufReader::new(file))?
        } else {
            Vec::new()
        };
        let models = store.models();
        let mut pair_counts: BTreeMap<(String, String), usize> =
            store.pairs().into_iter().map(|(p, _)| (p, 0)).collect();
        for v in &existing {
            if !models.contains(v.model_a.as_str()) || !models.contains(v.model_b.as_str()) {
                return Err(ArenaError::InvalidStore(format!("vote `{}` names an unknown model", v.vote_id)));
            }
            if !store.questions.contains_key(&v.question_id) {
                return Err(ArenaError::InvalidStore(format!("vote `{}` names an unknown question", v.vote_id)));
            }
            *pair_counts.entry(pair_key(&v.model_a, &v.model_b)).or_default() += 1;
        }
        let consumed = existing.iter().map(|v| v.vote_id.clone()).collect();
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err)?;
        // Distinct restarts with the same seed must not replay ticket ids.
        let rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(
            config.seed,
            &(existing.len() as u64).to_le_bytes(),
        ));

        Ok(Self {
            pairs: store.pairs(),
            store,
            log_path,
            elo: config.elo,
            state: Mutex::new(ArenaState {
                rng,
                secrets: HashMap::new(),
                consumed,
                votes: Arc::new(existing),
                pair_counts,
                log,
            }),
        })
    }

    pub fn store(&self) -> &ResponseStore {
        &self.store
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Serves a blind matchup from the least-voted pair.
    pub fn next_matchup(&self, judge_id: &str) -> Result<MatchupTicket, ArenaError> {
        if judge_id.is_empty() {
            return Err(ArenaError::BadRequest("judge_id must be non-empty".into()));
        }
        let mut state = self.state.lock().expect("arena lock poisoned");
        let state = &mut *state;
        let min = self
            .pairs
            .iter()
            .map(|(p, _)| state.pair_counts.get(p).copied().unwrap_or(0))
            .min()
            .ok_or(ArenaError::Exhausted)?;
        let candidates: Vec<&((String, String), Vec<String>)> = self
            .pairs
            .iter()
            .filter(|(p, _)| state.pair_counts.get(p).copied().unwrap_or(0) == min)
            .collect();
        let ((m1, m2), shared) = *candidates.choose(&mut state.rng).ok_or(ArenaError::Exhausted)?;
        let question_id = shared.choose(&mut state.rng).ok_or(ArenaError::Exhausted)?.clone();
        let (left, right) = if state.rng.random::<bool>() { (m1, m2) } else { (m2, m1) };

        let question = &self.store.questions[&question_id];
        let response = |m: &String| self.store.responses[&(m.clone(), question_id.clone())].clone();
        let matchup_id = loop {
            let id = random_hex(&mut state.rng);
            if !state.secrets.contains_key(&id) && !state.consumed.contains(&id) {
                break id;
            }
        };
        let ticket = MatchupTicket {
            matchup_id: matchup_id.clone(),
            question_id: question_id.clone(),
            question_text: question.text.clone(),
            category: question.category.clone(),
            response_left: response(left),
            response_right: response(right),
            issued_at: Utc::now(),
        };
        state.secrets.insert(
            matchup_id,
            TicketSecret {
                model_left: left.clone(),
                model_right: right.clone(),
                question_id,
                judge_id: judge_id.to_string(),
            },
        );
        Ok(ticket)
    }

    /// Resolves a ticket into a canonical vote and appends it to the log.
    ///
    /// The vote is durable (flushed and synced) before this returns `Ok`.
    pub fn submit_vote(&self, matchup_id: &str, judge_id: &str, outcome: SideOutcome) -> Result<Vote, ArenaError> {
        let mut state = self.state.lock().expect("arena lock poisoned");
        let state = &mut *state;
        let secret = match state.secrets.get(matchup_id) {
            Some(s) => s.clone(),
            None if state.consumed.contains(matchup_id) => {
                return Err(ArenaError::AlreadyVoted(matchup_id.to_string()))
            }
            None => return Err(ArenaError::UnknownTicket(matchup_id.to_string())),
        };
        if secret.judge_id != judge_id {
            return Err(ArenaError::JudgeMismatch {
                matchup_id: matchup_id.to_string(),
                issued_to: secret.judge_id,
            });
        }
        let (model_a, model_b) = pair_key(&secret.model_left, &secret.model_right);
        let winner = match outcome {
            SideOutcome::Left => Some(&secret.model_left),
            SideOutcome::Right => Some(&secret.model_right),
            SideOutcome::Both => None,
        };
        let outcome = match winner {
            None => Outcome::Both,
            Some(w) if *w == model_a => Outcome::A,
            Some(_) => Outcome::B,
        };
        let vote = Vote {
            vote_id: matchup_id.to_string(),
            judge_id: judge_id.to_string(),
            category: self.store.questions[&secret.question_id].category.clone(),
            question_id: secret.question_id,
            model_a,
            model_b,
            outcome,
            timestamp: Utc::now(),
        };
        let io_err = |source| ArenaError::Io { path: self.log_path.clone(), source };
        write_vote_line(&mut state.log, &vote)?;
        state.log.flush().map_err(io_err)?;
        state.log.sync_data().map_err(io_err)?;

        state.secrets.remove(matchup_id);
        state.consumed.insert(matchup_id.to_string());
        *state.pair_counts.entry(pair_key(&vote.model_a, &vote.model_b)).or_default() += 1;
        Arc::make_mut(&mut state.votes).push(vote.clone());
        Ok(vote)
    }

    /// Current votes; later appends do not affect the returned snapshot.
    pub fn snapshot(&self) -> Arc<Vec<Vote>> {
        Arc::clone(&self.state.lock().expect("arena lock poisoned").votes)
    }

    pub fn outstanding_tickets(&self) -> usize {
        self.state.lock().expect("arena lock poisoned").secrets.len()
    }

    /// Models ranked by permutation-averaged ELO, highest first.
    pub fn leaderboard(&self) -> Result<Vec<LeaderboardRow>, ArenaError> {
        leaderboard(&self.snapshot(), &self.elo)
    }

    pub fn progress(&self) -> Progress {
        let state = self.state.lock().expect("arena lock poisoned");
        let mut per_judge = BTreeMap::new();
        for v in state.votes.iter() {
            *per_judge.entry(v.judge_id.clone()).or_default() += 1;
        }
        let per_pair = state
            .pair_counts
            .iter()
            .map(|((a, b), n)| (format!("{a} vs {b}"), *n))
            .collect();
        Progress { total_votes: state.votes.len(), per_judge, per_pair }
    }
}

pub fn leaderboard(votes: &[Vote], elo: &EloConfig) -> Result<Vec<LeaderboardRow>, ArenaError> {
    if votes.is_empty() {
        return Ok(Vec::new());
    }
    let report = elo_permuted(votes, elo)?;
    let winpct: BTreeMap<String, _> = win_pct_all(votes).into_iter().map(|w| (w.model.clone(), w)).collect();
    Ok(report
        .ratings
        .into_iter()
        .map(|r| {
            let w = &winpct[&r.model];
            LeaderboardRow {
                elo_mean: r.mean_rating,
                ci_plus: r.ci_plus,
                ci_minus: r.ci_minus,
                winpct: w.value,
                votes: w.total,
                model: r.model,
            }
        })
        .collect())
}
