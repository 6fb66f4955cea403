//! JSON API over [`Arena`].
//!
//! | route                          | result                         |
//! |--------------------------------|--------------------------------|
//! | `GET /api/matchup?judge_id=J`  | [`MatchupTicket`]              |
//! | `POST /api/vote`               | stored [`Vote`]                |
//! | `GET /api/leaderboard`         | `[LeaderboardRow]`             |
//! | `GET /api/progress`            | [`Progress`]                   |
//! | `GET /healthz`                 | `{"status":"ok"}`              |
//!
//! [`MatchupTicket`]: super::service::MatchupTicket
//! [`Vote`]: super::vote::Vote
//! [`Progress`]: super::service::Progress

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::service::{Arena, ArenaError, SideOutcome};

impl IntoResponse for ArenaError {
    fn into_response(self) -> Response {
        let status = match &self {
            ArenaError::Exhausted | ArenaError::AlreadyVoted(_) => StatusCode::CONFLICT,
            ArenaError::UnknownTicket(_) => StatusCode::NOT_FOUND,
            ArenaError::JudgeMismatch { .. } => StatusCode::FORBIDDEN,
            ArenaError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct MatchupQuery {
    judge_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    matchup_id: String,
    judge_id: String,
    outcome: SideOutcome,
}

async fn matchup(State(arena): State<Arc<Arena>>, Query(q): Query<MatchupQuery>) -> Response {
    let judge = q.judge_id.unwrap_or_default();
    match arena.next_matchup(&judge) {
        Ok(ticket) => Json(ticket).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn vote(State(arena): State<Arc<Arena>>, body: Bytes) -> Response {
    let body: VoteBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return ArenaError::BadRequest(e.to_string()).into_response(),
    };
    match arena.submit_vote(&body.matchup_id, &body.judge_id, body.outcome) {
        Ok(vote) => Json(vote).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn leaderboard(State(arena): State<Arc<Arena>>) -> Response {
    match arena.leaderboard() {
        Ok(rows) => Json(rows).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(arena): State<Arc<Arena>>) -> Response {
    Json(arena.progress()).into_response()
}

async fn health() -> Response {
    Json(json!({ "status": "ok" })).into_response()
}

pub fn router(arena: Arc<Arena>) -> Router {
    Router::new()
        .route("/api/matchup", get(matchup))
        .route("/api/vote", post(vote))
        .route("/api/leaderboard", get(leaderboard))
        .route("/api/progress", get(progress))
        .route("/healthz", get(health))
        .with_state(arena)
}
