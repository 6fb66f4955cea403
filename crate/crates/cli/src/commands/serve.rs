use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use corpuslab_core::arena::http::router;
use corpuslab_core::arena::service::{Arena, ArenaConfig, ResponseStore};
use tower_http::services::ServeDir;

use crate::{EloArgs, Globals};

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Questions JSONL (`question_id`, `text`, `category`).
    #[arg(long, env = "CORPUSLAB_QUESTIONS")]
    questions: Option<PathBuf>,
    /// Responses JSONL (`model`, `question_id`, `response`).
    #[arg(long, env = "CORPUSLAB_RESPONSES")]
    responses: Option<PathBuf>,
    /// Append-only vote log; created if missing. Defaults to `<out-dir>/votes.jsonl`.
    #[arg(long, env = "CORPUSLAB_VOTES")]
    votes: Option<PathBuf>,
    #[arg(long, env = "CORPUSLAB_LISTEN")]
    listen: Option<String>,
    /// Static judge UI bundle served at `/`.
    #[arg(long, env = "CORPUSLAB_UI_DIR")]
    ui_dir: Option<PathBuf>,
    #[command(flatten)]
    elo: EloArgs,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

pub fn run(g: &Globals, args: ServeArgs) -> anyhow::Result<()> {
    let file = &g.file.serve;
    let pick = |flag: &Option<PathBuf>, cfg: &Option<String>, what: &str| {
        flag.clone()
            .or_else(|| cfg.as_ref().map(PathBuf::from))
            .ok_or_else(|| anyhow::anyhow!("--{what} is required"))
    };
    let questions = pick(&args.questions, &file.questions, "questions")?;
    let responses = pick(&args.responses, &file.responses, "responses")?;
    let votes = args
        .votes
        .clone()
        .or_else(|| file.votes.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| g.out_dir.join("votes.jsonl"));
    let listen = args.listen.clone().or_else(|| file.listen.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let ui_dir = args.ui_dir.clone().or_else(|| file.ui_dir.as_ref().map(PathBuf::from));

    let store = ResponseStore::load(&questions, &responses)?;
    if let Some(parent) = votes.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let config = ArenaConfig { seed: g.seed, elo: args.elo.resolve(&g.file, g.seed) };
    let arena = Arc::new(Arena::open(store, &votes, config)?);

    let mut app = router(arena.clone());
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, votes = %votes.display(), "arena started");
        axum::serve(listener, app).with_graceful_shutdown(shutdown_signal()).await?;
        tracing::info!(total = arena.snapshot().len(), "arena stopped");
        anyhow::Ok(())
    })
}
