//! `duplexd`: serves `/duplex` and `/health`.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use duplex_core::backends::GeneratorBackend;
use duplex_service::{Service, ServiceConfig, TickSource};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(version, about = "Websocket server for live duplex sessions")]
struct Args {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address; overrides the config file and environment.
    #[arg(long)]
    bind: Option<String>,
    /// Emit logs as JSON lines.
    #[arg(long)]
    log_json: bool,
}

// The remote backend owns a blocking HTTP client, which must be created and
// dropped outside the async runtime; hence the manual runtime.
fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    if args.log_json {
        tracing_subscriber::fmt()
            .json()
            .with_env_filter(filter)
            .init();
    } else {
        tracing_subscriber::fmt().with_env_filter(filter).init();
    }

    let mut cfg = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(bind) = args.bind {
        cfg.bind = bind;
    }
    cfg.validate()?;
    let backend = cfg.backend.build()?;
    let rt = tokio::runtime::Runtime::new()?;
    let result = rt.block_on(serve(&cfg, backend.clone()));
    drop(rt);
    drop(backend);
    result
}

async fn serve(cfg: &ServiceConfig, backend: Arc<dyn GeneratorBackend>) -> anyhow::Result<()> {
    let svc = Service::new(cfg, backend, TickSource::Real)?;
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .with_context(|| format!("binding {}", cfg.bind))?;
    tracing::info!(addr = %listener.local_addr()?, transcripts = %cfg.transcript_dir.display(), "listening");
    svc.serve(listener, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
