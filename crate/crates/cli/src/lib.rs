//! Command implementations behind the `forge` and `harness` binaries.

pub mod forge_cli;
pub mod harness_cli;

use clap::Args;
use duplex_core::backends::{RemoteBackend, RemoteBackendConfig};
use duplex_core::session::GenConfig;

/// Connection settings for a chat-completions endpoint.
#[derive(Args, Debug, Clone)]
pub struct RemoteArgs {
    #[arg(
        long,
        env = "DUPLEX_BACKEND_ENDPOINT",
        default_value = "http://127.0.0.1:8000/v1/chat/completions"
    )]
    pub endpoint: String,
    #[arg(long, default_value = "duplex")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[arg(long, env = "DUPLEX_API_KEY_ENV")]
    pub api_key_env: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 0.8)]
    pub temperature: f64,
}

impl RemoteArgs {
    pub fn backend(&self) -> anyhow::Result<RemoteBackend> {
        Ok(RemoteBackend::new(RemoteBackendConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
            ..Default::default()
        })?)
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            temperature: self.temperature,
            ..Default::default()
        }
    }
}

/// Logs go to stderr, filtered by `RUST_LOG` (default `warn`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}
