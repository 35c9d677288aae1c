//! Server configuration: a TOML or JSON file plus environment overrides, and
//! per-session overrides sent with `open`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use duplex_core::backends::{
    GeneratorBackend, RemoteBackend, RemoteBackendConfig, ScriptedBackend, ScriptedRule,
};
use duplex_core::session::GenConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_BIND: &str = "DUPLEX_BIND";
pub const ENV_BACKEND_ENDPOINT: &str = "DUPLEX_BACKEND_ENDPOINT";
pub const ENV_API_KEY_ENV: &str = "DUPLEX_API_KEY_ENV";
pub const ENV_AUTH_TOKEN: &str = "DUPLEX_AUTH_TOKEN";
pub const ENV_TRANSCRIPT_DIR: &str = "DUPLEX_TRANSCRIPT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted {
        #[serde(default)]
        rule: ScriptedRule,
    },
    Remote(RemoteBackendConfig),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Scripted {
            rule: ScriptedRule::default(),
        }
    }
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn GeneratorBackend>, ConfigError> {
        Ok(match self {
            BackendSpec::Scripted { rule } => Arc::new(ScriptedBackend::new(rule.clone())),
            BackendSpec::Remote(cfg) => Arc::new(
                RemoteBackend::new(cfg.clone())
                    .map_err(|e| ConfigError::InvalidConfig(e.to_string()))?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub transcript_dir: PathBuf,
    /// Static token required on `/duplex` when set.
    pub auth_token: Option<String>,
    /// Defaults for every new session.
    pub session: GenConfig,
    pub backend: BackendSpec,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            transcript_dir: "transcripts".into(),
            auth_token: None,
            session: GenConfig::default(),
            backend: BackendSpec::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path` as JSON when its extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse = |reason: String| ConfigError::Parse {
            path: path.to_owned(),
            reason,
        };
        let cfg: Self = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies environment overrides. Setting the backend endpoint selects
    /// the remote backend.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(bind) = var(ENV_BIND) {
            self.bind = bind;
        }
        if let Some(dir) = var(ENV_TRANSCRIPT_DIR) {
            self.transcript_dir = dir.into();
        }
        if let Some(token) = var(ENV_AUTH_TOKEN) {
            self.auth_token = Some(token).filter(|t| !t.is_empty());
        }
        let endpoint = var(ENV_BACKEND_ENDPOINT);
        let key_env = var(ENV_API_KEY_ENV);
        if endpoint.is_none() && key_env.is_none() {
            return;
        }
        if endpoint.is_some() && !matches!(self.backend, BackendSpec::Remote(_)) {
            self.backend = BackendSpec::Remote(RemoteBackendConfig::default());
        }
        if let BackendSpec::Remote(remote) = &mut self.backend {
            if let Some(e) = endpoint {
                remote.endpoint = e;
            }
            if let Some(k) = key_env {
                remote.api_key_env = Some(k);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.session
            .validate()
            .map_err(|e| ConfigError::InvalidConfig(e.to_string()))?;
        if let BackendSpec::Remote(r) = &self.backend {
            r.validate().map_err(ConfigError::InvalidConfig)?;
        }
        Ok(())
    }
}

/// Per-session changes to the server defaults, sent as the `open` payload.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOverrides {
    pub tick_seconds: Option<f64>,
    pub max_tokens_per_chunk: Option<usize>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub max_context: Option<usize>,
    pub slicer_seed: Option<u64>,
}

impl SessionOverrides {
    pub fn parse(payload: Option<&str>) -> Result<Self, ConfigError> {
        match payload.map(str::trim) {
            None | Some("") => Ok(Self::default()),
            Some(p) => {
                serde_json::from_str(p).map_err(|e| ConfigError::InvalidConfig(e.to_string()))
            }
        }
    }

    pub fn apply(&self, base: &GenConfig) -> Result<GenConfig, ConfigError> {
        let mut c = base.clone();
        if let Some(v) = self.tick_seconds {
            c.tick_seconds = v;
        }
        if let Some(v) = self.max_tokens_per_chunk {
            c.max_tokens_per_chunk = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        if let Some(v) = self.top_p {
            c.top_p = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        if let Some(v) = self.max_context {
            c.max_context = v;
        }
        if let Some(v) = self.slicer_seed {
            c.slicer.rng_seed = v;
        }
        c.validate()
            .map_err(|e| ConfigError::InvalidConfig(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_match_session_defaults() {
        let c = SessionOverrides::default()
            .apply(&GenConfig::default())
            .unwrap();
        assert_eq!((c.tick_seconds, c.max_tokens_per_chunk), (2.0, 10));
    }

    #[test]
    fn zero_tick_is_invalid() {
        let o = SessionOverrides::parse(Some(r#"{"tick_seconds": 0}"#)).unwrap();
        assert!(matches!(
            o.apply(&GenConfig::default()),
            Err(ConfigError::InvalidConfig(_))
        ));
        assert!(SessionOverrides::parse(Some(r#"{"tick": 1}"#)).is_err());
        let o =
            SessionOverrides::parse(Some(r#"{"tick_seconds": 0.5, "slicer_seed": 3}"#)).unwrap();
        let c = o.apply(&GenConfig::default()).unwrap();
        assert_eq!((c.tick_seconds, c.slicer.rng_seed), (0.5, 3));
    }

    #[test]
    fn toml_and_json_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("duplexd.toml");
        fs::write(
            &t,
            r#"
bind = "0.0.0.0:9000"
[session]
tick_seconds = 1.5
[backend]
kind = "remote"
endpoint = "http://example.invalid/v1/chat/completions"
api_key_env = "MY_KEY"
"#,
        )
        .unwrap();
        let c = ServiceConfig::load(&t).unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.session.tick_seconds, 1.5);
        assert_eq!(c.session.max_tokens_per_chunk, 10);
        let BackendSpec::Remote(r) = &c.backend else {
            panic!("remote expected")
        };
        assert_eq!(r.api_key_env.as_deref(), Some("MY_KEY"));

        let j = dir.path().join("duplexd.json");
        fs::write(
            &j,
            r#"{"backend": {"kind": "scripted"}, "auth_token": "t"}"#,
        )
        .unwrap();
        let c = ServiceConfig::load(&j).unwrap();
        assert_eq!(c.backend, BackendSpec::default());
        assert_eq!(c.auth_token.as_deref(), Some("t"));

        fs::write(&t, "[session]\ntick_seconds = 0.0\n").unwrap();
        assert!(matches!(
            ServiceConfig::load(&t),
            Err(ConfigError::InvalidConfig(_))
        ));
        assert!(matches!(
            ServiceConfig::load(&dir.path().join("missing.toml")),
            Err(ConfigError::Io { .. })
        ));
    }

    #[test]
    fn env_overrides_backend() {
        let env: HashMap<&str, &str> = [
            (ENV_BACKEND_ENDPOINT, "http://10.0.0.1/v1/chat/completions"),
            (ENV_API_KEY_ENV, "OPENAI_KEY"),
            (ENV_BIND, "127.0.0.1:1"),
        ]
        .into();
        let mut c = ServiceConfig::default();
        c.apply_env(|k| env.get(k).map(|v| v.to_string()));
        assert_eq!(c.bind, "127.0.0.1:1");
        let BackendSpec::Remote(r) = &c.backend else {
            panic!("remote expected")
        };
        assert_eq!(r.endpoint, "http://10.0.0.1/v1/chat/completions");
        assert_eq!(r.api_key_env.as_deref(), Some("OPENAI_KEY"));

        let mut c = ServiceConfig::default();
        c.apply_env(|k| (k == ENV_API_KEY_ENV).then(|| "K".to_string()));
        assert_eq!(c.backend, BackendSpec::default());
    }
}
