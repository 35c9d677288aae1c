//! Streaming client for chat-completions style HTTP endpoints.
//!
//! Each call is stateless: the full serialized context is sent as a single
//! user message and the streamed deltas are accumulated until the chunk
//! ceiling is reached or the provider stops. A response whose text starts with
//! the configured idle marker maps to the idle chunk; a provider `stop`
//! finish reason, or an end-of-response marker in the text, marks the chunk
//! terminal.

use std::io::{BufRead, BufReader};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::debug;

use super::{BackendError, Chunk, GenerationRequest, GeneratorBackend};
use crate::session::GenConfig;
use crate::slicer::{Tokenizer, EOS_MARKER, IDLE_MARKER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub idle_marker: String,
}

impl Default for RemoteBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "duplex".into(),
            api_key_env: None,
            timeout_secs: 30.0,
            idle_marker: IDLE_MARKER.into(),
        }
    }
}

impl RemoteBackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!(
                "timeout_secs must be positive, got {}",
                self.timeout_secs
            ));
        }
        if self.endpoint.is_empty() {
            return Err("endpoint must not be empty".into());
        }
        Ok(())
    }
}

/// Masks all but the first four characters of a secret.
pub fn redact(secret: &str) -> String {
    let head: String = secret.chars().take(4).collect();
    format!("{head}***")
}

pub struct RemoteBackend {
    cfg: RemoteBackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

fn map_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() || e.is_connect() {
        BackendError::Timeout(e.to_string())
    } else if let Some(status) = e.status() {
        BackendError::Http {
            status: status.as_u16(),
            body: e.to_string(),
        }
    } else {
        BackendError::Unavailable(e.to_string())
    }
}

impl RemoteBackend {
    pub fn new(cfg: RemoteBackendConfig) -> Result<Self, BackendError> {
        cfg.validate().map_err(BackendError::Unavailable)?;
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .connect_timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Ok(Self {
            cfg,
            client,
            api_key,
        })
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.cfg
    }

    fn request_body(
        &self,
        content: &str,
        gen: &GenConfig,
        stream: bool,
        max_tokens: Option<usize>,
    ) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": content }],
            "stream": stream,
            "temperature": gen.temperature,
            "top_p": gen.top_p,
        });
        if gen.top_k > 0 {
            body["top_k"] = json!(gen.top_k);
        }
        if let Some(n) = max_tokens {
            body["max_tokens"] = json!(n);
        }
        body
    }

    fn post(&self, body: &Value) -> Result<reqwest::blocking::Response, BackendError> {
        debug!(
            endpoint = %self.cfg.endpoint,
            auth = %self.api_key.as_deref().map(redact).unwrap_or_else(|| "none".into()),
            body = %body,
            "chat completion request"
        );
        let mut rb = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(map_transport)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Http {
                status: status.as_u16(),
                body,
            });
        }
        Ok(resp)
    }

    /// Single non-streaming completion of `prompt`; used by rewriters and
    /// annotators.
    pub fn complete(&self, prompt: &str, gen: &GenConfig) -> Result<String, BackendError> {
        let body = self.request_body(prompt, gen, false, None);
        let resp = self.post(&body)?;
        let text = resp.text().map_err(map_transport)?;
        debug!(body = %text, "chat completion response");
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| {
                BackendError::MalformedResponse("missing choices[0].message.content".into())
            })
    }

    fn finish(&self, text: &str, stopped: bool, tok: &dyn Tokenizer, max_units: usize) -> Chunk {
        let trimmed = text.trim_start();
        if !self.cfg.idle_marker.is_empty() && trimmed.starts_with(&self.cfg.idle_marker) {
            return Chunk::Idle;
        }
        let (body, eos) = match trimmed.find(EOS_MARKER) {
            Some(i) => (&trimmed[..i], true),
            None => (trimmed, false),
        };
        let tokens = tok.tokenize(body);
        if tokens.is_empty() {
            return Chunk::Idle;
        }
        if tokens.len() > max_units {
            return Chunk::text(tok.detokenize(&tokens[..max_units]), false);
        }
        Chunk::text(tok.detokenize(&tokens), eos || stopped)
    }
}

impl GeneratorBackend for RemoteBackend {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        let max_units = req.config.max_tokens_per_chunk;
        let body = self.request_body(&req.context.text, req.config, true, Some(max_units));
        let resp = self.post(&body)?;
        let reader = BufReader::new(resp);
        let mut acc = String::new();
        let mut stopped = false;
        let mut saw_data = false;
        for line in reader.lines() {
            if req.cancel.is_cancelled() {
                return Err(BackendError::Cancelled);
            }
            let line = line.map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut {
                    BackendError::Timeout(e.to_string())
                } else {
                    BackendError::MalformedResponse(e.to_string())
                }
            })?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            saw_data = true;
            let v: Value = serde_json::from_str(data)
                .map_err(|e| BackendError::MalformedResponse(format!("{e}: {data}")))?;
            let choice = v["choices"]
                .get(0)
                .ok_or_else(|| BackendError::MalformedResponse(format!("no choices: {data}")))?;
            if let Some(delta) = choice["delta"]["content"].as_str() {
                acc.push_str(delta);
            }
            match choice["finish_reason"].as_str() {
                Some("stop") => {
                    stopped = true;
                    break;
                }
                Some(_) => break,
                None => {}
            }
            // Provider already produced more than one chunk's worth.
            if req.tokenizer.count(&acc) > max_units || acc.contains(EOS_MARKER) {
                break;
            }
        }
        if req.cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        if !saw_data {
            return Err(BackendError::MalformedResponse(
                "stream carried no data events".into(),
            ));
        }
        debug!(text = %acc, stopped, "chat completion stream finished");
        Ok(self.finish(&acc, stopped, req.tokenizer, max_units))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::backends::CancelToken;
    use crate::session::ContextEncoding;
    use crate::slicer::{Role, Slice, WhitespaceTokenizer};

    /// Serves one canned HTTP response and returns the raw request it saw.
    pub(crate) fn serve_once(
        status: &str,
        content_type: &str,
        body: String,
    ) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let status = status.to_owned();
        let content_type = content_type.to_owned();
        let h = thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            loop {
                let n = sock.read(&mut tmp).unwrap();
                buf.extend_from_slice(&tmp[..n]);
                let s = String::from_utf8_lossy(&buf);
                if let Some(end) = s.find("\r\n\r\n") {
                    let len = s[..end]
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= end + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let resp = format!(
                "HTTP/1.1 {status}\r\ncontent-type: {content_type}\r\nconnection: close\r\ncontent-length: {}\r\n\r\n{body}",
                body.len()
            );
            sock.write_all(resp.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).into_owned()
        });
        (format!("http://{addr}/v1/chat/completions"), h)
    }

    fn sse(deltas: &[&str], finish: Option<&str>) -> String {
        let mut out = String::new();
        for (i, d) in deltas.iter().enumerate() {
            let fr = if i + 1 == deltas.len() { finish } else { None };
            let v = json!({"choices": [{"delta": {"content": d}, "finish_reason": fr}]});
            out.push_str(&format!("data: {v}\n\n"));
        }
        out.push_str("data: [DONE]\n\n");
        out
    }

    fn run(endpoint: String) -> Result<Chunk, BackendError> {
        let backend = RemoteBackend::new(RemoteBackendConfig {
            endpoint,
            timeout_secs: 2.0,
            ..Default::default()
        })
        .unwrap();
        let ctx = ContextEncoding::encode(&[], &Slice::user_words("hello ?").unwrap());
        backend.generate(&GenerationRequest {
            context: &ctx,
            config: &GenConfig::default(),
            tokenizer: &WhitespaceTokenizer,
            cancel: &CancelToken::new(),
        })
    }

    #[test]
    fn four_tokens_then_stop_is_terminal() {
        let (url, h) = serve_once(
            "200 OK",
            "text/event-stream",
            sse(&["Hi", " there", " my", " friend"], Some("stop")),
        );
        assert_eq!(run(url).unwrap(), Chunk::text("Hi there my friend", true));
        let req = h.join().unwrap();
        assert!(req.contains("\"stream\":true"));
        assert!(req.contains("\"temperature\":0.8"));
        assert!(req.contains("\"max_tokens\":10"));
        // top_k = 0 means disabled and is not sent.
        assert!(!req.contains("top_k"));
    }

    #[test]
    fn long_stream_is_truncated() {
        let words: Vec<String> = (0..25).map(|i| format!(" w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let (url, _h) = serve_once("200 OK", "text/event-stream", sse(&refs, Some("length")));
        assert_eq!(
            run(url).unwrap(),
            Chunk::text("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9", false)
        );
    }

    #[test]
    fn idle_marker_maps_to_idle() {
        let (url, _h) = serve_once(
            "200 OK",
            "text/event-stream",
            sse(&["<idle>"], Some("stop")),
        );
        assert_eq!(run(url).unwrap(), Chunk::Idle);
    }

    #[test]
    fn eos_marker_terminates() {
        let (url, _h) = serve_once(
            "200 OK",
            "text/event-stream",
            sse(&["done now", "<eos>"], None),
        );
        assert_eq!(run(url).unwrap(), Chunk::text("done now", true));
    }

    #[test]
    fn http_error_is_surfaced() {
        let (url, _h) = serve_once("503 Service Unavailable", "text/plain", "overloaded".into());
        assert_eq!(
            run(url).unwrap_err(),
            BackendError::Http {
                status: 503,
                body: "overloaded".into()
            }
        );
    }

    #[test]
    fn malformed_stream_is_surfaced() {
        let (url, _h) = serve_once("200 OK", "text/event-stream", "data: {not json}\n\n".into());
        assert!(matches!(
            run(url).unwrap_err(),
            BackendError::MalformedResponse(_)
        ));
    }

    #[test]
    fn unreachable_is_timeout() {
        // Bind then drop to obtain a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let err = run(format!("http://127.0.0.1:{port}/v1/chat/completions")).unwrap_err();
        assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let _keep = thread::spawn(move || {
            let conn = listener.accept();
            thread::sleep(Duration::from_secs(3));
            drop(conn);
        });
        let backend = RemoteBackend::new(RemoteBackendConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            timeout_secs: 0.3,
            ..Default::default()
        })
        .unwrap();
        let ctx = ContextEncoding::encode(&[], &Slice::idle(Role::User));
        let err = backend
            .generate(&GenerationRequest {
                context: &ctx,
                config: &GenConfig::default(),
                tokenizer: &WhitespaceTokenizer,
                cancel: &CancelToken::new(),
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    }

    #[test]
    fn non_streaming_completion() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": "fused"}}]})
            .to_string();
        let (url, _h) = serve_once("200 OK", "application/json", body);
        let backend = RemoteBackend::new(RemoteBackendConfig {
            endpoint: url,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(
            backend.complete("prompt", &GenConfig::default()).unwrap(),
            "fused"
        );
    }

    #[test]
    fn config_validation_and_redaction() {
        let bad = RemoteBackendConfig {
            timeout_secs: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(redact("sk-abcdef"), "sk-a***");
    }
}
