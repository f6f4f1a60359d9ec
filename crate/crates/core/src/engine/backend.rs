//! Policy backends: a rendered prompt goes in, one raw turn comes out.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::script::Script;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Transport failures, timeouts, bad responses; retries exhausted.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
}

/// One stochastic draw from the agent. Implementations must be shareable
/// across collection workers.
pub trait Policy: Send + Sync {
    fn next_action(&self, prompt: &str) -> std::result::Result<String, BackendError>;
}

/// OpenAI-style chat completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000`.
    pub endpoint: String,
    pub path: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            path: "/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.8,
            max_tokens: 512,
            api_key_env: None,
            timeout_secs: 30,
            retries: 2,
            backoff_ms: 500,
        }
    }
}

pub struct HttpPolicy {
    config: HttpConfig,
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpPolicy {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if !(0.0..=2.0).contains(&config.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", config.temperature)));
        }
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let url = format!("{}/{}", config.endpoint.trim_end_matches('/'), config.path.trim_start_matches('/'));
        Ok(Self { config, url, token, client })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, (bool, String)> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        let json: serde_json::Value = resp.json().map_err(|e| (true, format!("bad response body: {e}")))?;
        json.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".into()))
    }
}

impl Policy for HttpPolicy {
    fn next_action(&self, prompt: &str) -> std::result::Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(BackendError::Unavailable(format!("{}: {last}", self.url)))
    }
}

/// Backend section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// `script` is `optimal`, `fallback`, `self_reflecting`, or a TOML path.
    Scripted { script: String },
    HttpChat(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted { script: "fallback".into() }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Policy>> {
        Ok(match self {
            BackendConfig::Scripted { script } => Box::new(match script.as_str() {
                "optimal" => Script::optimal(),
                "fallback" => Script::with_fallbacks(),
                "self_reflecting" => Script::self_reflecting(),
                path => Script::from_toml(&std::fs::read_to_string(path)?)?,
            }),
            BackendConfig::HttpChat(cfg) => Box::new(HttpPolicy::new(cfg.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    use super::*;

    /// Serves `responses` in order, one connection each, and reports each
    /// request body.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((headers, String::from_utf8(buf).unwrap())).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (addr, rx)
    }

    fn reply(content: &str) -> String {
        serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
    }

    #[test]
    fn posts_chat_request_with_sampling_temperature() {
        let (addr, rx) = mock_server(vec![(200, reply("<done></done>"))]);
        std::env::set_var("DWIM_TEST_KEY_A", "sekrit");
        let policy = HttpPolicy::new(HttpConfig {
            endpoint: addr,
            model: "m1".into(),
            api_key_env: Some("DWIM_TEST_KEY_A".into()),
            ..HttpConfig::default()
        })
        .unwrap();
        assert_eq!(policy.next_action("hello").unwrap(), "<done></done>");
        let (headers, body) = rx.recv().unwrap();
        assert!(headers.starts_with("POST /v1/chat/completions"), "{headers}");
        assert!(headers.to_ascii_lowercase().contains("authorization: bearer sekrit"));
        let body: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body["temperature"], 0.8);
        assert_eq!(body["model"], "m1");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (addr, rx) = mock_server(vec![(503, "{}".into()), (500, "{}".into()), (200, reply("<thought>x</thought>"))]);
        let policy = HttpPolicy::new(HttpConfig { endpoint: addr, backoff_ms: 1, ..HttpConfig::default() }).unwrap();
        assert_eq!(policy.next_action("p").unwrap(), "<thought>x</thought>");
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let (addr, _rx) = mock_server(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let policy = HttpPolicy::new(HttpConfig { endpoint: addr, backoff_ms: 1, ..HttpConfig::default() }).unwrap();
        assert!(matches!(policy.next_action("p"), Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn unreachable_endpoint_is_unavailable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let policy = HttpPolicy::new(HttpConfig {
            endpoint: format!("http://127.0.0.1:{port}"),
            retries: 0,
            ..HttpConfig::default()
        })
        .unwrap();
        assert!(matches!(policy.next_action("p"), Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn missing_key_variable_is_config_error() {
        let cfg = HttpConfig { api_key_env: Some("DWIM_TEST_SURELY_UNSET".into()), ..HttpConfig::default() };
        assert!(matches!(HttpPolicy::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn backend_config_toml() {
        let cfg: BackendConfig = toml::from_str("kind = \"scripted\"\nscript = \"optimal\"").unwrap();
        assert_eq!(cfg, BackendConfig::Scripted { script: "optimal".into() });
        let cfg: BackendConfig = toml::from_str("kind = \"http_chat\"\nendpoint = \"http://x\"\ntemperature = 0.5").unwrap();
        let BackendConfig::HttpChat(h) = cfg else { panic!() };
        assert_eq!(h.temperature, 0.5);
        assert_eq!(h.retries, 2);
        assert!(BackendConfig::Scripted { script: "optimal".into() }.build().is_ok());
    }
}
