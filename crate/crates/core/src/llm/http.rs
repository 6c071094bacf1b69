//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatBackend, ChatRequest, ChatResponse, LlmError};

pub const API_KEY_ENV: &str = "EA_AGENT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "Qwen3-32B".into(),
            api_key: None,
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(String),
    Fatal(LlmError),
}

/// Blocking HTTP backend. Retries transport failures and 5xx responses with
/// exponential backoff; 4xx responses fail immediately.
pub struct HttpBackend {
    agent: ureq::Agent,
    config: HttpConfig,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config }
    }

    /// Reads the API key from `EA_AGENT_API_KEY` when it is set.
    pub fn from_env(mut config: HttpConfig) -> Self {
        if config.api_key.is_none() {
            config.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        Self::new(config)
    }

    fn attempt(&self, url: &str, body: &WireRequest<'_>) -> Attempt {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status >= 500 {
            return Attempt::Retry(format!("status {status}: {text}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(LlmError::BackendRefusal { status, body: text });
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(LlmError::MalformedResponse(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().map(|c| c.message.content.unwrap_or_default()) else {
            return Attempt::Fatal(LlmError::MalformedResponse("no choices".into()));
        };
        let (prompt, completion) = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens))
            .unwrap_or((None, None));
        let estimated = prompt.is_none() || completion.is_none();
        let prompt_text: String = body.messages.iter().map(|m| m.content).collect::<Vec<_>>().join("\n");
        Attempt::Done(ChatResponse {
            prompt_tokens: prompt.unwrap_or_else(|| estimate_tokens(&prompt_text)),
            completion_tokens: completion.unwrap_or_else(|| estimate_tokens(&content)),
            text: content,
            estimated,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut messages = Vec::with_capacity(2);
        if !request.system_text.is_empty() {
            messages.push(WireMessage { role: "system", content: &request.system_text });
        }
        messages.push(WireMessage { role: "user", content: &request.user_text });
        let body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stream: false,
        };
        let url = self.config.url();
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&url, &body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("{} attempt {n}/{attempts} failed: {msg}", request.tag);
                    last = msg;
                    if n < attempts {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (n - 1)));
                    }
                }
            }
        }
        Err(LlmError::Transport { attempts, message: last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_building() {
        let mut c = HttpConfig { endpoint: "http://h:1/v1/".into(), ..Default::default() };
        assert_eq!(c.url(), "http://h:1/v1/chat/completions");
        c.endpoint = "http://h:1/v1/chat/completions".into();
        assert_eq!(c.url(), "http://h:1/v1/chat/completions");
    }
}
