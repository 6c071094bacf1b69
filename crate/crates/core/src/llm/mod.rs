//! Chat-completion gateway shared by the planner, executor and rewriter.
//!
//! Every call goes through a [`Gateway`], which applies the configured
//! sampling settings, enforces the concurrency cap and the optional token
//! budget, and records usage in a per-entity [`TokenLedger`].

mod http;
mod ledger;
mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Iri;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use ledger::{ledger_summary, CallUsage, LedgerSummary, TokenLedger, Usage};
pub use mock::{OracleMock, Script, ScriptedMock, ORACLE_PLAN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused request with status {status}: {body}")]
    BackendRefusal { status: u16, body: String },
    #[error("token budget exhausted ({used} of {budget} tokens used)")]
    BudgetExceeded { used: u64, budget: u64 },
    #[error("oracle has no gold target for {0}")]
    MissingGold(Iri),
    #[error("script has no {tag} reply for {entity}")]
    MissingScript { entity: Iri, tag: Tag },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Kind of prompt a request carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Plan,
    Align,
    Reflect,
    Rewrite,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::Plan, Tag::Align, Tag::Reflect, Tag::Rewrite];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Plan => "plan",
            Tag::Align => "align",
            Tag::Reflect => "reflect",
            Tag::Rewrite => "rewrite",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Source entity the call is made for; usage is booked under it.
    pub entity: Iri,
    pub tag: Tag,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Usage was estimated locally because the backend reported none.
    #[serde(default)]
    pub estimated: bool,
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// Rough token count: whitespace-separated words plus punctuation marks.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count();
    let punct = text.chars().filter(|c| c.is_ascii_punctuation()).count();
    (words + punct) as u64
}

/// Output caps per prompt kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxTokens {
    pub plan: u32,
    pub align: u32,
    pub reflect: u32,
    pub rewrite: u32,
}

impl Default for MaxTokens {
    fn default() -> Self {
        Self { plan: 64, align: 128, reflect: 128, rewrite: 64 }
    }
}

impl MaxTokens {
    pub fn for_tag(&self, tag: Tag) -> u32 {
        match tag {
            Tag::Plan => self.plan,
            Tag::Align => self.align,
            Tag::Reflect => self.reflect,
            Tag::Rewrite => self.rewrite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub temperature: f64,
    /// Forces temperature 0 regardless of `temperature`.
    pub deterministic: bool,
    pub max_tokens: MaxTokens,
    pub max_concurrency: usize,
    pub token_budget: Option<u64>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self { temperature: 0.1, deterministic: false, max_tokens: MaxTokens::default(), max_concurrency: 4, token_budget: None }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Backend plus settings, concurrency cap and token ledger.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    settings: GatewaySettings,
    ledger: Mutex<TokenLedger>,
    permits: Permits,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("backend", &self.backend.name()).field("settings", &self.settings).finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, settings: GatewaySettings) -> Self {
        let permits = Permits::new(settings.max_concurrency);
        Self { backend, settings, ledger: Mutex::new(TokenLedger::default()), permits }
    }

    pub fn with_defaults(backend: impl ChatBackend + 'static) -> Self {
        Self::new(Arc::new(backend), GatewaySettings::default())
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Builds a request from the gateway settings.
    pub fn request(&self, entity: &Iri, tag: Tag, user_text: String) -> ChatRequest {
        ChatRequest {
            entity: entity.clone(),
            tag,
            system_text: String::new(),
            user_text,
            temperature: if self.settings.deterministic { 0.0 } else { self.settings.temperature },
            max_tokens: self.settings.max_tokens.for_tag(tag),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty user text".into()));
        }
        if let Some(budget) = self.settings.token_budget {
            let used = self.ledger.lock().expect("ledger lock").total().total();
            if used >= budget {
                return Err(LlmError::BudgetExceeded { used, budget });
            }
        }
        let response = {
            let _permit = self.permits.acquire();
            self.backend.send(request)?
        };
        self.ledger.lock().expect("ledger lock").record(&request.entity, request.tag, &response);
        Ok(response)
    }

    /// Shorthand for [`Gateway::request`] followed by [`Gateway::complete`].
    pub fn ask(&self, entity: &Iri, tag: Tag, user_text: String) -> Result<ChatResponse, LlmError> {
        let request = self.request(entity, tag, user_text);
        self.complete(&request)
    }

    /// Usage booked so far under `entity` for `tag`.
    pub fn usage(&self, entity: &Iri, tag: Tag) -> Usage {
        let ledger = self.ledger.lock().expect("ledger lock");
        ledger.by_tag(entity).and_then(|m| m.get(&tag)).copied().unwrap_or_default()
    }

    pub fn ledger(&self) -> TokenLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    /// Returns the ledger and starts a fresh one.
    pub fn take_ledger(&self) -> TokenLedger {
        std::mem::take(&mut *self.ledger.lock().expect("ledger lock"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    #[test]
    fn scripted_echo_through_gateway() {
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Align, "[t1]"));
        let r = gw.ask(&iri("s1"), Tag::Align, "which?".into()).unwrap();
        assert_eq!(r.text, "[t1]");
        assert_eq!(gw.ledger().entity_total(&iri("s1")).calls, 1);
    }

    #[test]
    fn request_uses_settings() {
        let gw = Gateway::new(
            Arc::new(ScriptedMock::new()),
            GatewaySettings { deterministic: true, ..Default::default() },
        );
        let r = gw.request(&iri("s"), Tag::Reflect, "x".into());
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.max_tokens, 128);
        let gw = Gateway::with_defaults(ScriptedMock::new());
        assert_eq!(gw.request(&iri("s"), Tag::Plan, "x".into()).temperature, 0.1);
    }

    #[test]
    fn empty_prompt_rejected() {
        let gw = Gateway::with_defaults(ScriptedMock::new().reply(Tag::Plan, "x"));
        assert!(matches!(gw.ask(&iri("s"), Tag::Plan, "  ".into()), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn budget_stops_calls() {
        let mock = ScriptedMock::new().reply(Tag::Align, "[t]").with_usage(60, 40);
        let gw = Gateway::new(Arc::new(mock), GatewaySettings { token_budget: Some(150), ..Default::default() });
        let e = iri("s");
        gw.ask(&e, Tag::Align, "q".into()).unwrap();
        gw.ask(&e, Tag::Align, "q".into()).unwrap();
        assert_eq!(
            gw.ask(&e, Tag::Align, "q".into()),
            Err(LlmError::BudgetExceeded { used: 200, budget: 150 })
        );
    }

    #[test]
    fn estimate_counts_words_and_punctuation() {
        assert_eq!(estimate_tokens("1. Reflector"), 3);
        assert_eq!(estimate_tokens(""), 0);
    }
}
