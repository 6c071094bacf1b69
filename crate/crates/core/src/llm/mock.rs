//! Deterministic backends for tests and offline runs.
//!
//! Replies are pure functions of the request tag, the entity and the script,
//! so identical runs yield identical transcripts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatBackend, ChatRequest, ChatResponse, LlmError, Tag};
use crate::kg::Iri;

/// Path the oracle answers every planning and rewriting request with.
pub const ORACLE_PLAN: &str = "1. AttributeTripleSelector\n2. RelationTripleSelector\n3. EntityAlignmentTool";

/// Reply table: per-entity overrides fall back to per-tag defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Script {
    pub default: BTreeMap<Tag, String>,
    pub entities: BTreeMap<Iri, BTreeMap<Tag, String>>,
    /// Fixed `(prompt, completion)` usage; estimated from the text otherwise.
    pub usage: Option<(u64, u64)>,
}

impl Script {
    pub fn lookup(&self, entity: &Iri, tag: Tag) -> Option<&str> {
        self.entities
            .get(entity)
            .and_then(|m| m.get(&tag))
            .or_else(|| self.default.get(&tag))
            .map(String::as_str)
    }
}

fn usage_for(script_usage: Option<(u64, u64)>, request: &ChatRequest, text: &str) -> (u64, u64) {
    script_usage.unwrap_or_else(|| (estimate_tokens(&request.user_text), estimate_tokens(text)))
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    script: Script,
}

impl ScriptedMock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: Script) -> Self {
        Self { script }
    }

    pub fn reply(mut self, tag: Tag, text: impl Into<String>) -> Self {
        self.script.default.insert(tag, text.into());
        self
    }

    pub fn reply_for(mut self, entity: &Iri, tag: Tag, text: impl Into<String>) -> Self {
        self.script.entities.entry(entity.clone()).or_default().insert(tag, text.into());
        self
    }

    pub fn with_usage(mut self, prompt: u64, completion: u64) -> Self {
        self.script.usage = Some((prompt, completion));
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

impl ChatBackend for ScriptedMock {
    fn name(&self) -> &str {
        "scripted-mock"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = self
            .script
            .lookup(&request.entity, request.tag)
            .ok_or_else(|| LlmError::MissingScript { entity: request.entity.clone(), tag: request.tag })?
            .to_string();
        let (prompt_tokens, completion_tokens) = usage_for(self.script.usage, request, &text);
        Ok(ChatResponse { text, prompt_tokens, completion_tokens, estimated: false })
    }
}

/// Answers alignment and reflection with the gold target, planning and
/// rewriting with [`ORACLE_PLAN`].
#[derive(Debug, Clone, Default)]
pub struct OracleMock {
    gold: BTreeMap<Iri, Iri>,
    usage: Option<(u64, u64)>,
}

impl OracleMock {
    pub fn new(gold: impl IntoIterator<Item = (Iri, Iri)>) -> Self {
        Self { gold: gold.into_iter().collect(), usage: None }
    }

    pub fn with_usage(mut self, prompt: u64, completion: u64) -> Self {
        self.usage = Some((prompt, completion));
        self
    }
}

impl ChatBackend for OracleMock {
    fn name(&self) -> &str {
        "oracle-mock"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let gold = self.gold.get(&request.entity).ok_or_else(|| LlmError::MissingGold(request.entity.clone()))?;
        let text = match request.tag {
            Tag::Align | Tag::Reflect => format!("[{gold}]"),
            Tag::Plan | Tag::Rewrite => ORACLE_PLAN.to_string(),
        };
        let (prompt_tokens, completion_tokens) = usage_for(self.usage, request, &text);
        Ok(ChatResponse { text, prompt_tokens, completion_tokens, estimated: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn req(entity: &str, tag: Tag) -> ChatRequest {
        ChatRequest {
            entity: iri(entity),
            tag,
            system_text: String::new(),
            user_text: "prompt".into(),
            temperature: 0.1,
            max_tokens: 64,
        }
    }

    #[test]
    fn oracle_answers() {
        let m = OracleMock::new([(iri("s1"), iri("t1"))]);
        assert_eq!(m.send(&req("s1", Tag::Align)).unwrap().text, "[t1]");
        assert_eq!(m.send(&req("s1", Tag::Reflect)).unwrap().text, "[t1]");
        assert_eq!(
            m.send(&req("s1", Tag::Plan)).unwrap().text,
            "1. AttributeTripleSelector\n2. RelationTripleSelector\n3. EntityAlignmentTool"
        );
        assert_eq!(m.send(&req("s9", Tag::Align)), Err(LlmError::MissingGold(iri("s9"))));
    }

    #[test]
    fn entity_override_wins() {
        let m = ScriptedMock::new().reply(Tag::Align, "[a]").reply_for(&iri("s2"), Tag::Align, "[b]");
        assert_eq!(m.send(&req("s1", Tag::Align)).unwrap().text, "[a]");
        assert_eq!(m.send(&req("s2", Tag::Align)).unwrap().text, "[b]");
        assert!(matches!(m.send(&req("s1", Tag::Reflect)), Err(LlmError::MissingScript { .. })));
    }

    #[test]
    fn script_json_round_trip() {
        let m = ScriptedMock::new().reply(Tag::Plan, ORACLE_PLAN).reply_for(&iri("x"), Tag::Reflect, "[y]");
        let json = serde_json::to_string(m.script()).unwrap();
        let back: Script = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, m.script());
    }
}
