use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, Tag};
use crate::kg::Iri;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallUsage {
    pub entity: Iri,
    pub tag: Tag,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

/// Cumulative usage per source entity and prompt kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenLedger {
    per_entity: BTreeMap<Iri, BTreeMap<Tag, Usage>>,
    calls: Vec<CallUsage>,
}

impl TokenLedger {
    pub fn record(&mut self, entity: &Iri, tag: Tag, response: &ChatResponse) {
        let u = self.per_entity.entry(entity.clone()).or_default().entry(tag).or_default();
        u.prompt_tokens += response.prompt_tokens;
        u.completion_tokens += response.completion_tokens;
        u.calls += 1;
        self.calls.push(CallUsage {
            entity: entity.clone(),
            tag,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            estimated: response.estimated,
        });
    }

    pub fn entities(&self) -> impl Iterator<Item = &Iri> {
        self.per_entity.keys()
    }

    pub fn by_tag(&self, entity: &Iri) -> Option<&BTreeMap<Tag, Usage>> {
        self.per_entity.get(entity)
    }

    pub fn entity_total(&self, entity: &Iri) -> Usage {
        let mut total = Usage::default();
        for u in self.per_entity.get(entity).into_iter().flat_map(|m| m.values()) {
            total.add(u);
        }
        total
    }

    pub fn total(&self) -> Usage {
        let mut total = Usage::default();
        for u in self.per_entity.values().flat_map(|m| m.values()) {
            total.add(u);
        }
        total
    }

    pub fn calls(&self) -> &[CallUsage] {
        &self.calls
    }

    pub fn any_estimated(&self) -> bool {
        self.calls.iter().any(|c| c.estimated)
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (entity, tags) in &other.per_entity {
            let mine = self.per_entity.entry(entity.clone()).or_default();
            for (tag, usage) in tags {
                mine.entry(*tag).or_default().add(usage);
            }
        }
        self.calls.extend(other.calls.iter().cloned());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub entities: usize,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub avg_tokens_per_entity: f64,
    pub per_entity: BTreeMap<Iri, u64>,
    pub estimated: bool,
}

/// Totals and the average tokens per touched entity (0 for an empty ledger).
pub fn ledger_summary(ledger: &TokenLedger) -> LedgerSummary {
    let per_entity: BTreeMap<Iri, u64> =
        ledger.per_entity.keys().map(|e| (e.clone(), ledger.entity_total(e).total())).collect();
    let total = ledger.total();
    let avg = if per_entity.is_empty() { 0.0 } else { total.total() as f64 / per_entity.len() as f64 };
    LedgerSummary {
        entities: per_entity.len(),
        calls: total.calls,
        prompt_tokens: total.prompt_tokens,
        completion_tokens: total.completion_tokens,
        total_tokens: total.total(),
        avg_tokens_per_entity: avg,
        per_entity,
        estimated: ledger.any_estimated(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(p: u64, c: u64) -> ChatResponse {
        ChatResponse { text: String::new(), prompt_tokens: p, completion_tokens: c, estimated: false }
    }

    #[test]
    fn average_of_two_entities() {
        let mut l = TokenLedger::default();
        let a = Iri::new("a").unwrap();
        let b = Iri::new("b").unwrap();
        l.record(&a, Tag::Plan, &resp(100, 20));
        l.record(&a, Tag::Align, &resp(400, 80));
        l.record(&b, Tag::Align, &resp(600, 144));
        let s = ledger_summary(&l);
        assert_eq!(s.per_entity[&a], 600);
        assert_eq!(s.per_entity[&b], 744);
        assert_eq!(s.avg_tokens_per_entity, 672.0);
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(ledger_summary(&TokenLedger::default()).avg_tokens_per_entity, 0.0);
        let mut l = TokenLedger::default();
        l.record(&Iri::new("a").unwrap(), Tag::Align, &resp(100, 20));
        assert_eq!(ledger_summary(&l).avg_tokens_per_entity, 120.0);
    }

    #[test]
    fn merge_adds() {
        let a = Iri::new("a").unwrap();
        let mut l1 = TokenLedger::default();
        l1.record(&a, Tag::Align, &resp(1, 2));
        let mut l2 = TokenLedger::default();
        l2.record(&a, Tag::Align, &resp(3, 4));
        l1.merge(&l2);
        assert_eq!(l1.entity_total(&a), Usage { prompt_tokens: 4, completion_tokens: 6, calls: 2 });
        assert_eq!(l1.calls().len(), 2);
    }
}
