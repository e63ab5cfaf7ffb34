//! Round and traffic accounting, totals plus per-scope breakdowns.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Communication rounds (one per exchange).
    pub rounds: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub elements_sent: u64,
}

impl Counters {
    fn record(&mut self, sent: u64, received: u64, elements: u64) {
        self.rounds += 1;
        self.bytes_sent += sent;
        self.bytes_received += received;
        self.elements_sent += elements;
    }
}

/// A round is credited to the totals once and to every distinct scope name
/// on the active stack once, so nested scopes with the same name do not
/// double-count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RoundLedger {
    pub total: Counters,
    pub per_tag: BTreeMap<String, Counters>,
    /// Secret elements opened with the reveal tag.
    pub reveals: u64,
    #[serde(skip)]
    stack: Vec<String>,
}

impl RoundLedger {
    pub fn enter(&mut self, tag: &str) {
        self.stack.push(tag.to_string());
    }

    pub fn exit(&mut self) {
        self.stack.pop();
    }

    pub fn record_round(&mut self, sent: u64, received: u64, elements: u64) {
        self.total.record(sent, received, elements);
        let mut seen: Vec<&str> = Vec::with_capacity(self.stack.len());
        for t in &self.stack {
            if !seen.contains(&t.as_str()) {
                seen.push(t);
                self.per_tag
                    .entry(t.clone())
                    .or_default()
                    .record(sent, received, elements);
            }
        }
    }

    pub fn record_reveal(&mut self, elements: u64) {
        self.reveals += elements;
    }

    pub fn tag(&self, tag: &str) -> Counters {
        self.per_tag.get(tag).copied().unwrap_or_default()
    }

    pub fn rounds(&self) -> u64 {
        self.total.rounds
    }

    /// Clears counters but keeps the active scope stack.
    pub fn reset(&mut self) {
        self.total = Counters::default();
        self.per_tag.clear();
        self.reveals = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_scopes_count_once_per_name() {
        let mut l = RoundLedger::default();
        l.enter("layer");
        l.enter("relu");
        l.record_round(10, 10, 2);
        l.enter("relu");
        l.record_round(5, 5, 1);
        l.exit();
        l.exit();
        l.record_round(1, 1, 1);
        l.exit();
        l.record_round(1, 1, 1);
        assert_eq!(l.total.rounds, 4);
        assert_eq!(l.tag("layer").rounds, 3);
        assert_eq!(l.tag("relu").rounds, 2);
        assert_eq!(l.tag("relu").bytes_sent, 15);
        assert_eq!(l.tag("missing").rounds, 0);
    }
}
