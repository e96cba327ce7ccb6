use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Where every composition attempt ended up. Counts merge by addition, so
/// per-example ledgers can be combined in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub attempts: usize,
    pub accepted: usize,
    pub rejections: BTreeMap<String, usize>,
    pub errors: BTreeMap<String, usize>,
}

impl Ledger {
    pub fn accept(&mut self) {
        self.attempts += 1;
        self.accepted += 1;
    }

    pub fn reject(&mut self, code: impl Into<String>) {
        self.attempts += 1;
        *self.rejections.entry(code.into()).or_default() += 1;
    }

    pub fn error(&mut self, code: impl Into<String>) {
        self.attempts += 1;
        *self.errors.entry(code.into()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &Ledger) {
        self.attempts += other.attempts;
        self.accepted += other.accepted;
        for (k, v) in &other.rejections {
            *self.rejections.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.errors {
            *self.errors.entry(k.clone()).or_default() += v;
        }
    }

    pub fn rejected(&self) -> usize {
        self.rejections.values().sum()
    }

    pub fn errored(&self) -> usize {
        self.errors.values().sum()
    }

    /// attempts = accepted + rejections + errors
    pub fn is_conserved(&self) -> bool {
        self.attempts == self.accepted + self.rejected() + self.errored()
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("attempts {}\naccepted {}\n", self.attempts, self.accepted);
        for (k, v) in &self.rejections {
            let _ = writeln!(out, "rejected {k} {v}");
        }
        for (k, v) in &self.errors {
            let _ = writeln!(out, "error {k} {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merged_ledgers_stay_conserved(events in proptest::collection::vec((0u8..3, 0u8..4), 0..60), split in 0usize..60) {
            let apply = |l: &mut Ledger, (kind, code): (u8, u8)| match kind {
                0 => l.accept(),
                1 => l.reject(format!("R{code}")),
                _ => l.error(format!("E{code}")),
            };
            let mut whole = Ledger::default();
            events.iter().for_each(|e| apply(&mut whole, *e));
            let split = split.min(events.len());
            let (mut a, mut b) = (Ledger::default(), Ledger::default());
            events[..split].iter().for_each(|e| apply(&mut a, *e));
            events[split..].iter().for_each(|e| apply(&mut b, *e));
            b.merge(&a);
            prop_assert!(whole.is_conserved());
            prop_assert_eq!(b, whole);
        }
    }
}
