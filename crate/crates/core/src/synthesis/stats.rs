use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::text::count_words;
use crate::types::SummaryRecord;

/// Running totals for one `(source, hop_count)` group. Merging is
/// associative, so partial folds can be combined in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsAccumulator {
    pub samples: usize,
    pub empty: usize,
    pub summary_words: usize,
}

impl StatsAccumulator {
    pub fn add(&mut self, record: &SummaryRecord) {
        self.samples += 1;
        if record.summary.is_empty() {
            self.empty += 1;
        } else {
            self.summary_words += count_words(&record.summary);
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        self.samples += other.samples;
        self.empty += other.empty;
        self.summary_words += other.summary_words;
    }

    /// Mean words per non-empty summary.
    pub fn mean_words(&self) -> Option<f64> {
        let n = self.samples - self.empty;
        (n > 0).then(|| self.summary_words as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub source: String,
    pub hop_count: u32,
    pub samples: usize,
    pub mean_words: Option<f64>,
    pub empty: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

/// Grouped folds keyed by `(source, hop_count)`.
pub type StatsGroups = BTreeMap<(String, u32), StatsAccumulator>;

pub fn accumulate<'a>(
    groups: &mut StatsGroups,
    records: impl IntoIterator<Item = &'a SummaryRecord>,
    fallback_source: &str,
) {
    for r in records {
        let source = r.source.clone().unwrap_or_else(|| fallback_source.to_string());
        groups.entry((source, r.hop_count)).or_default().add(r);
    }
}

/// Per-source, per-hop counts and mean summary length. Records without a
/// `source` tag are filed under `fallback_source`.
pub fn dataset_stats<'a>(
    records: impl IntoIterator<Item = &'a SummaryRecord>,
    fallback_source: &str,
) -> StatsTable {
    let mut groups = StatsGroups::new();
    accumulate(&mut groups, records, fallback_source);
    StatsTable::from_groups(&groups)
}

impl StatsTable {
    pub fn from_groups(groups: &StatsGroups) -> Self {
        let rows = groups
            .iter()
            .map(|((source, hop_count), acc)| StatsRow {
                source: source.clone(),
                hop_count: *hop_count,
                samples: acc.samples,
                mean_words: acc.mean_words(),
                empty: acc.empty,
            })
            .collect();
        StatsTable { rows }
    }

    /// One line per group: `source N-hop samples mean empty=E`.
    pub fn render_text(&self) -> String {
        let mut out = String::from("source hops samples mean_words empty\n");
        for r in &self.rows {
            let mean = r.mean_words.map_or("-".to_string(), |m| format!("{m:.2}"));
            let _ = writeln!(
                out,
                "{} {}-hop {} {} {}",
                r.source,
                r.hop_count,
                thousands(r.samples),
                mean,
                thousands(r.empty)
            );
        }
        out
    }
}

/// `13761` → `13,761`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
