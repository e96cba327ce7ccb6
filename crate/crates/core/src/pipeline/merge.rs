use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::compression::compressor_input;
use crate::synthesis::{dataset_stats, StatsTable};
use crate::types::SummaryRecord;

/// Concatenates datasets from several sources. Records keep an existing
/// source tag and otherwise get their source label. Ids that occur in more
/// than one source become `label/id` everywhere they occur.
pub fn build_unified_dataset(
    sources: Vec<(String, Vec<SummaryRecord>)>,
) -> Result<(Vec<SummaryRecord>, StatsTable), PipelineError> {
    if sources.len() < 2 {
        return Err(PipelineError::Config(format!(
            "merging needs at least two sources, got {}",
            sources.len()
        )));
    }
    let mut owners: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, (label, records)) in sources.iter().enumerate() {
        if sources[..i].iter().any(|(l, _)| l == label) {
            return Err(PipelineError::Config(format!("source label {label} given twice")));
        }
        for r in records {
            let o = owners.entry(r.id.clone()).or_default();
            if o.last() != Some(&i) {
                o.push(i);
            }
        }
    }
    let mut merged = Vec::with_capacity(sources.iter().map(|(_, r)| r.len()).sum());
    for (label, records) in sources {
        for mut r in records {
            if owners[&r.id].len() > 1 {
                r.id = format!("{label}/{}", r.id);
            }
            r.source.get_or_insert_with(|| label.clone());
            merged.push(r);
        }
    }
    let stats = dataset_stats(&merged, "unknown");
    Ok((merged, stats))
}

/// A compressor training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2SeqPair {
    pub id: String,
    pub source: String,
    pub target: String,
}

pub fn to_seq2seq(record: &SummaryRecord) -> Seq2SeqPair {
    Seq2SeqPair {
        id: record.id.clone(),
        source: compressor_input(&record.question, &record.documents),
        target: record.summary.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Document, PropRef};

    fn record(id: &str, hops: u32, summary: &str) -> SummaryRecord {
        SummaryRecord {
            id: id.into(),
            question: format!("question {id}?"),
            documents: vec![Document::new("d0", None, "Some text.")],
            summary: summary.into(),
            hop_count: hops,
            provenance: if summary.is_empty() { vec![] } else { vec![PropRef::new("d0", 0)] },
            source: None,
        }
    }

    fn batch(prefix: &str, n: usize) -> Vec<SummaryRecord> {
        (0..n).map(|i| record(&format!("{prefix}{i}"), 1 + (i % 2) as u32, "one two three")).collect()
    }

    #[test]
    fn two_sources_give_two_stats_rows() {
        let (merged, stats) =
            build_unified_dataset(vec![("srcA".into(), batch("a", 10)), ("srcB".into(), batch("b", 10))]).unwrap();
        assert_eq!(merged.len(), 20);
        let sources: std::collections::BTreeSet<_> = stats.rows.iter().map(|r| r.source.clone()).collect();
        assert_eq!(sources.len(), 2);
        assert_eq!(stats.rows.iter().map(|r| r.samples).sum::<usize>(), 20);
    }

    #[test]
    fn colliding_ids_are_namespaced() {
        let (merged, _) = build_unified_dataset(vec![
            ("srcA".into(), vec![record("q1", 1, "x"), record("q2", 1, "y")]),
            ("srcB".into(), vec![record("q1", 1, "z")]),
        ])
        .unwrap();
        let ids: Vec<&str> = merged.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["srcA/q1", "q2", "srcB/q1"]);
        assert!(merged.iter().all(|r| r.source.is_some()));
    }

    #[test]
    fn merged_stats_are_the_union_of_per_source_stats() {
        let a = batch("a", 7);
        let b = vec![record("b0", 1, ""), record("b1", 3, "four five six seven")];
        let (_, merged) = build_unified_dataset(vec![("A".into(), a.clone()), ("B".into(), b.clone())]).unwrap();
        let mut separate = dataset_stats(&a, "A").rows;
        separate.extend(dataset_stats(&b, "B").rows);
        separate.sort_by(|x, y| (&x.source, x.hop_count).cmp(&(&y.source, y.hop_count)));
        assert_eq!(merged.rows, separate);
    }

    #[test]
    fn single_source_is_rejected() {
        assert!(build_unified_dataset(vec![("A".into(), batch("a", 2))]).is_err());
    }

    #[test]
    fn training_pair_layout() {
        let p = to_seq2seq(&record("q", 1, "Some text."));
        assert_eq!(p.source, "summarize: question q?\nSome text.");
        assert_eq!(p.target, "Some text.");
    }
}
