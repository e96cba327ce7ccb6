//! Answer scoring and evaluation reports.
//!
//! Answers are compared after the usual open-domain QA normalization:
//! lowercase, drop ASCII punctuation, drop the articles `a`, `an`, `the`,
//! collapse whitespace.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("compression rate is undefined for an empty input")]
    EmptyInput,
}

pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &[String]) -> bool {
    let p = normalize_answer(prediction);
    gold.iter().any(|g| normalize_answer(g) == p)
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-overlap F1 over the gold answers.
pub fn token_f1(prediction: &str, gold: &[String]) -> f64 {
    gold.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rate {
    Value(f64),
    /// The summary was empty.
    NotApplicable,
}

/// Input words over output words.
pub fn compression_rate(input_words: usize, output_words: usize) -> Result<Rate, MetricsError> {
    if input_words == 0 {
        return Err(MetricsError::EmptyInput);
    }
    if output_words == 0 {
        return Ok(Rate::NotApplicable);
    }
    Ok(Rate::Value(input_words as f64 / output_words as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub prediction: String,
    pub gold: Vec<String>,
    pub em: u8,
    pub f1: f64,
    pub input_words: usize,
    pub output_words: usize,
    pub hop_count: u32,
}

impl EvalRow {
    pub fn score(
        id: impl Into<String>,
        prediction: impl Into<String>,
        gold: Vec<String>,
        input_words: usize,
        output_words: usize,
        hop_count: u32,
    ) -> Self {
        let prediction = prediction.into();
        let em = exact_match(&prediction, &gold);
        // an exact match always scores full F1, even when gold answers differ
        let f1 = if em { 1.0 } else { token_f1(&prediction, &gold) };
        EvalRow {
            id: id.into(),
            em: em as u8,
            f1,
            prediction,
            gold,
            input_words,
            output_words,
            hop_count,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// Total input words over total output words.
    #[default]
    Corpus,
    /// Mean of the per-row rates over rows with a non-empty summary.
    RowMean,
}

/// Commutative running sums behind a [`Report`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregator {
    rows: usize,
    em: usize,
    f1: f64,
    input_words: usize,
    output_words: usize,
    rate_sum: f64,
    rated_rows: usize,
    per_hop: BTreeMap<u32, (usize, usize, usize)>,
}

impl Aggregator {
    pub fn add(&mut self, row: &EvalRow) {
        self.rows += 1;
        self.em += row.em as usize;
        self.f1 += row.f1;
        self.input_words += row.input_words;
        self.output_words += row.output_words;
        if let Ok(Rate::Value(r)) = compression_rate(row.input_words, row.output_words) {
            self.rate_sum += r;
            self.rated_rows += 1;
        }
        let hop = self.per_hop.entry(row.hop_count).or_default();
        hop.0 += 1;
        if row.output_words > 0 {
            hop.1 += 1;
            hop.2 += row.output_words;
        }
    }

    pub fn merge(&mut self, other: &Aggregator) {
        self.rows += other.rows;
        self.em += other.em;
        self.f1 += other.f1;
        self.input_words += other.input_words;
        self.output_words += other.output_words;
        self.rate_sum += other.rate_sum;
        self.rated_rows += other.rated_rows;
        for (h, (a, b, c)) in &other.per_hop {
            let e = self.per_hop.entry(*h).or_default();
            e.0 += a;
            e.1 += b;
            e.2 += c;
        }
    }

    pub fn report(&self, label: &str, mode: RateMode) -> Report {
        if self.rows == 0 {
            return Report {
                label: label.to_string(),
                ..Report::default()
            };
        }
        let compression_rate = match mode {
            RateMode::Corpus => (self.output_words > 0).then(|| self.input_words as f64 / self.output_words as f64),
            RateMode::RowMean => (self.rated_rows > 0).then(|| self.rate_sum / self.rated_rows as f64),
        };
        Report {
            label: label.to_string(),
            rows: self.rows,
            errored: 0,
            em: round2(100.0 * self.em as f64 / self.rows as f64),
            f1: round2(100.0 * self.f1 / self.rows as f64),
            compression_rate: compression_rate.map(round2),
            empty_summaries: self.per_hop.values().map(|(n, ne, _)| n - ne).sum(),
            per_hop: self
                .per_hop
                .iter()
                .map(|(h, (n, ne, words))| HopSummary {
                    hop_count: *h,
                    rows: *n,
                    mean_summary_words: (*ne > 0).then(|| round2(*words as f64 / *ne as f64)),
                })
                .collect(),
        }
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopSummary {
    pub hop_count: u32,
    pub rows: usize,
    /// Over non-empty summaries only.
    pub mean_summary_words: Option<f64>,
}

/// EM and F1 as percentages, rate as a multiple; all rounded to 2 decimals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub rows: usize,
    /// Rows excluded because the endpoint failed.
    pub errored: usize,
    pub em: f64,
    pub f1: f64,
    pub compression_rate: Option<f64>,
    pub empty_summaries: usize,
    pub per_hop: Vec<HopSummary>,
}

pub fn aggregate<'a>(rows: impl IntoIterator<Item = &'a EvalRow>, label: &str, mode: RateMode) -> Report {
    let mut agg = Aggregator::default();
    for r in rows {
        agg.add(r);
    }
    agg.report(label, mode)
}

fn rate_text(r: Option<f64>) -> String {
    r.map_or("-".to_string(), |v| format!("{v:.2}x"))
}

/// Aligned plain-text table, one line per report, then per-hop lengths.
pub fn render_text(reports: &[Report]) -> String {
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>7}  {:>9}  {:>6}  {:>6}\n",
        "reader", "rows", "errored", "rate", "EM", "F1"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>7}  {:>9}  {:>6.2}  {:>6.2}",
            r.label,
            r.rows,
            r.errored,
            rate_text(r.compression_rate),
            r.em,
            r.f1
        );
    }
    if let Some(first) = reports.first() {
        if !first.per_hop.is_empty() {
            out.push_str("\nsummary length by hop count\n");
            for h in &first.per_hop {
                let mean = h.mean_summary_words.map_or("-".to_string(), |m| format!("{m:.2}"));
                let _ = writeln!(out, "{}-hop  rows {}  mean words {}", h.hop_count, h.rows, mean);
            }
        }
    }
    out
}

pub fn render_csv(reports: &[Report]) -> String {
    let mut out = String::from("reader,rows,errored,compression_rate,em,f1,empty_summaries\n");
    for r in reports {
        let rate = r.compression_rate.map_or(String::new(), |v| format!("{v:.2}"));
        let label = if r.label.contains([',', '"']) {
            format!("\"{}\"", r.label.replace('"', "\"\""))
        } else {
            r.label.clone()
        };
        let _ = writeln!(
            out,
            "{label},{},{},{rate},{:.2},{:.2},{}",
            r.rows, r.errored, r.em, r.f1, r.empty_summaries
        );
    }
    out
}
