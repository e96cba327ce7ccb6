//! Inference-time compression and reader prompting.
//!
//! The compressor sees `summarize: {question}\n{doc 1}\n{doc 2}...` where each
//! document carries an optional `Title:` line. An empty completion is a valid
//! result: it tells the reader to answer without any context.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, GenerationRequest, TextGenerator};
use crate::seed::RandomSeed;
use crate::synthesis::TemplateError;
use crate::text::count_words;
use crate::types::{Document, QAExample};

pub const COMPRESSOR_PREFIX: &str = "summarize: ";
const READER_SHOTS: &str = include_str!("../assets/prompts/reader_shots.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressionError {
    #[error("no documents to compress")]
    NoDocuments,
    #[error("chunk size must be at least 1")]
    InvalidChunkSize,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub summary: String,
    pub input_words: usize,
    pub output_words: usize,
    pub chunk_count: usize,
}

impl CompressionResult {
    /// The compressor chose to provide no context.
    pub fn is_selective(&self) -> bool {
        self.summary.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressConfig {
    pub max_new_tokens: u32,
    pub temperature: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            max_new_tokens: 256,
            temperature: 0.0,
        }
    }
}

/// Source text for the compressor; also the `source` side of training pairs.
pub fn compressor_input(question: &str, documents: &[Document]) -> String {
    let mut out = format!("{COMPRESSOR_PREFIX}{question}");
    for d in documents {
        out.push('\n');
        out.push_str(&d.as_context());
    }
    out
}

pub fn compress(
    question: &str,
    documents: &[Document],
    generator: &dyn TextGenerator,
    cfg: &CompressConfig,
) -> Result<CompressionResult, CompressionError> {
    let summary = summarize(question, documents, generator, cfg)?;
    Ok(CompressionResult {
        output_words: count_words(&summary),
        input_words: documents.iter().map(|d| d.word_count).sum(),
        summary,
        chunk_count: 1,
    })
}

fn summarize(
    question: &str,
    documents: &[Document],
    generator: &dyn TextGenerator,
    cfg: &CompressConfig,
) -> Result<String, CompressionError> {
    if documents.is_empty() {
        return Err(CompressionError::NoDocuments);
    }
    let req = GenerationRequest::new(compressor_input(question, documents))
        .max_new_tokens(cfg.max_new_tokens)
        .temperature(cfg.temperature);
    match generator.generate(&req) {
        Ok(s) => Ok(s.trim().to_string()),
        Err(GatewayError::EmptyOutput) => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

/// Shuffles with `seed` and cuts into consecutive chunks of `chunk_size`.
pub fn shuffle_chunks(
    documents: &[Document],
    chunk_size: usize,
    seed: RandomSeed,
) -> Result<Vec<Vec<Document>>, CompressionError> {
    if chunk_size == 0 {
        return Err(CompressionError::InvalidChunkSize);
    }
    let mut shuffled = documents.to_vec();
    shuffled.shuffle(&mut seed.rng());
    Ok(shuffled.chunks(chunk_size).map(<[Document]>::to_vec).collect())
}

/// Compresses each chunk on its own and joins the non-empty summaries in
/// chunk order. Any failed chunk fails the whole call.
pub fn compress_chunked(
    question: &str,
    documents: &[Document],
    chunk_size: usize,
    seed: RandomSeed,
    generator: &dyn TextGenerator,
    cfg: &CompressConfig,
) -> Result<CompressionResult, CompressionError> {
    if documents.is_empty() {
        return Err(CompressionError::NoDocuments);
    }
    let chunks = shuffle_chunks(documents, chunk_size, seed)?;
    let results: Vec<Result<String, CompressionError>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|c| s.spawn(move || summarize(question, c, generator, cfg)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("chunk worker panicked")).collect()
    });
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        let s = r?;
        if !s.is_empty() {
            parts.push(s);
        }
    }
    let summary = parts.join(" ");
    Ok(CompressionResult {
        output_words: count_words(&summary),
        input_words: documents.iter().map(|d| d.word_count).sum(),
        summary,
        chunk_count: chunks.len(),
    })
}

/// One in-context demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub question: String,
    pub answer: String,
}

impl Shot {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        Shot {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

fn shipped_shots() -> &'static BTreeMap<String, Vec<(String, String)>> {
    static SHOTS: OnceLock<BTreeMap<String, Vec<(String, String)>>> = OnceLock::new();
    SHOTS.get_or_init(|| serde_json::from_str(READER_SHOTS).expect("shipped reader shots parse"))
}

/// Dataset names with shipped demonstrations.
pub fn known_datasets() -> Vec<&'static str> {
    shipped_shots().keys().map(String::as_str).collect()
}

/// The shipped demonstrations for `dataset` (case-insensitive, `_` and `-`
/// interchangeable).
pub fn dataset_shots(dataset: &str) -> Result<Vec<Shot>, TemplateError> {
    let key = dataset.to_lowercase().replace('_', "-");
    shipped_shots()
        .get(&key)
        .map(|v| v.iter().map(|(q, a)| Shot::new(q, a)).collect())
        .ok_or_else(|| TemplateError::UnknownDataset(dataset.to_string()))
}

/// `n` demonstrations drawn from a training set instead of the shipped ones.
pub fn sample_shots(train: &[QAExample], n: usize, seed: RandomSeed) -> Vec<Shot> {
    let mut rng = seed.rng();
    train
        .choose_multiple(&mut rng, n)
        .map(|e| Shot::new(&e.question, e.primary_answer()))
        .collect()
}

/// Demonstrations, then the summary (omitted when empty), then the question.
pub fn build_reader_prompt(question: &str, summary: &str, shots: &[Shot]) -> String {
    let mut out = String::new();
    for s in shots {
        out.push_str(&s.question);
        out.push_str("\nAnswer: ");
        out.push_str(&s.answer);
        out.push_str("\n\n");
    }
    if !summary.is_empty() {
        out.push_str(summary);
        out.push('\n');
    }
    out.push_str(question);
    out.push_str("\nAnswer:");
    out
}

/// The reader's answer: first line, cut before any `Question:` it starts.
pub fn read_answer(raw: &str) -> String {
    let line = raw.trim_start().lines().next().unwrap_or("");
    let line = line.find("Question:").map_or(line, |i| &line[..i]);
    line.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockGenerator;
    use std::sync::Arc;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("d{i}"), None, format!("Fact number {i} here.")))
            .collect()
    }

    #[test]
    fn input_layout() {
        let d = vec![Document::new("a", Some("T".into()), "x y"), Document::new("b", None, "z")];
        assert_eq!(compressor_input("Q?", &d), "summarize: Q?\nTitle: T\nx y\nz");
    }

    #[test]
    fn empty_completion_is_selective() {
        let g = MockGenerator::new();
        let r = compress("Q?", &docs(2), &g, &CompressConfig::default()).unwrap();
        assert!(r.is_selective());
        assert_eq!((r.input_words, r.output_words, r.chunk_count), (8, 0, 1));
        assert_eq!(
            compress("Q?", &[], &g, &CompressConfig::default()),
            Err(CompressionError::NoDocuments)
        );
    }

    #[test]
    fn first_sentence_compressor() {
        let g = MockGenerator::new().with_responder(Arc::new(|req: &GenerationRequest| {
            req.prompt.lines().nth(1).map(str::to_string)
        }));
        let r = compress("Q?", &docs(3), &g, &CompressConfig::default()).unwrap();
        assert_eq!(r.summary, "Fact number 0 here.");
        assert_eq!(r.output_words, 4);
    }

    #[test]
    fn chunk_partitions() {
        for (n, sizes) in [(5, vec![5]), (7, vec![5, 2]), (25, vec![5; 5])] {
            let chunks = shuffle_chunks(&docs(n), 5, RandomSeed::new(3)).unwrap();
            assert_eq!(chunks.iter().map(Vec::len).collect::<Vec<_>>(), sizes);
            let mut ids: Vec<_> = chunks.iter().flatten().map(|d| d.id.clone()).collect();
            ids.sort();
            let mut want: Vec<_> = docs(n).into_iter().map(|d| d.id).collect();
            want.sort();
            assert_eq!(ids, want);
        }
        assert_eq!(shuffle_chunks(&docs(1), 0, RandomSeed::new(0)), Err(CompressionError::InvalidChunkSize));
    }

    #[test]
    fn single_chunk_equals_plain_compress_on_shuffled_set() {
        let g = MockGenerator::new().with_responder(Arc::new(|req: &GenerationRequest| {
            Some(req.prompt.lines().skip(1).collect::<Vec<_>>().join(" | "))
        }));
        let cfg = CompressConfig::default();
        let seed = RandomSeed::new(11);
        let d = docs(7);
        let chunked = compress_chunked("Q?", &d, 10, seed, &g, &cfg).unwrap();
        let shuffled = shuffle_chunks(&d, 10, seed).unwrap().remove(0);
        assert_eq!(chunked, compress("Q?", &shuffled, &g, &cfg).unwrap());
    }

    #[test]
    fn chunk_summaries_join_and_fail_together() {
        let g = MockGenerator::new().with_responder(Arc::new(|req: &GenerationRequest| {
            req.prompt.contains("Fact number 0 ").then(|| "zero.".to_string())
        }));
        let r = compress_chunked("Q?", &docs(7), 5, RandomSeed::new(1), &g, &CompressConfig::default()).unwrap();
        assert_eq!((r.summary.as_str(), r.chunk_count), ("zero.", 2));
        let silent = MockGenerator::new();
        let r = compress_chunked("Q?", &docs(7), 5, RandomSeed::new(1), &silent, &CompressConfig::default()).unwrap();
        assert_eq!(r.summary, "");
        let broken = MockGenerator::failing();
        assert!(compress_chunked("Q?", &docs(7), 5, RandomSeed::new(1), &broken, &CompressConfig::default()).is_err());
    }

    #[test]
    fn reader_prompt_layout() {
        let shots = dataset_shots("HotpotQA").unwrap();
        assert_eq!(shots.len(), 5);
        assert_eq!(shots[0], Shot::new("Which magazine was started first Arthur's Magazine or First for Women?", "Arthur's Magazine"));
        let p = build_reader_prompt("Who?", "Some summary.", &shots);
        assert!(p.contains("Which magazine was started first Arthur's Magazine or First for Women?\nAnswer: Arthur's Magazine\n\n"));
        assert!(p.ends_with("Answer: alcohol\n\nSome summary.\nWho?\nAnswer:"));
        let bare = build_reader_prompt("Who?", "", &shots);
        assert!(bare.ends_with("Answer: alcohol\n\nWho?\nAnswer:"));
        assert!(dataset_shots("squad").is_err());
        assert!(dataset_shots("multihop_nq").is_ok());
        assert_eq!(known_datasets().len(), 6);
    }

    #[test]
    fn answers_are_first_lines() {
        assert_eq!(read_answer("Delhi\nExplanation: ..."), "Delhi");
        assert_eq!(read_answer(" American "), "American");
        assert_eq!(read_answer(""), "");
        assert_eq!(read_answer("Paris Question: what?"), "Paris");
    }

    #[test]
    fn shot_resampling_is_seeded() {
        let train: Vec<QAExample> = (0..20)
            .map(|i| QAExample {
                id: format!("t{i}"),
                question: format!("q{i}?"),
                answers: vec![format!("a{i}")],
                hop_count: 1,
                source_dataset: String::new(),
            })
            .collect();
        let a = sample_shots(&train, 5, RandomSeed::new(2));
        assert_eq!(a, sample_shots(&train, 5, RandomSeed::new(2)));
        assert_eq!(a.len(), 5);
    }
}
