use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{run_pool, PipelineError};
use crate::compression::{
    build_reader_prompt, compress, compress_chunked, read_answer, CompressConfig, CompressionError,
    CompressionResult, Shot,
};
use crate::gateway::{GatewayError, GenerationRequest, TextGenerator};
use crate::metrics::{aggregate, EvalRow, RateMode, Report};
use crate::seed::RandomSeed;
use crate::text::count_words;
use crate::types::{Document, QAExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Selects the reader demonstrations.
    pub dataset: String,
    /// Retrieved documents given to the compressor or reader.
    pub top_n: usize,
    /// Compress in shuffled chunks of this many documents.
    pub chunk_size: Option<usize>,
    pub seed: u64,
    pub rate_mode: RateMode,
    pub reader_max_new_tokens: u32,
    pub compress: CompressConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset: "hotpotqa".into(),
            top_n: 5,
            chunk_size: None,
            seed: 42,
            rate_mode: RateMode::Corpus,
            reader_max_new_tokens: 32,
            compress: CompressConfig::default(),
        }
    }
}

/// A compressor output keyed by question id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedRow {
    pub id: String,
    pub summary: String,
    pub input_words: usize,
    pub output_words: usize,
    #[serde(default = "one")]
    pub chunk_count: usize,
}

fn one() -> usize {
    1
}

impl CompressedRow {
    fn new(id: &str, r: CompressionResult) -> Self {
        CompressedRow {
            id: id.to_string(),
            summary: r.summary,
            input_words: r.input_words,
            output_words: r.output_words,
            chunk_count: r.chunk_count,
        }
    }
}

/// A prediction scored offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub prediction: String,
    pub answers: Vec<String>,
    pub input_words: usize,
    pub output_words: usize,
    #[serde(default = "one_hop")]
    pub hop_count: u32,
}

fn one_hop() -> u32 {
    1
}

pub fn evaluate_predictions(rows: &[PredictionRow], label: &str, mode: RateMode) -> (Vec<EvalRow>, Report) {
    let scored: Vec<EvalRow> = rows
        .iter()
        .map(|r| EvalRow::score(&r.id, &r.prediction, r.answers.clone(), r.input_words, r.output_words, r.hop_count))
        .collect();
    let report = aggregate(&scored, label, mode);
    (scored, report)
}

/// Where the reader's context comes from.
pub enum SummarySource {
    /// The top-N documents, uncompressed.
    Documents,
    /// No context at all.
    NoDocuments,
    Precomputed(HashMap<String, CompressedRow>),
    Compressor(Arc<dyn TextGenerator>),
}

pub struct Reader {
    pub label: String,
    pub generator: Arc<dyn TextGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderRows {
    pub label: String,
    pub rows: Vec<EvalRow>,
    /// Ids whose reader call or context failed.
    pub errored: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub readers: Vec<ReaderRows>,
    pub reports: Vec<Report>,
    /// The contexts shown to the readers, in example order.
    pub summaries: Vec<CompressedRow>,
}

fn top_n<'a>(retrieval: &'a HashMap<String, Vec<Document>>, id: &str, n: usize) -> &'a [Document] {
    let docs = retrieval.get(id).map(Vec::as_slice).unwrap_or_default();
    &docs[..docs.len().min(n)]
}

fn compress_one(
    ex: &QAExample,
    docs: &[Document],
    compressor: &dyn TextGenerator,
    cfg: &EvalConfig,
) -> Result<CompressionResult, CompressionError> {
    match cfg.chunk_size {
        Some(size) => {
            let seed = RandomSeed::new(cfg.seed).derive(&format!("chunks/{}", ex.id));
            compress_chunked(&ex.question, docs, size, seed, compressor, &cfg.compress)
        }
        None => compress(&ex.question, docs, compressor, &cfg.compress),
    }
}

/// Runs the compressor over every example. Failed examples come back as
/// `Err((id, message))`.
pub fn compress_examples(
    examples: &[QAExample],
    retrieval: &HashMap<String, Vec<Document>>,
    compressor: &dyn TextGenerator,
    cfg: &EvalConfig,
    workers: usize,
) -> Vec<Result<CompressedRow, (String, String)>> {
    run_pool(examples.len(), workers, |i| {
        let ex = &examples[i];
        let docs = top_n(retrieval, &ex.id, cfg.top_n);
        Some(
            compress_one(ex, docs, compressor, cfg)
                .map(|r| CompressedRow::new(&ex.id, r))
                .map_err(|e| (ex.id.clone(), e.to_string())),
        )
    })
    .into_iter()
    .flatten()
    .collect()
}

fn context_for(
    ex: &QAExample,
    retrieval: &HashMap<String, Vec<Document>>,
    source: &SummarySource,
    cfg: &EvalConfig,
) -> Result<CompressedRow, String> {
    let docs = top_n(retrieval, &ex.id, cfg.top_n);
    let input_words = docs.iter().map(|d| d.word_count).sum();
    match source {
        SummarySource::Documents => {
            let text = docs.iter().map(Document::as_context).collect::<Vec<_>>().join("\n");
            Ok(CompressedRow {
                id: ex.id.clone(),
                output_words: count_words(&text),
                summary: text,
                input_words,
                chunk_count: 1,
            })
        }
        SummarySource::NoDocuments => Ok(CompressedRow {
            id: ex.id.clone(),
            summary: String::new(),
            input_words,
            output_words: 0,
            chunk_count: 0,
        }),
        SummarySource::Precomputed(map) => map
            .get(&ex.id)
            .cloned()
            .ok_or_else(|| format!("no summary for {}", ex.id)),
        SummarySource::Compressor(g) => compress_one(ex, docs, g.as_ref(), cfg)
            .map(|r| CompressedRow::new(&ex.id, r))
            .map_err(|e| e.to_string()),
    }
}

fn ask(reader: &dyn TextGenerator, prompt: &str, cfg: &EvalConfig) -> Result<String, GatewayError> {
    let req = GenerationRequest::new(prompt)
        .max_new_tokens(cfg.reader_max_new_tokens)
        .temperature(0.0)
        .stop(["\n\n"]);
    match reader.generate(&req) {
        Ok(raw) => Ok(read_answer(&raw)),
        Err(GatewayError::EmptyOutput) => Ok(String::new()),
        Err(e) => Err(e),
    }
}

/// Builds one context per example and asks every reader. Failures mark the
/// row errored; errored rows stay out of the aggregates.
pub fn run_eval(
    examples: &[QAExample],
    retrieval: &HashMap<String, Vec<Document>>,
    source: &SummarySource,
    readers: &[Reader],
    shots: &[Shot],
    cfg: &EvalConfig,
    workers: usize,
) -> Result<EvalOutput, PipelineError> {
    if readers.is_empty() {
        return Err(PipelineError::Config("at least one reader is required".into()));
    }
    if cfg.chunk_size == Some(0) {
        return Err(PipelineError::Config("chunk size must be at least 1".into()));
    }
    type PerExample = (Result<CompressedRow, String>, Vec<Result<EvalRow, String>>);
    let per_example: Vec<PerExample> = run_pool(examples.len(), workers, |i| {
        let ex = &examples[i];
        let ctx = context_for(ex, retrieval, source, cfg);
        let answers = match &ctx {
            Err(e) => readers.iter().map(|_| Err(e.clone())).collect(),
            Ok(c) => {
                let prompt = build_reader_prompt(&ex.question, &c.summary, shots);
                readers
                    .iter()
                    .map(|r| {
                        ask(r.generator.as_ref(), &prompt, cfg)
                            .map(|p| EvalRow::score(&ex.id, p, ex.answers.clone(), c.input_words, c.output_words, ex.hop_count))
                            .map_err(|e| e.to_string())
                    })
                    .collect()
            }
        };
        Some((ctx, answers))
    })
    .into_iter()
    .flatten()
    .collect();

    let mut out = EvalOutput {
        readers: readers
            .iter()
            .map(|r| ReaderRows {
                label: r.label.clone(),
                rows: Vec::new(),
                errored: Vec::new(),
            })
            .collect(),
        reports: Vec::new(),
        summaries: Vec::new(),
    };
    for (ex, (ctx, answers)) in examples.iter().zip(per_example) {
        if let Ok(c) = ctx {
            out.summaries.push(c);
        }
        for (slot, a) in out.readers.iter_mut().zip(answers) {
            match a {
                Ok(row) => slot.rows.push(row),
                Err(e) => {
                    log::warn!("{} ({}): {e}", ex.id, slot.label);
                    slot.errored.push(ex.id.clone());
                }
            }
        }
    }
    out.reports = out
        .readers
        .iter()
        .map(|r| {
            let mut rep = aggregate(&r.rows, &r.label, cfg.rate_mode);
            rep.errored = r.errored.len();
            rep
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockGenerator;

    fn example(id: &str, q: &str, a: &str) -> QAExample {
        QAExample {
            id: id.into(),
            question: q.into(),
            answers: vec![a.into()],
            hop_count: 1,
            source_dataset: "fixture".into(),
        }
    }

    fn docs() -> HashMap<String, Vec<Document>> {
        let d = |i: usize| Document::new(format!("d{i}"), None, format!("Paris is in France {i}."));
        HashMap::from([("q1".to_string(), (0..7).map(d).collect())])
    }

    #[test]
    fn offline_rows_score_by_hand() {
        let rows = vec![
            PredictionRow {
                id: "a".into(),
                prediction: "The Paris".into(),
                answers: vec!["paris".into()],
                input_words: 500,
                output_words: 25,
                hop_count: 1,
            },
            PredictionRow {
                id: "b".into(),
                prediction: "new york".into(),
                answers: vec!["york city".into()],
                input_words: 500,
                output_words: 25,
                hop_count: 2,
            },
        ];
        let (scored, report) = evaluate_predictions(&rows, "fixture", RateMode::Corpus);
        assert_eq!(scored[0].em, 1);
        // precision 1/2, recall 1/2
        assert!((scored[1].f1 - 0.5).abs() < 1e-12);
        assert_eq!((report.em, report.f1, report.compression_rate), (50.0, 75.0, Some(20.0)));
    }

    #[test]
    fn no_documents_prompt_has_no_context_block() {
        let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = seen.clone();
        let reader = MockGenerator::new().with_responder(Arc::new(move |req: &GenerationRequest| {
            log.lock().unwrap().push(req.prompt.clone());
            Some("Paris".to_string())
        }));
        let shots = vec![Shot::new("Where is the Louvre?", "Paris")];
        let readers = [Reader {
            label: "r".into(),
            generator: Arc::new(reader),
        }];
        let ex = [example("q1", "Where is the Eiffel Tower?", "Paris")];
        let out = run_eval(&ex, &docs(), &SummarySource::NoDocuments, &readers, &shots, &EvalConfig::default(), 2).unwrap();
        let prompt = seen.lock().unwrap()[0].clone();
        assert_eq!(prompt, build_reader_prompt("Where is the Eiffel Tower?", "", &shots));
        assert_eq!(prompt, "Where is the Louvre?\nAnswer: Paris\n\nWhere is the Eiffel Tower?\nAnswer:");
        assert_eq!(out.reports[0].em, 100.0);
        assert_eq!(out.reports[0].compression_rate, None);
        assert_eq!(out.reports[0].empty_summaries, 1);
        assert_eq!(out.summaries[0].input_words, 25);
    }

    #[test]
    fn two_readers_share_one_summary_set_and_failures_are_counted() {
        let good = MockGenerator::new().with_responder(Arc::new(|_: &GenerationRequest| Some("Paris".into())));
        let readers = [
            Reader {
                label: "good".into(),
                generator: Arc::new(good),
            },
            Reader {
                label: "down".into(),
                generator: Arc::new(MockGenerator::failing()),
            },
        ];
        let ex = [example("q1", "Where?", "Paris"), example("q2", "Where else?", "Paris")];
        let out = run_eval(&ex, &docs(), &SummarySource::Documents, &readers, &[], &EvalConfig::default(), 2).unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.reports[0].rows, 2);
        assert_eq!(out.reports[0].compression_rate, Some(1.0));
        assert_eq!((out.reports[1].rows, out.reports[1].errored), (0, 2));
    }
}
