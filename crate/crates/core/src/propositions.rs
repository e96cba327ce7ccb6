//! Segmentation of documents into atomic propositions.
//!
//! The external propositionizer receives `Title: {title}. Section: . Content:
//! {text}` and answers with either a JSON array of strings or a numbered list.
//! When the backend fails or its output cannot be parsed, the document is
//! split into sentences instead and the downgrade is logged and counted.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{GenerationRequest, TextGenerator};
use crate::types::{Document, Proposition};

pub const CONTENT_MARKER: &str = "Content: ";

const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "u.s.", "e.g.", "i.e.", "vs.",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PropositionError {
    #[error("unparseable propositionizer output: {0}")]
    Parse(String),
    #[error("document {0} has no text")]
    EmptyDocument(String),
    #[error("cache i/o: {0}")]
    Cache(String),
}

/// Accepts a JSON array of strings or `1. ...` numbered lines; trims entries
/// and drops empty ones.
pub fn parse_proposition_output(raw: &str) -> Result<Vec<String>, PropositionError> {
    let trimmed = raw.trim();
    if let (Some(open), Some(close)) = (trimmed.find('['), trimmed.rfind(']')) {
        if open < close {
            if let Ok(items) = serde_json::from_str::<Vec<String>>(&trimmed[open..=close]) {
                return Ok(clean(items));
            }
        }
    }
    let numbered: Vec<String> = trimmed.lines().filter_map(numbered_item).collect();
    if numbered.is_empty() {
        return Err(PropositionError::Parse(preview(trimmed)));
    }
    Ok(clean(numbered))
}

fn numbered_item(line: &str) -> Option<String> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some(rest.trim().to_string())
}

fn clean(items: Vec<String>) -> Vec<String> {
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn preview(s: &str) -> String {
    s.chars().take(80).collect()
}

/// Splits on `.`, `!` or `?` (optionally followed by closing quotes or
/// brackets) when the next token starts with an uppercase letter or digit.
/// Common abbreviations (`Mr.`, `Dr.`, `U.S.`, `e.g.`, `i.e.`, ...) never end
/// a sentence.
pub fn sentence_split(text: &str) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        current.push(tok);
        let next_starts = tokens
            .get(i + 1)
            .and_then(|n| n.trim_start_matches(['"', '\'', '(', '[', '“', '‘']).chars().next())
            .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
        if next_starts && ends_sentence(tok) {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
}

fn ends_sentence(tok: &str) -> bool {
    let core = tok.trim_end_matches(['"', '\'', ')', ']', '”', '’']);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    let lower = core.to_lowercase();
    !ABBREVIATIONS.contains(&lower.as_str())
}

/// Prompt sent to the propositionizer for one document.
pub fn propositionizer_prompt(doc: &Document) -> String {
    format!(
        "Title: {}. Section: . {CONTENT_MARKER}{}",
        doc.title.as_deref().unwrap_or(""),
        doc.text
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub propositions: Vec<Proposition>,
    /// True when the sentence-split fallback produced the list.
    pub fallback: bool,
}

fn to_propositions(doc: &Document, texts: Vec<String>) -> Vec<Proposition> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Proposition::new(doc.id.clone(), i, t))
        .collect()
}

/// Segments one document, retrying the backend `retries` extra times before
/// falling back to sentences.
pub fn propositionize(
    doc: &Document,
    generator: &dyn TextGenerator,
    retries: u32,
) -> Result<Segmentation, PropositionError> {
    if !doc.is_admissible() {
        return Err(PropositionError::EmptyDocument(doc.id.clone()));
    }
    let req = GenerationRequest::new(propositionizer_prompt(doc)).max_new_tokens(512);
    let mut reason = String::new();
    for _ in 0..=retries {
        match generator.generate(&req) {
            Ok(raw) => match parse_proposition_output(&raw) {
                Ok(items) if !items.is_empty() => {
                    return Ok(Segmentation {
                        propositions: to_propositions(doc, items),
                        fallback: false,
                    })
                }
                Ok(_) => reason = "empty proposition list".into(),
                Err(e) => reason = e.to_string(),
            },
            Err(e) => reason = e.to_string(),
        }
    }
    log::warn!("propositionizer downgraded to sentence split for {}: {reason}", doc.id);
    Ok(Segmentation {
        propositions: to_propositions(doc, sentence_split(&doc.text)),
        fallback: true,
    })
}

/// Source of propositions for a document.
pub trait PropositionStore: Send + Sync {
    fn propositions(&self, doc: &Document) -> Result<Vec<Proposition>, PropositionError>;
}

/// A fixed map from document id to its propositions. Unknown documents have
/// none.
impl PropositionStore for HashMap<String, Vec<Proposition>> {
    fn propositions(&self, doc: &Document) -> Result<Vec<Proposition>, PropositionError> {
        Ok(self.get(&doc.id).cloned().unwrap_or_default())
    }
}

/// Backend-driven segmentation with an in-memory cache and an optional
/// on-disk cache (one JSON file per `(doc_id, backend, model)` hash).
pub struct Propositionizer {
    generator: Arc<dyn TextGenerator>,
    cache_dir: Option<PathBuf>,
    retries: u32,
    memory: RwLock<HashMap<String, Vec<Proposition>>>,
    downgrades: AtomicUsize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    doc_id: String,
    backend: String,
    model: String,
    fallback: bool,
    propositions: Vec<Proposition>,
}

impl Propositionizer {
    pub fn new(generator: Arc<dyn TextGenerator>) -> Self {
        Propositionizer {
            generator,
            cache_dir: None,
            retries: 1,
            memory: RwLock::new(HashMap::new()),
            downgrades: AtomicUsize::new(0),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    /// Number of documents that fell back to sentence splitting.
    pub fn downgrades(&self) -> usize {
        self.downgrades.load(Ordering::SeqCst)
    }

    fn cache_path(&self, doc_id: &str) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        for part in [doc_id, self.generator.backend_name(), self.generator.model_name()] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn load(&self, doc_id: &str) -> Option<Vec<Proposition>> {
        let path = self.cache_path(doc_id)?;
        let bytes = fs::read(path).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.doc_id == doc_id).then_some(entry.propositions)
    }

    fn store(&self, doc_id: &str, seg: &Segmentation) -> Result<(), PropositionError> {
        let Some(path) = self.cache_path(doc_id) else {
            return Ok(());
        };
        let entry = CacheEntry {
            doc_id: doc_id.to_string(),
            backend: self.generator.backend_name().to_string(),
            model: self.generator.model_name().to_string(),
            fallback: seg.fallback,
            propositions: seg.propositions.clone(),
        };
        let err = |e: std::io::Error| PropositionError::Cache(e.to_string());
        let dir = path.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(err)?;
        let tmp = tempfile_in(dir, &path);
        fs::write(&tmp, serde_json::to_vec(&entry).expect("entry serialises")).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)
    }
}

fn tempfile_in(dir: &std::path::Path, target: &std::path::Path) -> PathBuf {
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("entry");
    let tid = format!("{:?}", std::thread::current().id());
    let tid: String = tid.chars().filter(char::is_ascii_digit).collect();
    dir.join(format!(".{name}.{}.{tid}.tmp", std::process::id()))
}

impl PropositionStore for Propositionizer {
    fn propositions(&self, doc: &Document) -> Result<Vec<Proposition>, PropositionError> {
        if let Some(hit) = self.memory.read().expect("cache lock").get(&doc.id) {
            return Ok(hit.clone());
        }
        let props = match self.load(&doc.id) {
            Some(props) => props,
            None => {
                let seg = propositionize(doc, self.generator.as_ref(), self.retries)?;
                if seg.fallback {
                    self.downgrades.fetch_add(1, Ordering::SeqCst);
                }
                self.store(&doc.id, &seg)?;
                seg.propositions
            }
        };
        self.memory
            .write()
            .expect("cache lock")
            .insert(doc.id.clone(), props.clone());
        Ok(props)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CountingGenerator, MockGenerator};

    const PISA: &str = "Prior to restoration work performed between 1990 and 2001, the tower leaned at an angle of 5.5 degrees, but the tower now leans at about 3.99 degrees. This means the top of the Learning Tower of Pisa is displaced horizontally 3.9 meters (12 ft 10 in) from the center.";
    const PISA_PROPS: &str = "1. Prior to restoration work performed between 1990 and 2001, the Leaning Tower of Pisa leaned at an angle of 5.5 degrees.\n2. The Leaning Tower of Pisa now leans at about 3.99 degrees.\n3. The top of the Leaning Tower of Pisa is displaced horizontally 3.9 meters (12 ft 10 in) from the center.";

    #[test]
    fn parses_both_formats() {
        assert_eq!(parse_proposition_output("[\"A.\", \"B.\"]").unwrap(), vec!["A.", "B."]);
        assert_eq!(parse_proposition_output("1. A.\n2. B.").unwrap(), vec!["A.", "B."]);
        assert_eq!(parse_proposition_output("[\" A. \", \"\"]").unwrap(), vec!["A."]);
        assert!(parse_proposition_output("no list here").is_err());
        assert!(parse_proposition_output("").is_err());
    }

    #[test]
    fn splits_sentences() {
        assert_eq!(sentence_split("A. B."), vec!["A.", "B."]);
        assert_eq!(sentence_split("Dr. Smith works. He retired.").len(), 2);
        assert_eq!(sentence_split("He moved to the U.S. In 1990 he left.").len(), 1);
        assert_eq!(sentence_split("Use tools, e.g. Hammers. Done."), vec!["Use tools, e.g. Hammers.", "Done."]);
        assert_eq!(sentence_split("It fell. 3 died! \"Why?\" Nobody knows."), vec!["It fell.", "3 died!", "\"Why?\"", "Nobody knows."]);
        assert!(sentence_split("   ").is_empty());
    }

    #[test]
    fn pisa_sentence_split() {
        let s = sentence_split(PISA);
        assert_eq!(s.len(), 2);
        assert!(s[1].starts_with("This means"));
    }

    #[test]
    fn pisa_propositions_from_fixture() {
        let g = MockGenerator::new().with_fixture(PISA, PISA_PROPS);
        let doc = Document::new("pisa", Some("Leaning Tower of Pisa".into()), PISA);
        let seg = propositionize(&doc, &g, 1).unwrap();
        assert!(!seg.fallback);
        assert_eq!(seg.propositions.len(), 3);
        assert_eq!(seg.propositions[1].text, "The Leaning Tower of Pisa now leans at about 3.99 degrees.");
        assert_eq!(seg.propositions[2].index, 2);
        assert!(seg.propositions.iter().all(|p| p.doc_id == "pisa"));
    }

    #[test]
    fn single_sentence_identity() {
        let doc = Document::new("d", None, "The Oberoi Group is a hotel company with its head office in Delhi.");
        let seg = propositionize(&doc, &MockGenerator::new(), 0).unwrap();
        assert_eq!(seg.propositions.len(), 1);
        assert_eq!(seg.propositions[0].text, doc.text);
    }

    #[test]
    fn fallback_when_backend_fails() {
        // Hand segmentation: "Mr. Ito arrived." | "He sat down." | "Then, at 5 p.m., he left!"
        let text = "Mr. Ito arrived. He sat down. Then, at 5 p.m., he left!";
        let doc = Document::new("f", None, text);
        let g = MockGenerator::failing();
        let seg = propositionize(&doc, &g, 2).unwrap();
        assert!(seg.fallback);
        assert_eq!(seg.propositions.len(), 3);
        assert_eq!(g.calls(), 3);
        let texts: Vec<_> = seg.propositions.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, vec!["Mr. Ito arrived.", "He sat down.", "Then, at 5 p.m., he left!"]);
    }

    #[test]
    fn empty_document_rejected() {
        let doc = Document::new("e", None, " ");
        assert!(propositionize(&doc, &MockGenerator::new(), 0).is_err());
    }

    #[test]
    fn cache_avoids_repeat_calls() {
        let dir = tempfile::tempdir().unwrap();
        let doc = Document::new("d1", None, "Alpha is big. Beta is small.");
        let counting = Arc::new(CountingGenerator::new(Arc::new(MockGenerator::new())));
        let p = Propositionizer::new(counting.clone()).with_cache_dir(dir.path());
        let first = p.propositions(&doc).unwrap();
        let again = p.propositions(&doc).unwrap();
        assert_eq!(first, again);
        assert_eq!(counting.calls.get(), 1);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

        // A fresh instance reads the disk cache.
        let counting2 = Arc::new(CountingGenerator::new(Arc::new(MockGenerator::new())));
        let p2 = Propositionizer::new(counting2.clone()).with_cache_dir(dir.path());
        assert_eq!(p2.propositions(&doc).unwrap(), first);
        assert_eq!(counting2.calls.get(), 0);
    }

    #[test]
    fn idempotent_under_mock() {
        let doc = Document::new("d", None, "One fact here. Another fact there.");
        let a = propositionize(&doc, &MockGenerator::new(), 0).unwrap();
        let b = propositionize(&doc, &MockGenerator::new(), 0).unwrap();
        assert_eq!(a, b);
    }
}
