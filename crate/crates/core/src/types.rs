use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::text::count_words;

/// A retrieved passage. `word_count` is derived from `text` and is not part of
/// the wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "DocumentWire", into = "DocumentWire")]
pub struct Document {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
    pub word_count: usize,
}

#[derive(Serialize, Deserialize)]
struct DocumentWire {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

impl From<DocumentWire> for Document {
    fn from(w: DocumentWire) -> Self {
        Document::new(w.id, w.title, w.text)
    }
}

impl From<Document> for DocumentWire {
    fn from(d: Document) -> Self {
        DocumentWire {
            id: d.id,
            title: d.title,
            text: d.text,
        }
    }
}

impl Document {
    pub fn new(id: impl Into<String>, title: Option<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let word_count = count_words(&text);
        Document {
            id: id.into(),
            title,
            text,
            word_count,
        }
    }

    /// Text as shown to models: a `Title: ...` line first when a title exists.
    pub fn as_context(&self) -> String {
        match self.title.as_deref().filter(|t| !t.is_empty()) {
            Some(t) => format!("Title: {t}\n{}", self.text),
            None => self.text.clone(),
        }
    }

    /// Documents with blank text are never admitted to a pipeline stage.
    pub fn is_admissible(&self) -> bool {
        !self.text.trim().is_empty()
    }
}

/// Position of a proposition: `(doc_id, index)`. Orders lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PropRef {
    pub doc_id: String,
    pub index: usize,
}

impl PropRef {
    pub fn new(doc_id: impl Into<String>, index: usize) -> Self {
        PropRef {
            doc_id: doc_id.into(),
            index,
        }
    }
}

impl fmt::Display for PropRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.doc_id, self.index)
    }
}

/// An atomic, decontextualised factoid extracted from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
}

impl Proposition {
    pub fn new(doc_id: impl Into<String>, index: usize, text: impl Into<String>) -> Self {
        Proposition {
            doc_id: doc_id.into(),
            index,
            text: text.into(),
        }
    }

    pub fn key(&self) -> PropRef {
        PropRef::new(self.doc_id.clone(), self.index)
    }
}

/// A seed question with its gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default = "one")]
    pub hop_count: u32,
    #[serde(rename = "source", default)]
    pub source_dataset: String,
}

fn one() -> u32 {
    1
}

impl QAExample {
    pub fn validate(&self) -> Result<(), String> {
        if self.hop_count < 1 {
            return Err(format!("{}: hop_count must be >= 1", self.id));
        }
        if !self.answers.iter().any(|a| !a.trim().is_empty()) {
            return Err(format!("{}: no non-empty answer", self.id));
        }
        Ok(())
    }

    /// First non-empty gold answer.
    pub fn primary_answer(&self) -> &str {
        self.answers
            .iter()
            .find(|a| !a.trim().is_empty())
            .map(String::as_str)
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub text: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_proposition: Option<PropRef>,
}

impl SubQuestion {
    pub fn new(text: impl Into<String>, answer: impl Into<String>) -> Self {
        SubQuestion {
            text: text.into(),
            answer: answer.into(),
            supporting_proposition: None,
        }
    }
}

/// A composed `t`-hop question together with its decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiHopCandidate {
    pub seed_id: String,
    pub question: String,
    pub answer: String,
    pub sub_questions: Vec<SubQuestion>,
    pub bridge_entities: Vec<String>,
    pub sampled_doc_ids: Vec<String>,
    pub hop_count: u32,
}

impl MultiHopCandidate {
    pub fn check_invariants(&self, max_hops: u32) -> Result<(), String> {
        let t = self.hop_count as usize;
        if self.sub_questions.len() != t {
            return Err(format!(
                "hop_count {t} but {} sub-questions",
                self.sub_questions.len()
            ));
        }
        if self.sampled_doc_ids.len() != t {
            return Err(format!(
                "hop_count {t} but {} sampled documents",
                self.sampled_doc_ids.len()
            ));
        }
        if self.hop_count < 2 || self.hop_count > max_hops {
            return Err(format!("hop_count {t} outside 2..={max_hops}"));
        }
        Ok(())
    }
}

/// The retrieved documents for one question, as stored in a retrieval file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub question_id: String,
    pub documents: Vec<Document>,
}

/// Proposition text by reference, used to rebuild summaries.
pub type PropositionLookup<'a> = dyn Fn(&PropRef) -> Option<String> + 'a;

/// One `(question, documents, summary)` training tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub question: String,
    pub documents: Vec<Document>,
    pub summary: String,
    pub hop_count: u32,
    pub provenance: Vec<PropRef>,
    /// Dataset tag. Only written by `merge`, absent otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl SummaryRecord {
    /// Checks the record invariants. `texts` resolves a provenance entry to
    /// its proposition text; pass `None` to skip the reconstruction check.
    pub fn check_invariants(
        &self,
        texts: Option<&PropositionLookup<'_>>,
    ) -> Result<(), String> {
        if self.summary.is_empty() != self.provenance.is_empty() {
            return Err(format!(
                "{}: empty summary must coincide with empty provenance",
                self.id
            ));
        }
        if self.hop_count >= 2 {
            let distinct: HashSet<&str> =
                self.provenance.iter().map(|p| p.doc_id.as_str()).collect();
            if distinct.len() != self.provenance.len() {
                return Err(format!("{}: provenance documents not distinct", self.id));
            }
        }
        if let Some(lookup) = texts {
            let mut parts = Vec::with_capacity(self.provenance.len());
            for p in &self.provenance {
                parts.push(lookup(p).ok_or_else(|| format!("{}: unknown proposition {p}", self.id))?);
            }
            if parts.join(" ") != self.summary {
                return Err(format!("{}: summary does not reconstruct", self.id));
            }
        }
        Ok(())
    }

    pub fn input_words(&self) -> usize {
        self.documents.iter().map(|d| d.word_count).sum()
    }
}
