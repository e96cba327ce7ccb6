use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Document;

pub const COMPOSITION_PROMPT: &str = include_str!("../../assets/prompts/composition.txt");
pub const DECOMPOSITION_PROMPT: &str = include_str!("../../assets/prompts/decomposition.txt");
pub const RELATIONSHIPS: &str = include_str!("../../assets/prompts/relationships.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` requires placeholder `{name}`")]
    Unbound { template: String, name: String },
    #[error("no template registered for dataset `{0}`")]
    UnknownDataset(String),
}

/// A text body with `{name}` placeholders, all of which must be bound to
/// render.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let required_placeholders = placeholders(&body).map(str::to_string).collect();
        PromptTemplate {
            name: name.into(),
            body,
            required_placeholders,
        }
    }

    /// The composition prompt with the relationship list filled in; only
    /// `{given_doc}` remains to bind.
    pub fn composition() -> Self {
        let relationships: Vec<String> = RELATIONSHIPS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| format!("    - {l}"))
            .collect();
        let body = COMPOSITION_PROMPT.replace("{relationships}", &relationships.join("\n"));
        PromptTemplate::new("composition", body)
    }

    pub fn decomposition() -> Self {
        PromptTemplate::new("decomposition", DECOMPOSITION_PROMPT)
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        for name in &self.required_placeholders {
            if !bindings.iter().any(|(k, _)| k == name) {
                return Err(TemplateError::Unbound {
                    template: self.name.clone(),
                    name: name.clone(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    out.push_str(&rest[..open]);
                    match bindings.iter().find(|(k, _)| *k == name) {
                        Some((_, v)) => out.push_str(v),
                        None => out.push_str(&rest[open..open + close + 2]),
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn placeholders(body: &str) -> impl Iterator<Item = &str> {
    body.match_indices('{').filter_map(move |(i, _)| {
        let after = &body[i + 1..];
        let close = after.find('}')?;
        let name = &after[..close];
        is_ident(name).then_some(name)
    })
}

/// `1. text\n2. text` passage list for the composition prompt.
pub fn numbered_passages(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {}", i + 1, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Context 1: text\nContext 2: text` block for the decomposition prompt.
pub fn context_block(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Context {}: {}", i + 1, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_requires_all_placeholders() {
        let t = PromptTemplate::new("t", "Q: {question} A: {answer}");
        assert_eq!(t.required_placeholders.len(), 2);
        assert!(matches!(
            t.render(&[("question", "x")]),
            Err(TemplateError::Unbound { .. })
        ));
        assert_eq!(t.render(&[("question", "x"), ("answer", "y")]).unwrap(), "Q: x A: y");
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let t = PromptTemplate::new("t", "{a}|{b}");
        assert_eq!(t.render(&[("a", "{b}"), ("b", "B")]).unwrap(), "{b}|B");
    }

    #[test]
    fn composition_prompt_assets() {
        let t = PromptTemplate::composition();
        assert_eq!(t.required_placeholders.iter().collect::<Vec<_>>(), vec!["given_doc"]);
        assert!(t.body.contains("    - Which continent is [S] located in?\n"));
        assert!(t.body.contains("    - Who is the [S]?\n\n2. **Locate Supporting Facts**"));
        assert!(t.body.contains("Sorry, I cannot generate any multi-hop question based on the provided passages."));
        assert!(t.body.contains("The Oberoi family is part of a hotel company that has a head office in what city?"));
        assert_eq!(RELATIONSHIPS.lines().count(), 37);
        let rendered = t.render(&[("given_doc", "1. P")]).unwrap();
        assert!(rendered.ends_with("Passages:\n1. P\n"));
    }

    #[test]
    fn decomposition_prompt_assets() {
        let t = PromptTemplate::decomposition();
        let names: Vec<_> = t.required_placeholders.iter().cloned().collect();
        assert_eq!(names, vec!["answer", "context", "question"]);
        assert!(t.body.contains("Bridge Entity: Angola\nRecovered Questions:\n1. Question: What is the independence date of Angola?\n   Answer: 11 November 1975"));
        assert!(t.body.ends_with("Question: {question}\nAnswer: {answer}\n{context}\n"));
    }
}
