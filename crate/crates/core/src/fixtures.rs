//! A deterministic synthetic world and scripted backends for offline runs.
//!
//! Every fact in the world has the shape `The {relation} of {subject} is
//! {object}.` with single-token, made-up entity names, so scripted models can
//! read facts back out of prompts with plain string handling. Seeds come in
//! three kinds:
//!
//! - chain seeds: three linked facts spread over three documents plus two
//!   distractors;
//! - merged seeds: two linked facts inside one document plus four
//!   distractors, which can only yield same-document evidence;
//! - unanswerable seeds: the answer occurs in no document.
//!
//! [`world_responder`] plays composer, decomposer, compressor and reader. The
//! composer picks its behaviour from the request seed so a run exercises every
//! rejection path: naming the bridge, answering with the bridge, inventing a
//! final hop, answering with the wrong entity, dropping the answer marker, or
//! composing a correct question.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};

use crate::compression::COMPRESSOR_PREFIX;
use crate::gateway::{GenerationRequest, MockGenerator, Responder};
use crate::propositions::sentence_split;
use crate::seed::RandomSeed;
use crate::synthesis::REFUSAL_SENTINEL;
use crate::types::{Document, QAExample, RetrievedSet};

/// A composer completion for the Oberoi passages.
pub const OBEROI_COMPOSITION: &str = "Supporting Facts:\n1. [Passage 1] The Oberoi family is an Indian family that is famous for its involvement in hotels, namely through The Oberoi Group. [Relation: The Oberoi family involve the hotel industry through the Oberoi Group.]\n2. [Passage 2] The Oberoi Group is a hotel company with its head office in Delhi. [Relation: The Oberoi Group's head office is in Delhi.]\nRelationship Chain:\nThe Oberoi family involve the hotel industry through the Oberoi Group. The Oberoi Group's head office is in Delhi. So the Oberoi family is part of a hotel company that has a head office in Delhi.\nMultihop Question:\nThe Oberoi family is part of a hotel company that has a head office in what city?\nAnswer:\nDelhi\n";

pub const ANGOLA_QUESTION: &str = "What is the independence date of the country where the majority of the population is composed of Ambundu, Ovimbundu, and Bakongo peoples?";
pub const ANGOLA_ANSWER: &str = "11 November 1975";
pub const ANGOLA_CONTEXTS: [&str; 2] = [
    "It is thus reasonable to talk of Angola as a defined territorial entity from this point onwards. In 1961, the FNLA and the MPLA, based in neighbouring countries, began a guerrilla campaign against Portuguese rule on several fronts. The Portuguese Colonial War, which included the Angolan War of Independence, lasted until the Portuguese regime's overthrow in 1974 through a leftist military coup in Lisbon. When the timeline for independence became known, most of the roughly 500,000 ethnic Portuguese Angolans fled the territory during the weeks before or after that deadline. Portugal left behind a newly independent country whose population was mainly composed by Ambundu, Ovimbundu, and Bakongo peoples.",
    "This was ratified by the Alvor Agreement later that month, which called for general elections and set the country's independence date for 11 November 1975. All three factions, however, followed up on the ceasefire by taking advantage of the gradual Portuguese withdrawal to seize various strategic positions, acquire more arms, and enlarge their militant forces. The rapid influx of weapons from numerous external sources, especially the Soviet Union and the United States, as well as the escalation of tensions between the nationalist parties, fueled a new outbreak of hostilities. With tacit American and Zairean support the FNLA began massing large numbers of troops in northern Angola in an attempt to gain military superiority.",
];
pub const ANGOLA_DECOMPOSITION: &str = "Bridge Entity: Angola\nRecovered Questions:\n1. Question: What is the independence date of Angola?\n   Answer: 11 November 1975\n2. Question: What country has a majority population of Ambundu, Ovimbundu, and Bakongo peoples?\n   Answer: Angola\n";
pub const SENTINEL_DECOMPOSITION: &str = "Bridge Entity: \"The Sentinel\"\nRecovered Questions:\n1. Question: What themes are explored in \"The Sentinel\"?\n   Answer: Human evolution\n2. Question: What work inspired \"2001: A Space Odyssey\"?\n   Answer: \"The Sentinel\"\n";

pub const SOURCE_LABEL: &str = "synthetic";

const RELATIONS: [&str; 12] = [
    "founder", "capital", "author", "director", "mayor", "architect", "patron", "rival", "mentor",
    "owner", "sponsor", "editor",
];
const FILLERS: [&str; 6] = [
    "It appears in several old registers.",
    "Local records describe it only briefly.",
    "Visitors rarely mention it.",
    "Its early history is poorly documented.",
    "Little else is known about it.",
    "Several accounts disagree on the details.",
];
const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ren", "sa", "tor", "vu", "zel", "bri", "dan", "fo", "gur"];

/// A unique capitalised name for entity number `i`.
pub fn entity_name(i: usize) -> String {
    let mut digits = Vec::new();
    let mut n = i;
    while n > 0 || digits.len() < 3 {
        digits.push(n % SYLLABLES.len());
        n /= SYLLABLES.len();
    }
    let name: String = digits.iter().rev().map(|d| SYLLABLES[*d]).collect();
    let mut chars = name.chars();
    let first = chars.next().expect("names are non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

/// A name that never occurs in a generated world.
fn invented_entity(seed: u64) -> String {
    format!("Qx{}", seed % 1_000_000)
}

pub fn fact_sentence(relation: &str, subject: &str, object: &str) -> String {
    format!("The {relation} of {subject} is {object}.")
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Fact {
    relation: String,
    subject: String,
    object: String,
    passage: usize,
}

fn parse_fact(sentence: &str, passage: usize) -> Option<Fact> {
    let body = sentence.trim().strip_prefix("The ")?.strip_suffix('.')?;
    let (relation, rest) = body.split_once(" of ")?;
    let (subject, object) = rest.split_once(" is ")?;
    let single = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
    (single(relation) && single(subject) && single(object)).then(|| Fact {
        relation: relation.into(),
        subject: subject.into(),
        object: object.into(),
        passage,
    })
}

fn facts_in(text: &str, passage: usize) -> Vec<Fact> {
    sentence_split(text).iter().filter_map(|s| parse_fact(s, passage)).collect()
}

/// `What is the rN of the ... of the r1 of S?`
pub fn chain_question(subject: &str, relations: &[&str]) -> String {
    let mut phrase = format!("the {} of {subject}", relations[0]);
    for r in &relations[1..] {
        phrase = format!("the {r} of {phrase}");
    }
    format!("What is {phrase}?")
}

/// Inverse of [`chain_question`]: `(subject, relations innermost first)`.
/// A trailing `(that is, X)` aside is ignored.
fn parse_chain_question(q: &str) -> Option<(String, Vec<String>)> {
    let mut body = q.trim().strip_prefix("What is ")?.strip_suffix('?')?;
    if let Some(i) = body.find(" (that is, ") {
        body = &body[..i];
    }
    let parts: Vec<&str> = body.split(" of ").collect();
    if parts.len() < 2 {
        return None;
    }
    let subject = parts.last()?.to_string();
    let mut relations = Vec::new();
    for p in &parts[..parts.len() - 1] {
        relations.push(p.strip_prefix("the ")?.to_string());
    }
    relations.reverse();
    Some((subject, relations))
}

fn lookup<'a>(facts: &'a [Fact], relation: &str, subject: &str) -> Option<&'a Fact> {
    facts.iter().find(|f| f.relation == relation && f.subject == subject)
}

/// All chains of exactly `len` linked facts, in discovery order.
fn chains(facts: &[Fact], len: usize) -> Vec<Vec<usize>> {
    fn extend(facts: &[Fact], len: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if path.len() == len {
            out.push(path.clone());
            return;
        }
        let last = &facts[*path.last().expect("path starts non-empty")];
        for (i, f) in facts.iter().enumerate() {
            if f.subject == last.object && !path.contains(&i) {
                path.push(i);
                extend(facts, len, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    for i in 0..facts.len() {
        extend(facts, len, &mut vec![i], &mut out);
    }
    out
}

fn compose_reply(prompt: &str, seed: u64) -> String {
    let Some(at) = prompt.rfind("Passages:\n") else {
        return String::new();
    };
    let passages: Vec<&str> = prompt[at + "Passages:\n".len()..]
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect();
    let hops = passages.len();
    let facts: Vec<Fact> = passages
        .iter()
        .enumerate()
        .flat_map(|(i, line)| {
            let text = line.split_once(". ").map_or(*line, |(_, t)| t);
            facts_in(text, i)
        })
        .collect();
    let refusal = format!("{REFUSAL_SENTINEL} any multi-hop question based on the provided passages.");
    let mode = seed % 10;
    let pick = (seed / 10) as usize;

    let chain_len = if mode == 2 { hops.saturating_sub(1) } else { hops };
    let found = chains(&facts, chain_len);
    if found.is_empty() {
        return refusal;
    }
    let chain: Vec<&Fact> = found[pick % found.len()].iter().map(|i| &facts[*i]).collect();
    let subject = chain[0].subject.clone();
    let mut relations: Vec<&str> = chain.iter().map(|f| f.relation.as_str()).collect();
    let mut answer = chain.last().expect("chains are non-empty").object.clone();
    let mut reasoning: Vec<String> = chain.iter().map(|f| fact_sentence(&f.relation, &f.subject, &f.object)).collect();
    if mode == 2 {
        let invented = invented_entity(seed);
        let relation = RELATIONS[(seed as usize / 7) % RELATIONS.len()];
        reasoning.push(fact_sentence(relation, &answer, &invented));
        relations.push(relation);
        answer = invented;
    }
    let mut question = chain_question(&subject, &relations);
    match mode {
        0 => question = question.replace('?', &format!(" (that is, {})?", chain[0].object)),
        1 => answer = chain[0].object.clone(),
        3 => answer = subject.clone(),
        _ => {}
    }
    let mut out = format!("Relationship Chain:\n{}\nMultihop Question:\n{question}\n", reasoning.join(" "));
    if mode != 4 {
        out.push_str(&format!("Answer:\n{answer}\n"));
    }
    out
}

fn decompose_reply(prompt: &str) -> String {
    let marker = "Now, it's your turn.\nQuestion: ";
    let Some(at) = prompt.rfind(marker) else {
        return String::new();
    };
    let tail = &prompt[at + marker.len()..];
    let mut lines = tail.lines();
    let question = lines.next().unwrap_or("");
    let given = lines.next().and_then(|l| l.strip_prefix("Answer: ")).unwrap_or("").trim();
    let facts: Vec<Fact> = lines
        .enumerate()
        .filter_map(|(i, l)| l.split_once(": ").map(|(_, t)| (i, t)))
        .flat_map(|(i, t)| facts_in(t, i))
        .collect();
    let Some((subject, relations)) = parse_chain_question(question) else {
        return "The question cannot be decomposed.".into();
    };
    let mut entities = Vec::with_capacity(relations.len());
    let mut current = subject.clone();
    for (i, r) in relations.iter().enumerate() {
        let next = match lookup(&facts, r, &current) {
            Some(f) => f.object.clone(),
            None if i + 1 == relations.len() => given.to_string(),
            None => "unknown".into(),
        };
        entities.push(next.clone());
        current = next;
    }
    let bridges = entities[..entities.len() - 1].join(", ");
    let mut out = format!("Bridge Entity: {bridges}\nRecovered Questions:\n");
    for (n, i) in (0..relations.len()).rev().enumerate() {
        let about = if i == 0 { &subject } else { &entities[i - 1] };
        out.push_str(&format!(
            "{}. Question: What is the {} of {about}?\n   Answer: {}\n",
            n + 1,
            relations[i],
            entities[i]
        ));
    }
    out
}

/// Follows the question's relation chain through facts found in `text`.
fn resolve(question: &str, text: &str) -> Vec<Fact> {
    let Some((subject, relations)) = parse_chain_question(question) else {
        return Vec::new();
    };
    let facts = facts_in(&text.replace('\n', " "), 0);
    let mut used = Vec::new();
    let mut current = subject;
    for r in &relations {
        match lookup(&facts, r, &current) {
            Some(f) => {
                current = f.object.clone();
                used.push(f.clone());
            }
            None => break,
        }
    }
    used
}

fn compress_reply(prompt: &str) -> String {
    let body = &prompt[COMPRESSOR_PREFIX.len()..];
    let (question, docs) = body.split_once('\n').unwrap_or((body, ""));
    let docs: String = docs.lines().filter(|l| !l.starts_with("Title: ")).collect::<Vec<_>>().join(" ");
    resolve(question, &docs)
        .iter()
        .map(|f| fact_sentence(&f.relation, &f.subject, &f.object))
        .collect::<Vec<_>>()
        .join(" ")
}

fn reader_reply(prompt: &str) -> String {
    let body = prompt.strip_suffix("\nAnswer:").unwrap_or(prompt);
    let (context, question) = body.rsplit_once('\n').unwrap_or(("", body));
    // demonstrations end with a blank line; only the block after them is context
    let context = context.rsplit("\n\n").next().unwrap_or_default();
    let Some((_, relations)) = parse_chain_question(question) else {
        return "unknown".into();
    };
    let used = resolve(question, context);
    if used.len() == relations.len() {
        used.last().expect("resolved chain is non-empty").object.clone()
    } else {
        "unknown".into()
    }
}

/// Scripted composer, decomposer, compressor and reader for the synthetic
/// world. Returns `None` for anything else, so propositionizer prompts fall
/// through to the mock's sentence splitter.
pub fn world_responder() -> Responder {
    Arc::new(|req: &GenerationRequest| {
        let p = &req.prompt;
        if p.starts_with(COMPRESSOR_PREFIX) {
            Some(compress_reply(p))
        } else if p.contains("Bridge Entity:") && p.contains("Now, it's your turn.\nQuestion: ") {
            Some(decompose_reply(p))
        } else if p.contains("Multihop Question:") && p.contains("Passages:\n") {
            Some(compose_reply(p, req.seed.unwrap_or(0)))
        } else if p.ends_with("\nAnswer:") {
            Some(reader_reply(p))
        } else {
            None
        }
    })
}

/// A mock generator wired to [`world_responder`].
pub fn world_generator() -> MockGenerator {
    MockGenerator::new().with_model("synthetic-world").with_responder(world_responder())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticWorld {
    /// Single-hop seed questions.
    pub examples: Vec<QAExample>,
    /// Multi-hop evaluation questions over the same documents, sharing ids
    /// with the seeds.
    pub eval_examples: Vec<QAExample>,
    pub retrieval: Vec<RetrievedSet>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SeedKind {
    Chain,
    Merged,
    Unanswerable,
}

impl SyntheticWorld {
    pub fn generate(seeds: usize, seed: RandomSeed) -> Self {
        let mut rng = seed.derive("synthetic-world").rng();
        let mut next_entity = 0usize;
        let mut fresh = || {
            next_entity += 1;
            entity_name(next_entity)
        };
        let mut examples = Vec::with_capacity(seeds);
        let mut eval_examples = Vec::with_capacity(seeds);
        let mut retrieval = Vec::with_capacity(seeds);
        for i in 0..seeds {
            let kind = if i % 7 == 6 {
                SeedKind::Unanswerable
            } else if i % 6 == 5 {
                SeedKind::Merged
            } else {
                SeedKind::Chain
            };
            let mut rels: Vec<&str> = RELATIONS.to_vec();
            rels.shuffle(&mut rng);
            let mut filler = FILLERS.to_vec();
            filler.shuffle(&mut rng);
            let ents: Vec<String> = (0..4).map(|_| fresh()).collect();
            let f: Vec<String> = (0..3).map(|j| fact_sentence(rels[j], &ents[j], &ents[j + 1])).collect();
            let mut distractor = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
                (0..n)
                    .map(|j| {
                        let r = RELATIONS.choose(rng).expect("relations are non-empty");
                        format!("{} {}", fact_sentence(r, &fresh(), &fresh()), FILLERS[(i + j) % FILLERS.len()])
                    })
                    .collect()
            };
            let id = format!("w{i:04}");
            let (texts, question, answer, eval) = match kind {
                SeedKind::Chain => {
                    let mut t: Vec<String> = (0..3).map(|j| format!("{} {}", f[j], filler[j])).collect();
                    t.extend(distractor(2, &mut rng));
                    let hops = if i % 3 == 2 { 3 } else { 2 };
                    let eval_q = chain_question(&ents[0], &rels[..hops]);
                    (t, chain_question(&ents[0], &rels[..1]), ents[1].clone(), (eval_q, ents[hops].clone(), hops as u32))
                }
                SeedKind::Merged => {
                    let mut t = vec![format!("{} {} {}", f[0], f[1], filler[0])];
                    t.extend(distractor(4, &mut rng));
                    let eval_q = chain_question(&ents[0], &rels[..2]);
                    (t, chain_question(&ents[0], &rels[..1]), ents[1].clone(), (eval_q, ents[2].clone(), 2))
                }
                SeedKind::Unanswerable => {
                    let t = distractor(5, &mut rng);
                    let q = chain_question(&ents[0], &rels[..1]);
                    (t, q.clone(), ents[1].clone(), (q, ents[1].clone(), 1))
                }
            };
            let mut texts = texts;
            texts.shuffle(&mut rng);
            let documents = texts
                .into_iter()
                .enumerate()
                .map(|(k, t)| Document::new(format!("{id}-d{k}"), None, t))
                .collect();
            examples.push(QAExample {
                id: id.clone(),
                question,
                answers: vec![answer],
                hop_count: 1,
                source_dataset: SOURCE_LABEL.into(),
            });
            eval_examples.push(QAExample {
                id: id.clone(),
                question: eval.0,
                answers: vec![eval.1],
                hop_count: eval.2,
                source_dataset: SOURCE_LABEL.into(),
            });
            retrieval.push(RetrievedSet {
                question_id: id,
                documents,
            });
        }
        SyntheticWorld {
            examples,
            eval_examples,
            retrieval,
        }
    }
}
