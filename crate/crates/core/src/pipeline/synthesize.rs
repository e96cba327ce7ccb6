use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_pool, Checkpoint, Ledger, PipelineError};
use crate::gateway::{
    CountingGenerator, CountingScorer, GatewayError, LogLikelihoodScorer, TextGenerator,
};
use crate::helpfulness::{HelpfulnessConfig, HelpfulnessError, HelpfulnessReport};
use crate::jsonl::write_jsonl;
use crate::propositions::{PropositionStore, Propositionizer};
use crate::seed::RandomSeed;
use crate::synthesis::{
    attempt_seed, build_multihop_record, build_singlehop_record, compose_multihop,
    decompose_multihop, multihop_record_id, parse_composition, parse_decomposition,
    sample_documents, ComposeConfig, SynthesisError,
};
use crate::types::{Document, MultiHopCandidate, QAExample, SummaryRecord};
use crate::validation::{normalize_entity, validate, ValidationReason, ValidationVerdict, VerdictTally};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Hop counts to produce. `1` means the seed questions themselves.
    pub hops: Vec<u32>,
    pub max_hops: u32,
    /// Composition attempts per seed and hop count.
    pub attempts: u32,
    /// Propositions kept per seed-question summary.
    pub k: usize,
    /// Fraction of the final dataset that may be empty-summary records.
    pub empty_quota: f64,
    pub seed: u64,
    pub compose: ComposeConfig,
    pub helpfulness: HelpfulnessConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            hops: vec![1, 2, 3],
            max_hops: 3,
            attempts: 3,
            k: 2,
            empty_quota: 0.05,
            seed: 42,
            compose: ComposeConfig::default(),
            helpfulness: HelpfulnessConfig::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.hops.is_empty() {
            return bad("no hop counts requested".into());
        }
        if let Some(h) = self.hops.iter().find(|h| **h == 0 || **h > self.max_hops) {
            return bad(format!("hop count {h} outside 1..={}", self.max_hops));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.empty_quota) {
            return bad(format!("empty quota {} outside [0, 1)", self.empty_quota));
        }
        if self.helpfulness.max_in_flight == 0 {
            return bad("helpfulness max_in_flight must be at least 1".into());
        }
        Ok(())
    }

    fn multihop_counts(&self) -> Vec<u32> {
        let mut t: Vec<u32> = self.hops.iter().copied().filter(|h| *h >= 2).collect();
        t.sort_unstable();
        t.dedup();
        t
    }
}

/// How a run is executed; none of this changes the output.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Process at most this many new examples, then stop as if killed.
    pub stop_after: Option<usize>,
}

/// Model calls per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCalls {
    pub composer: usize,
    pub decomposer: usize,
    pub propositionizer: usize,
    pub scorer: usize,
}

pub struct SynthesisBackends {
    composer: CountingGenerator,
    decomposer: CountingGenerator,
    store: Arc<dyn PropositionStore>,
    propositionizer: Option<CountingGenerator>,
    scorer: CountingScorer,
}

impl SynthesisBackends {
    /// Composer and decomposer share `composer`; propositions come from
    /// `propositionizer`, cached under `cache_dir` when given.
    pub fn new(
        composer: Arc<dyn TextGenerator>,
        propositionizer: Arc<dyn TextGenerator>,
        scorer: Arc<dyn LogLikelihoodScorer>,
        cache_dir: Option<PathBuf>,
    ) -> Self {
        let counted = CountingGenerator::new(propositionizer);
        let mut store = Propositionizer::new(Arc::new(counted.clone()));
        if let Some(dir) = cache_dir {
            store = store.with_cache_dir(dir);
        }
        SynthesisBackends {
            composer: CountingGenerator::new(composer.clone()),
            decomposer: CountingGenerator::new(composer),
            store: Arc::new(store),
            propositionizer: Some(counted),
            scorer: CountingScorer::new(scorer),
        }
    }

    /// Uses a ready-made proposition store; its calls are not counted.
    pub fn with_store(
        composer: Arc<dyn TextGenerator>,
        store: Arc<dyn PropositionStore>,
        scorer: Arc<dyn LogLikelihoodScorer>,
    ) -> Self {
        SynthesisBackends {
            composer: CountingGenerator::new(composer.clone()),
            decomposer: CountingGenerator::new(composer),
            store,
            propositionizer: None,
            scorer: CountingScorer::new(scorer),
        }
    }

    pub fn calls(&self) -> StageCalls {
        StageCalls {
            composer: self.composer.calls.get(),
            decomposer: self.decomposer.calls.get(),
            propositionizer: self.propositionizer.as_ref().map_or(0, |p| p.calls.get()),
            scorer: self.scorer.calls.get(),
        }
    }

    pub fn store(&self) -> &dyn PropositionStore {
        self.store.as_ref()
    }

    pub fn scorer(&self) -> &dyn LogLikelihoodScorer {
        &self.scorer
    }

    fn composer_identity(&self) -> String {
        format!("{}/{}", self.composer.backend_name(), self.composer.model_name())
    }
}

/// A parsed candidate and what validation made of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    #[serde(flatten)]
    pub candidate: MultiHopCandidate,
    pub verdict: ValidationVerdict,
}

/// Everything one seed example contributed. Stored whole in the checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub example_id: String,
    /// The seed-question record and the accepted multi-hop records.
    pub records: Vec<SummaryRecord>,
    /// The seed-question record when it came out empty; subject to the quota.
    pub empty_record: Option<SummaryRecord>,
    pub candidates: Vec<CandidateLog>,
    pub ledger: Ledger,
    pub verdicts: VerdictTally,
    /// Error code of the seed-question record, when it failed.
    pub seed_error: Option<String>,
}

fn gateway_code(e: &GatewayError) -> &'static str {
    match e {
        GatewayError::Transport(_) => "Transport",
        GatewayError::EmptyOutput => "EmptyOutput",
        GatewayError::Capability(_) => "Capability",
        GatewayError::Scoring(_) => "Scoring",
        GatewayError::InvalidRequest(_) => "InvalidRequest",
        GatewayError::Config(_) => "EndpointConfig",
    }
}

fn error_code(e: &SynthesisError) -> String {
    match e {
        SynthesisError::InsufficientDocuments { .. } => "InsufficientDocuments".into(),
        SynthesisError::InvalidHopCount(_) => "InvalidHopCount".into(),
        SynthesisError::Refusal => "Refusal".into(),
        SynthesisError::Parse(_) => "ParseFailure".into(),
        SynthesisError::Gateway(g) | SynthesisError::Helpfulness(HelpfulnessError::Baseline(g)) => {
            gateway_code(g).into()
        }
        SynthesisError::Helpfulness(h) => format!("{h:?}"),
        SynthesisError::Template(_) => "Template".into(),
        SynthesisError::Propositions(_) => "Propositions".into(),
        SynthesisError::Construction(_) => "Construction".into(),
    }
}

/// Outcomes that say something about the data rather than the plumbing.
fn is_rejection(e: &SynthesisError) -> bool {
    matches!(
        e,
        SynthesisError::Refusal | SynthesisError::Parse(_) | SynthesisError::InsufficientDocuments { .. }
    )
}

fn record_failure(ledger: &mut Ledger, e: &SynthesisError) {
    let code = error_code(e);
    if is_rejection(e) {
        ledger.reject(code);
    } else {
        ledger.error(code);
    }
}

/// Runs every requested stage for one seed example.
pub fn process_example(
    example: &QAExample,
    documents: &[Document],
    cfg: &SynthesisConfig,
    backends: &SynthesisBackends,
) -> ExampleOutcome {
    let mut out = ExampleOutcome {
        example_id: example.id.clone(),
        ..Default::default()
    };
    let seed = RandomSeed::new(cfg.seed);

    if cfg.hops.contains(&1) {
        match build_singlehop_record(example, documents, cfg.k, backends.store(), backends.scorer(), &cfg.helpfulness) {
            Ok(o) if o.is_empty() => out.empty_record = Some(o.record),
            Ok(o) => out.records.push(o.record),
            Err(e) => {
                log::warn!("{}: seed record failed: {e}", example.id);
                out.seed_error = Some(error_code(&e));
            }
        }
    }

    let mut seen_questions = HashSet::new();
    for t in cfg.multihop_counts() {
        for attempt in 0..cfg.attempts {
            let s = attempt_seed(seed, &example.id, t, attempt);
            match attempt_once(example, documents, t, s, cfg, backends, &mut seen_questions) {
                Ok(Attempt::Rejected(code)) => out.ledger.reject(code),
                Ok(Attempt::Validated(log, record)) => {
                    out.verdicts.record(log.verdict.reason);
                    match record {
                        Some(Ok(mut r)) => {
                            r.id = multihop_record_id(&example.id, t, attempt);
                            out.ledger.accept();
                            out.records.push(r);
                        }
                        Some(Err(e)) => record_failure(&mut out.ledger, &e),
                        None => out.ledger.reject(format!("{:?}", log.verdict.reason)),
                    }
                    out.candidates.push(*log);
                }
                Err(e) => {
                    log::debug!("{} t={t} attempt {attempt}: {e}", example.id);
                    record_failure(&mut out.ledger, &e);
                }
            }
        }
    }
    out
}

enum Attempt {
    Rejected(String),
    Validated(Box<CandidateLog>, Option<Result<SummaryRecord, SynthesisError>>),
}

fn attempt_once(
    example: &QAExample,
    documents: &[Document],
    t: u32,
    seed: RandomSeed,
    cfg: &SynthesisConfig,
    backends: &SynthesisBackends,
    seen_questions: &mut HashSet<String>,
) -> Result<Attempt, SynthesisError> {
    let sampled = sample_documents(documents, t as usize, seed.derive("sample"))?;
    let raw = compose_multihop(&sampled, &backends.composer, &cfg.compose, seed.derive("compose"))?;
    let (question, answer) = parse_composition(&raw)?;
    if !seen_questions.insert(normalize_entity(&question)) {
        return Ok(Attempt::Rejected("Duplicate".into()));
    }
    let raw = decompose_multihop(&question, &answer, &sampled, &backends.decomposer, &cfg.compose)?;
    let candidate = MultiHopCandidate {
        seed_id: example.id.clone(),
        question,
        answer,
        sub_questions: Vec::new(),
        bridge_entities: Vec::new(),
        sampled_doc_ids: sampled.iter().map(|d| d.id.clone()).collect(),
        hop_count: t,
    };
    let (bridges, subs) = match parse_decomposition(&raw, t as usize) {
        Ok(p) => p,
        Err(f) => {
            let verdict = ValidationVerdict::reject(ValidationReason::ParseFailure, f.to_string());
            return Ok(Attempt::Validated(Box::new(CandidateLog { candidate, verdict }), None));
        }
    };
    let candidate = MultiHopCandidate {
        sub_questions: subs,
        bridge_entities: bridges,
        ..candidate
    };
    if let Err(e) = candidate.check_invariants(cfg.max_hops) {
        return Err(SynthesisError::Construction(e));
    }
    let outcome = validate(&candidate, documents, backends.store(), backends.scorer(), &cfg.helpfulness);
    let record = outcome
        .candidate
        .as_ref()
        .map(|bound| build_multihop_record(String::new(), bound, documents, &outcome.supporting));
    let logged = outcome.candidate.clone().unwrap_or(candidate);
    Ok(Attempt::Validated(
        Box::new(CandidateLog {
            candidate: logged,
            verdict: outcome.verdict,
        }),
        record,
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub examples: usize,
    /// Examples with no retrieval entry or no documents.
    pub skipped: Vec<String>,
    pub records: usize,
    pub records_by_hop: BTreeMap<u32, usize>,
    pub empty_available: usize,
    pub empty_kept: usize,
    pub seed_errors: BTreeMap<String, usize>,
    pub ledger: Ledger,
    pub verdicts: VerdictTally,
    /// Calls made by this process; a resumed run only counts its own work.
    pub calls: StageCalls,
}

pub struct SynthesisRun {
    pub records: Vec<SummaryRecord>,
    pub candidates: Vec<CandidateLog>,
    pub report: SynthesisReport,
}

fn fingerprint(cfg: &SynthesisConfig, backends: &SynthesisBackends) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(backends.composer_identity().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Number of empty records to keep so they make up at most `quota` of the
/// final dataset.
fn empty_allowance(quota: f64, non_empty: usize, available: usize) -> usize {
    if quota <= 0.0 {
        return 0;
    }
    let allowed = (quota * non_empty as f64 / (1.0 - quota) + 1e-9).floor() as usize;
    allowed.min(available)
}

/// Synthesizes the training set. Examples run on a worker pool; output order
/// follows `examples`.
pub fn run_synthesis(
    examples: &[QAExample],
    retrieval: &HashMap<String, Vec<Document>>,
    cfg: &SynthesisConfig,
    backends: &SynthesisBackends,
    opts: &RunOptions,
) -> Result<SynthesisRun, PipelineError> {
    cfg.validate()?;
    let mut ids = HashSet::new();
    for ex in examples {
        ex.validate().map_err(|e| PipelineError::Data(format!("{}: {e}", ex.id)))?;
        if !ids.insert(ex.id.as_str()) {
            return Err(PipelineError::Data(format!("duplicate example id {}", ex.id)));
        }
    }

    let (checkpoint, mut done) = match &opts.checkpoint {
        Some(path) => {
            let (ck, done) = Checkpoint::<ExampleOutcome>::open(path, &fingerprint(cfg, backends))?;
            (Some(ck), done)
        }
        None => (None, HashMap::new()),
    };

    let budget = opts.stop_after.unwrap_or(usize::MAX);
    let started = AtomicUsize::new(0);
    let write_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let fresh = run_pool(examples.len(), opts.workers.max(1), |i| {
        let ex = &examples[i];
        if done.contains_key(&ex.id) {
            return None;
        }
        let docs = retrieval.get(&ex.id).filter(|d| !d.is_empty())?;
        if started.fetch_add(1, Ordering::SeqCst) >= budget {
            return None;
        }
        let outcome = process_example(ex, docs, cfg, backends);
        if let Some(ck) = &checkpoint {
            if let Err(e) = ck.append(&ex.id, &outcome) {
                write_error.lock().expect("lock").get_or_insert(e);
            }
        }
        Some(outcome)
    });
    if let Some(e) = write_error.into_inner().expect("lock") {
        return Err(e);
    }

    let mut report = SynthesisReport {
        examples: examples.len(),
        ..Default::default()
    };
    let mut outcomes = Vec::with_capacity(examples.len());
    let mut missing = 0;
    for (ex, fresh) in examples.iter().zip(fresh) {
        if let Some(o) = fresh.or_else(|| done.remove(&ex.id)) {
            outcomes.push(o);
        } else if retrieval.get(&ex.id).is_none_or(|d| d.is_empty()) {
            report.skipped.push(ex.id.clone());
        } else {
            missing += 1;
        }
    }
    if missing > 0 {
        return Err(PipelineError::Interrupted {
            completed: outcomes.len(),
        });
    }
    if !report.skipped.is_empty() {
        log::warn!("{} examples have no retrieved documents and were skipped", report.skipped.len());
    }

    let mut records = Vec::new();
    let mut empties = Vec::new();
    let mut candidates = Vec::new();
    for o in outcomes {
        report.ledger.merge(&o.ledger);
        report.verdicts.merge(&o.verdicts);
        if let Some(code) = o.seed_error {
            *report.seed_errors.entry(code).or_default() += 1;
        }
        // Empty records are placed after the non-empty records of the same
        // example so kept ones land in input order.
        records.extend(o.records.into_iter().map(Some));
        if let Some(e) = o.empty_record {
            empties.push(records.len());
            records.push(Some(e));
        }
        candidates.extend(o.candidates);
    }

    let non_empty = records.len() - empties.len();
    let keep = empty_allowance(cfg.empty_quota, non_empty, empties.len());
    let mut rng = RandomSeed::new(cfg.seed).derive("empty-quota").rng();
    let kept: HashSet<usize> = sample(&mut rng, empties.len(), keep).into_iter().map(|i| empties[i]).collect();
    for slot in &empties {
        if !kept.contains(slot) {
            records[*slot] = None;
        }
    }
    let records: Vec<SummaryRecord> = records.into_iter().flatten().collect();

    report.records = records.len();
    for r in &records {
        *report.records_by_hop.entry(r.hop_count).or_default() += 1;
    }
    report.empty_available = empties.len();
    report.empty_kept = keep;
    report.calls = backends.calls();
    Ok(SynthesisRun {
        records,
        candidates,
        report,
    })
}

/// Writes `records.jsonl`, `candidates.jsonl` and `report.json` into `dir`.
pub fn write_synthesis_outputs(run: &SynthesisRun, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    write_jsonl(dir.join("records.jsonl"), &run.records)?;
    write_jsonl(dir.join("candidates.jsonl"), &run.candidates)?;
    let report = serde_json::to_string_pretty(&run.report).map_err(|e| PipelineError::Data(e.to_string()))?;
    let path = dir.join("report.json");
    std::fs::write(&path, report + "\n").map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

/// Per-example helpfulness scoring, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<HelpfulnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propositions: Option<HelpfulnessReport>,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scores documents and propositions for each example without composing.
pub fn score_examples(
    examples: &[QAExample],
    retrieval: &HashMap<String, Vec<Document>>,
    k: usize,
    backends: &SynthesisBackends,
    cfg: &HelpfulnessConfig,
    workers: usize,
) -> Vec<ScoreRow> {
    run_pool(examples.len(), workers.max(1), |i| {
        let ex = &examples[i];
        let docs = retrieval.get(&ex.id).map(Vec::as_slice).unwrap_or_default();
        Some(match build_singlehop_record(ex, docs, k, backends.store(), backends.scorer(), cfg) {
            Ok(o) => ScoreRow {
                id: ex.id.clone(),
                documents: Some(o.document_report),
                propositions: o.proposition_report,
                summary: o.record.summary,
                error: None,
            },
            Err(e) => ScoreRow {
                id: ex.id.clone(),
                documents: None,
                propositions: None,
                summary: String::new(),
                error: Some(e.to_string()),
            },
        })
    })
    .into_iter()
    .flatten()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{world_generator, SyntheticWorld};
    use crate::gateway::MockScorer;

    fn backends() -> SynthesisBackends {
        SynthesisBackends::new(Arc::new(world_generator()), Arc::new(world_generator()), Arc::new(MockScorer::default()), None)
    }

    #[test]
    fn allowance_matches_hand_values() {
        // 95 non-empty at 5% admits 5 empties: 5 / 100.
        assert_eq!(empty_allowance(0.05, 95, 40), 5);
        assert_eq!(empty_allowance(0.05, 95, 3), 3);
        assert_eq!(empty_allowance(0.05, 94, 40), 4);
        assert_eq!(empty_allowance(0.0, 95, 40), 0);
        assert_eq!(empty_allowance(0.5, 10, 40), 10);
    }

    #[test]
    fn seed_only_runs_never_compose() {
        let world = SyntheticWorld::generate(8, RandomSeed::new(3));
        let b = backends();
        let cfg = SynthesisConfig {
            hops: vec![1],
            ..Default::default()
        };
        let retrieval = super::super::index_retrieval(world.retrieval).unwrap();
        let run = run_synthesis(&world.examples, &retrieval, &cfg, &b, &RunOptions::default()).unwrap();
        assert_eq!(run.report.calls.composer, 0);
        assert_eq!(run.report.calls.decomposer, 0);
        assert!(run.report.calls.scorer > 0);
        assert_eq!(run.report.ledger.attempts, 0);
    }

    #[test]
    fn every_seed_gets_the_configured_attempts() {
        let world = SyntheticWorld::generate(6, RandomSeed::new(5));
        let b = backends();
        let cfg = SynthesisConfig {
            hops: vec![2, 3],
            ..Default::default()
        };
        let retrieval = super::super::index_retrieval(world.retrieval).unwrap();
        let run = run_synthesis(&world.examples, &retrieval, &cfg, &b, &RunOptions { workers: 3, ..Default::default() }).unwrap();
        assert_eq!(run.report.calls.composer, 6 * 2 * 3);
        assert_eq!(run.report.ledger.attempts, 6 * 2 * 3);
        assert!(run.report.ledger.is_conserved());
        assert!(run.records.iter().all(|r| r.hop_count >= 2 && r.hop_count <= 3));
    }

    #[test]
    fn bad_configs_fail_fast() {
        let cfg = SynthesisConfig {
            hops: vec![4],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = SynthesisConfig {
            empty_quota: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
