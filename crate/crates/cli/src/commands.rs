use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use hopsum_core::compression::dataset_shots;
use hopsum_core::fixtures::SyntheticWorld;
use hopsum_core::gateway::{
    connect_generator, connect_scorer, EndpointConfig, GatewayError, LogLikelihoodScorer,
    TextGenerator,
};
use hopsum_core::jsonl::write_jsonl;
use hopsum_core::metrics::{render_csv, render_text, Report};
use hopsum_core::pipeline::{
    build_unified_dataset, compress_examples, evaluate_predictions, index_retrieval, load_jsonl,
    resolve_endpoint, run_eval, run_synthesis, score_examples, to_seq2seq,
    write_synthesis_outputs, EndpointOverrides, EvalConfig, FileConfig, PipelineError,
    PredictionRow, Reader, RunOptions, SummarySource, SynthesisBackends, SynthesisConfig,
};
use hopsum_core::propositions::{PropositionStore, Propositionizer};
use hopsum_core::synthesis::{accumulate, StatsGroups, StatsTable};
use hopsum_core::text::truncate_documents;
use hopsum_core::validation::{validate, VerdictTally};
use hopsum_core::{Document, MultiHopCandidate, QAExample, RetrievedSet, SummaryRecord};

use crate::{Cli, Command, EndpointArgs, EvaluateArgs, SynthesizeArgs};

type Result<T> = std::result::Result<T, PipelineError>;

struct Context {
    file: FileConfig,
    endpoints: EndpointArgs,
    workers: usize,
}

fn gateway_error(role: &str, e: GatewayError) -> PipelineError {
    match e {
        GatewayError::Config(m) | GatewayError::InvalidRequest(m) => {
            PipelineError::Config(format!("endpoint `{role}`: {m}"))
        }
        other => PipelineError::Endpoint(format!("endpoint `{role}`: {other}")),
    }
}

impl Context {
    fn endpoint(&self, role: &str) -> Result<EndpointConfig> {
        let a = &self.endpoints;
        let (url, model) = match role {
            "composer" => (&a.composer_url, &a.composer_model),
            "propositionizer" => (&a.propositionizer_url, &a.propositionizer_model),
            "scorer" => (&a.scorer_url, &a.scorer_model),
            "compressor" => (&a.compressor_url, &a.compressor_model),
            _ => (&a.reader_url, &a.reader_model),
        };
        let cli = EndpointOverrides {
            base_url: url.clone(),
            model_name: model.clone(),
            timeout_secs: a.timeout,
            ..Default::default()
        };
        resolve_endpoint(role, &self.file, &|k| std::env::var(k).ok(), &cli)
    }

    fn generator(&self, role: &str) -> Result<Arc<dyn TextGenerator>> {
        connect_generator(&self.endpoint(role)?).map_err(|e| gateway_error(role, e))
    }

    fn scorer(&self) -> Result<Arc<dyn LogLikelihoodScorer>> {
        connect_scorer(&self.endpoint("scorer")?).map_err(|e| gateway_error("scorer", e))
    }

    fn backends(&self, cache_dir: Option<&Path>) -> Result<SynthesisBackends> {
        Ok(SynthesisBackends::new(
            self.generator("composer")?,
            self.generator("propositionizer")?,
            self.scorer()?,
            cache_dir.map(Path::to_path_buf),
        ))
    }

    fn synthesis_config(&self) -> SynthesisConfig {
        self.file.synthesis.clone().unwrap_or_default()
    }

    fn eval_config(&self) -> EvalConfig {
        self.file.eval.clone().unwrap_or_default()
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn load_examples(path: &Path) -> Result<Vec<QAExample>> {
    let examples: Vec<QAExample> = load_jsonl(path)?;
    for (i, ex) in examples.iter().enumerate() {
        ex.validate()
            .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
    }
    Ok(examples)
}

fn load_retrieval(path: &Path) -> Result<HashMap<String, Vec<Document>>> {
    index_retrieval(load_jsonl::<RetrievedSet>(path)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if cli.workers == 0 {
        return Err(PipelineError::Config("--workers must be at least 1".into()));
    }
    let ctx = Context {
        file,
        endpoints: cli.endpoints,
        workers: cli.workers,
    };
    match cli.command {
        Command::Ingest {
            input,
            output,
            limit,
            retrieval,
        } => ingest(&input, &output, limit, retrieval),
        Command::Propositionize {
            retrieval,
            output,
            cache_dir,
        } => propositionize(&ctx, &retrieval, &output, cache_dir.as_deref()),
        Command::Score {
            examples,
            retrieval,
            output,
            k,
            cache_dir,
        } => score(&ctx, &examples, &retrieval, &output, k, cache_dir.as_deref()),
        Command::Synthesize(args) => synthesize(&ctx, args),
        Command::Validate {
            candidates,
            retrieval,
            output,
            cache_dir,
        } => revalidate(&ctx, &candidates, &retrieval, &output, cache_dir.as_deref()),
        Command::BuildDataset { records, output } => {
            let records: Vec<SummaryRecord> = load_jsonl(&records)?;
            let pairs: Vec<_> = records.iter().map(to_seq2seq).collect();
            let n = write_jsonl(&output, &pairs)?;
            println!("wrote {n} training pairs to {}", output.display());
            Ok(())
        }
        Command::Stats { inputs, json } => stats(&inputs, json),
        Command::Compress {
            examples,
            retrieval,
            output,
            top_n,
            chunk_size,
            seed,
        } => {
            let mut cfg = ctx.eval_config();
            cfg.top_n = top_n.unwrap_or(cfg.top_n);
            cfg.chunk_size = chunk_size.or(cfg.chunk_size);
            cfg.seed = seed.unwrap_or(cfg.seed);
            compress(&ctx, &examples, &retrieval, &output, &cfg)
        }
        Command::Evaluate(args) => evaluate(&ctx, args),
        Command::Merge { inputs, output } => merge(inputs, &output),
        Command::World { seeds, seed, out_dir } => world(seeds, seed, &out_dir),
    }
}

fn ingest(input: &Path, output: &Path, limit: usize, retrieval: bool) -> Result<()> {
    if limit == 0 {
        return Err(PipelineError::Config("--limit must be at least 1".into()));
    }
    if retrieval {
        let sets: Vec<RetrievedSet> = load_jsonl(input)?;
        let out: Vec<RetrievedSet> = sets
            .into_iter()
            .map(|s| RetrievedSet {
                documents: truncate_documents(&s.documents, limit),
                question_id: s.question_id,
            })
            .collect();
        let n = write_jsonl(output, &out)?;
        println!("wrote {n} retrieval sets to {}", output.display());
    } else {
        let docs: Vec<Document> = load_jsonl(input)?;
        let n = write_jsonl(output, &truncate_documents(&docs, limit))?;
        println!("wrote {n} documents to {}", output.display());
    }
    Ok(())
}

fn propositionize(ctx: &Context, retrieval: &Path, output: &Path, cache_dir: Option<&Path>) -> Result<()> {
    let mut store = Propositionizer::new(ctx.generator("propositionizer")?);
    if let Some(dir) = cache_dir {
        store = store.with_cache_dir(dir);
    }
    let sets: Vec<RetrievedSet> = load_jsonl(retrieval)?;
    let mut seen = std::collections::HashSet::new();
    let docs: Vec<&Document> = sets
        .iter()
        .flat_map(|s| &s.documents)
        .filter(|d| seen.insert(d.id.clone()))
        .collect();
    let mut props = Vec::new();
    let mut failed = 0;
    for d in docs {
        match store.propositions(d) {
            Ok(p) => props.extend(p),
            Err(e) => {
                log::warn!("{}: {e}", d.id);
                failed += 1;
            }
        }
    }
    let n = write_jsonl(output, &props)?;
    println!(
        "wrote {n} propositions to {} ({} documents fell back to sentence splitting, {failed} failed)",
        output.display(),
        store.downgrades()
    );
    Ok(())
}

fn score(
    ctx: &Context,
    examples: &Path,
    retrieval: &Path,
    output: &Path,
    k: Option<usize>,
    cache_dir: Option<&Path>,
) -> Result<()> {
    let cfg = ctx.synthesis_config();
    let backends = ctx.backends(cache_dir)?;
    let examples = load_examples(examples)?;
    let retrieval = load_retrieval(retrieval)?;
    let rows = score_examples(&examples, &retrieval, k.unwrap_or(cfg.k), &backends, &cfg.helpfulness, ctx.workers);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    write_jsonl(output, &rows)?;
    println!("scored {} examples ({failed} failed), {:?}", rows.len(), backends.calls());
    if failed > 0 && failed == rows.len() {
        return Err(PipelineError::Endpoint("every example failed to score".into()));
    }
    Ok(())
}

fn synthesize(ctx: &Context, a: SynthesizeArgs) -> Result<()> {
    let mut cfg = ctx.synthesis_config();
    if let Some(h) = a.hops {
        cfg.hops = h;
    }
    cfg.max_hops = a.max_hops.unwrap_or(cfg.max_hops);
    cfg.attempts = a.attempts.unwrap_or(cfg.attempts);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.empty_quota = a.empty_quota.unwrap_or(cfg.empty_quota);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;

    let backends = ctx.backends(a.cache_dir.as_deref())?;
    let examples = load_examples(&a.examples)?;
    let retrieval = load_retrieval(&a.retrieval)?;
    let opts = RunOptions {
        workers: ctx.workers,
        checkpoint: a.checkpoint,
        stop_after: a.stop_after,
    };
    let run = run_synthesis(&examples, &retrieval, &cfg, &backends, &opts)?;
    write_synthesis_outputs(&run, &a.out_dir)?;
    let r = &run.report;
    println!(
        "wrote {} records to {} ({} empty of {} kept)",
        r.records,
        a.out_dir.join("records.jsonl").display(),
        r.empty_kept,
        r.empty_available
    );
    print!("{}", r.ledger.render_text());
    println!(
        "calls composer {} decomposer {} propositionizer {} scorer {}",
        r.calls.composer, r.calls.decomposer, r.calls.propositionizer, r.calls.scorer
    );
    let transport = r.ledger.errors.get("Transport").copied().unwrap_or(0)
        + r.seed_errors.get("Transport").copied().unwrap_or(0);
    if run.records.is_empty() && transport > 0 {
        return Err(PipelineError::Endpoint(format!("{transport} calls failed in transport and no records were produced")));
    }
    Ok(())
}

fn revalidate(ctx: &Context, candidates: &Path, retrieval: &Path, output: &Path, cache_dir: Option<&Path>) -> Result<()> {
    let cfg = ctx.synthesis_config();
    let backends = ctx.backends(cache_dir)?;
    let candidates: Vec<MultiHopCandidate> = load_jsonl(candidates)?;
    let retrieval = load_retrieval(retrieval)?;
    let mut tally = VerdictTally::default();
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let docs = retrieval.get(&c.seed_id).map(Vec::as_slice).unwrap_or_default();
        let outcome = validate(&c, docs, backends.store(), backends.scorer(), &cfg.helpfulness);
        tally.record(outcome.verdict.reason);
        rows.push(hopsum_core::pipeline::CandidateLog {
            candidate: outcome.candidate.unwrap_or(c),
            verdict: outcome.verdict,
        });
    }
    write_jsonl(output, &rows)?;
    for (reason, n) in &tally.0 {
        println!("{reason:?} {n}");
    }
    Ok(())
}

fn stats(inputs: &[std::path::PathBuf], json: bool) -> Result<()> {
    let mut groups = StatsGroups::new();
    for path in inputs {
        let records: Vec<SummaryRecord> = load_jsonl(path)?;
        let stem = path.file_stem().map_or("unknown".into(), |s| s.to_string_lossy().into_owned());
        accumulate(&mut groups, &records, &stem);
    }
    let table = StatsTable::from_groups(&groups);
    if json {
        println!("{}", serde_json::to_string_pretty(&table).map_err(|e| PipelineError::Data(e.to_string()))?);
    } else {
        print!("{}", table.render_text());
    }
    Ok(())
}

fn compress(ctx: &Context, examples: &Path, retrieval: &Path, output: &Path, cfg: &EvalConfig) -> Result<()> {
    if cfg.chunk_size == Some(0) {
        return Err(PipelineError::Config("--chunk-size must be at least 1".into()));
    }
    let compressor = ctx.generator("compressor")?;
    let examples = load_examples(examples)?;
    let retrieval = load_retrieval(retrieval)?;
    let results = compress_examples(&examples, &retrieval, compressor.as_ref(), cfg, ctx.workers);
    let mut rows = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err((id, e)) => {
                log::warn!("{id}: {e}");
                failed += 1;
            }
        }
    }
    write_jsonl(output, &rows)?;
    println!("compressed {} examples ({failed} failed) into {}", rows.len(), output.display());
    if failed > 0 && rows.is_empty() {
        return Err(PipelineError::Endpoint("every compression failed".into()));
    }
    Ok(())
}

fn print_reports(reports: &[Report], csv: bool) {
    print!("{}", render_text(reports));
    if csv {
        print!("{}", render_csv(reports));
    }
}

fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<()> {
    let mut cfg = ctx.eval_config();
    cfg.dataset = a.dataset.unwrap_or(cfg.dataset);
    cfg.top_n = a.top_n.unwrap_or(cfg.top_n);
    cfg.chunk_size = a.chunk_size.or(cfg.chunk_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(m) = a.rate_mode {
        cfg.rate_mode = m.into();
    }
    if let Some(out) = &a.out_dir {
        create_dir(out)?;
    }

    if let Some(preds) = &a.predictions {
        let rows: Vec<PredictionRow> = load_jsonl(preds)?;
        let label = a.label.unwrap_or_else(|| "predictions".into());
        let (scored, report) = evaluate_predictions(&rows, &label, cfg.rate_mode);
        if let Some(out) = &a.out_dir {
            write_jsonl(out.join("rows.jsonl"), &scored)?;
            write_json(&out.join("report.json"), &[&report])?;
        }
        print_reports(&[report], a.csv);
        return Ok(());
    }

    let (Some(examples), Some(retrieval)) = (&a.examples, &a.retrieval) else {
        return Err(PipelineError::Config("evaluate needs --predictions, or --examples with --retrieval".into()));
    };
    let examples = load_examples(examples)?;
    let retrieval = load_retrieval(retrieval)?;
    let shots = dataset_shots(&cfg.dataset).map_err(|e| PipelineError::Config(e.to_string()))?;
    let source = if a.no_documents {
        SummarySource::NoDocuments
    } else if a.documents {
        SummarySource::Documents
    } else if let Some(path) = &a.summaries {
        let rows: Vec<hopsum_core::pipeline::CompressedRow> = load_jsonl(path)?;
        SummarySource::Precomputed(rows.into_iter().map(|r| (r.id.clone(), r)).collect())
    } else {
        SummarySource::Compressor(ctx.generator("compressor")?)
    };
    let readers = if a.readers.is_empty() {
        vec![Reader {
            label: a.label.unwrap_or_else(|| "reader".into()),
            generator: ctx.generator("reader")?,
        }]
    } else {
        let base = ctx.endpoint("reader")?;
        a.readers
            .into_iter()
            .map(|(label, url, model)| {
                let cfg = EndpointConfig {
                    base_url: url,
                    model_name: model.unwrap_or_else(|| base.model_name.clone()),
                    ..base.clone()
                };
                let generator = connect_generator(&cfg).map_err(|e| gateway_error("reader", e))?;
                Ok(Reader { label, generator })
            })
            .collect::<Result<Vec<_>>>()?
    };

    let out = run_eval(&examples, &retrieval, &source, &readers, &shots, &cfg, ctx.workers)?;
    if let Some(dir) = &a.out_dir {
        write_jsonl(dir.join("summaries.jsonl"), &out.summaries)?;
        for r in &out.readers {
            write_jsonl(dir.join(format!("rows_{}.jsonl", r.label)), &r.rows)?;
        }
        write_json(&dir.join("report.json"), &out.reports)?;
    }
    print_reports(&out.reports, a.csv);
    if !examples.is_empty() && out.readers.iter().all(|r| r.rows.is_empty()) {
        return Err(PipelineError::Endpoint("every reader call failed".into()));
    }
    Ok(())
}

fn merge(inputs: Vec<(String, std::path::PathBuf)>, output: &Path) -> Result<()> {
    let mut sources = Vec::with_capacity(inputs.len());
    for (label, path) in inputs {
        sources.push((label, load_jsonl::<SummaryRecord>(&path)?));
    }
    let (merged, stats) = build_unified_dataset(sources)?;
    let n = write_jsonl(output, &merged)?;
    println!("wrote {n} records to {}", output.display());
    print!("{}", stats.render_text());
    Ok(())
}

fn world(seeds: usize, seed: u64, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let w = SyntheticWorld::generate(seeds, hopsum_core::RandomSeed::new(seed));
    write_jsonl(out_dir.join("examples.jsonl"), &w.examples)?;
    write_jsonl(out_dir.join("eval.jsonl"), &w.eval_examples)?;
    write_jsonl(out_dir.join("retrieval.jsonl"), &w.retrieval)?;
    println!("wrote {seeds} seeds to {}", out_dir.display());
    Ok(())
}
