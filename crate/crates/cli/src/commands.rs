use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use apec_core::apec::{ensemble_streams, run_apec, ApecConfig, ApecTrace};
use apec_core::corpus::{
    corpus_stats, evaluate_run, filter_by_token_budget, load_corpus, render_eval_table, render_stats_table,
    split_corpus, write_jsonl, CorpusFormat, Document, Side, SplitSpec,
};
use apec_core::exec::Executor;
use apec_core::generation::{generate_text, render_initial_prompt, DecodingMode, DecodingParams, Generator};
use apec_core::retrieval::{
    derive_seed, embedding_top_k, length_ratio_admissible, random_k, Bm25Index, Bm25Params, Bm25Retriever,
    DemoPair, Demonstration,
};
use apec_core::similarity::Embedder;
use apec_core::tables::check_tables;
use apec_core::Error as CoreError;

use crate::artifacts::{
    create_parent, read_records, stream_name, AdaptationRecord, OutputRecord, Sink, TraceRecord,
};
use crate::config::FileConfig;
use crate::providers::{self, EmbedderSpec};
use crate::{
    AdaptArgs, Cli, Command, DecodingArg, EnsembleArgs, EvaluateArgs, FilterArgs, Format, IndexArgs, Mode,
    RefineArgs, SideArg, SplitArgs, StatsArgs,
};

pub enum Outcome {
    Done,
    Partial(String),
    Failed(String),
}

/// Misuse of the command line that clap cannot catch on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::ProviderUnavailable(_) | CoreError::ResponseEmpty) => 4,
        _ => 3,
    }
}

pub const DEFAULT_DEMOS: usize = 5;
/// Documents handed to the worker pool per batch; results are written after each batch.
const BATCH_PER_WORKER: usize = 4;

struct Ctx {
    cfg: FileConfig,
    seed: u64,
    workers: usize,
}

impl Ctx {
    fn executor(&self) -> Executor {
        Executor::from_workers(self.workers)
    }

    fn batch_size(&self) -> usize {
        self.workers.max(1) * BATCH_PER_WORKER
    }

    fn embedder(&self, spec: EmbedderSpec) -> Result<Option<Embedder>> {
        providers::embedder(spec, &self.cfg.embeddings)
    }

    fn required_embedder(&self, spec: EmbedderSpec) -> Result<Embedder> {
        providers::required_embedder(spec, &self.cfg.embeddings)
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(cfg.workers).unwrap_or(1);
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        workers,
        cfg,
    };
    match cli.command {
        Command::Stats(a) => stats(&ctx, a),
        Command::Index(a) => index(&ctx, a),
        Command::Adapt(a) => adapt(&ctx, a),
        Command::Refine(a) => refine(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Ensemble(a) => ensemble(a),
        Command::Tablecheck => tablecheck(),
        Command::Split(a) => split(&ctx, a),
        Command::Filter(a) => filter(&ctx, a),
    }
}

fn load(path: &Path) -> Result<Vec<Document>> {
    Ok(load_corpus(path, CorpusFormat::from_path(path))?)
}

fn training_pairs(path: &Path) -> Result<Vec<DemoPair>> {
    let docs = load(path)?;
    let pairs: Vec<DemoPair> = docs.iter().filter_map(Document::demo_pair).collect();
    if pairs.len() < docs.len() {
        eprintln!(
            "apec: {} training documents without a reference are not used as demonstrations",
            docs.len() - pairs.len()
        );
    }
    if pairs.is_empty() {
        bail!("{} has no documents with references", path.display());
    }
    Ok(pairs)
}

fn retriever(ctx: &Ctx, train: &Path, index: Option<&PathBuf>) -> Result<Bm25Retriever> {
    let pairs = training_pairs(train)?;
    Ok(match index {
        Some(p) => Bm25Retriever::new(Bm25Index::load(p)?, pairs)?,
        None => Bm25Retriever::build(pairs, ctx.cfg.retrieval.bm25())?,
    })
}

fn emit_report<T: serde::Serialize>(
    report: &T,
    table: impl FnOnce() -> String,
    format: Format,
    output: Option<&PathBuf>,
    append: bool,
) -> Result<()> {
    if let Some(p) = output {
        create_parent(p)?;
    }
    let mut sink = Sink::to(output, append)?;
    match format {
        Format::Json => sink.record(report),
        Format::Table => sink.raw(&table()),
    }
}

fn stats(ctx: &Ctx, a: StatsArgs) -> Result<Outcome> {
    let docs = load(&a.input)?;
    let embedder = ctx.embedder(a.embedder)?;
    let side = match a.side {
        SideArg::Source => Side::Source,
        SideArg::Reference => Side::Reference,
    };
    let report = corpus_stats(&docs, side, embedder.as_ref(), ctx.executor())?;
    emit_report(&report, || render_stats_table(&report), a.format, a.output.as_ref(), a.append)?;
    Ok(Outcome::Done)
}

fn index(ctx: &Ctx, a: IndexArgs) -> Result<Outcome> {
    let base = ctx.cfg.retrieval.bm25();
    let params = Bm25Params {
        k1: a.k1.unwrap_or(base.k1),
        b: a.b.unwrap_or(base.b),
        epsilon: a.epsilon.unwrap_or(base.epsilon),
        min_token_len: a.min_token_len.unwrap_or(base.min_token_len),
    };
    let pairs = training_pairs(&a.corpus)?;
    let index = Bm25Index::build(&pairs, params)?;
    create_parent(&a.output)?;
    index.save(&a.output)?;
    eprintln!(
        "apec: indexed {} documents, {} terms -> {}",
        index.len(),
        index.vocabulary().count(),
        a.output.display()
    );
    Ok(Outcome::Done)
}

/// Per-document results, written in input order batch by batch; returns the
/// number written and the failures.
fn run_batched<T, R>(
    ctx: &Ctx,
    items: &[T],
    sink: &mut Sink,
    work: impl Fn(&T) -> Result<R> + Sync + Send,
    id: impl Fn(&T) -> &str,
    write: impl Fn(&mut Sink, &R) -> Result<()>,
) -> Result<(usize, Vec<(String, anyhow::Error)>)>
where
    T: Sync,
    R: Send,
{
    let ex = ctx.executor();
    let mut written = 0;
    let mut failures = Vec::new();
    for batch in items.chunks(ctx.batch_size()) {
        for (item, result) in batch.iter().zip(ex.map(batch, &work)) {
            match result {
                Ok(r) => {
                    write(sink, &r)?;
                    written += 1;
                }
                Err(e) => {
                    eprintln!("apec: {}: {e:#}", id(item));
                    failures.push((id(item).to_owned(), e));
                }
            }
        }
    }
    Ok((written, failures))
}

/// Maps per-document failures onto the run outcome: all failed is an error
/// carrying the first failure, some failed is partial.
fn settle(total: usize, mut failures: Vec<(String, anyhow::Error)>, partial: usize) -> Result<Outcome> {
    if total > 0 && failures.len() == total {
        let (id, e) = failures.remove(0);
        return Err(e.context(format!("all {total} documents failed; first was {id}")));
    }
    let aborted = failures.len() + partial;
    if aborted > 0 {
        return Ok(Outcome::Partial(format!("{aborted} of {total} documents failed or are incomplete")));
    }
    Ok(Outcome::Done)
}

struct DemoSource<'a> {
    mode: Mode,
    k: usize,
    ratio: Option<(f64, f64)>,
    seed: u64,
    pairs: Vec<DemoPair>,
    retriever: Option<Bm25Retriever>,
    embedder: Option<&'a Embedder>,
}

impl DemoSource<'_> {
    fn demos(&self, doc: &Document) -> Result<Vec<Demonstration>> {
        let pool = || -> Vec<DemoPair> {
            self.pairs
                .iter()
                .filter(|p| p.id != doc.id)
                .filter(|p| match self.ratio {
                    Some((lo, hi)) => length_ratio_admissible(&p.source, &p.adaptation, lo, hi).unwrap_or(false),
                    None => true,
                })
                .cloned()
                .collect()
        };
        Ok(match self.mode {
            Mode::Zs => Vec::new(),
            Mode::FsRdm => {
                let pool = pool();
                random_k(&pool, self.k.min(pool.len()), derive_seed(self.seed, &doc.id))?
            }
            Mode::FsBm25 => self
                .retriever
                .as_ref()
                .expect("built for fs-bm25")
                .top_k(&doc.source, self.k, self.ratio, Some(&doc.id)),
            Mode::FsEmb => {
                let e = self.embedder.expect("required for fs-emb");
                embedding_top_k(&pool(), &doc.source, self.k, e, None)?
            }
        })
    }
}

fn adapt(ctx: &Ctx, a: AdaptArgs) -> Result<Outcome> {
    let mut docs = load(&a.input)?;
    let task = a.task.or(ctx.cfg.task);
    if let Some(task) = task {
        docs.retain(|d| d.task == task);
    }
    let k = a.k.or(ctx.cfg.retrieval.demo_count).unwrap_or(DEFAULT_DEMOS);
    let ratio = a.ratio.or(ctx.cfg.retrieval.ratio.map(|[lo, hi]| (lo, hi)));
    if a.mode != Mode::Zs && a.train.is_none() {
        return Err(usage(format!("--mode {} needs --train", a.mode.name())));
    }
    if a.mode == Mode::FsEmb && a.embedder == EmbedderSpec::None {
        return Err(usage("--mode fs-emb needs --embedder stub or http"));
    }
    let pairs = match &a.train {
        Some(p) if a.mode != Mode::Zs => training_pairs(p)?,
        _ => Vec::new(),
    };
    let retriever = match (&a.train, a.mode) {
        (Some(t), Mode::FsBm25) => Some(retriever(ctx, t, a.index.as_ref())?),
        _ => None,
    };
    let embedder = if a.mode == Mode::FsEmb {
        Some(ctx.required_embedder(a.embedder)?)
    } else {
        None
    };
    let source = DemoSource {
        mode: a.mode,
        k,
        ratio,
        seed: ctx.seed,
        pairs,
        retriever,
        embedder: embedder.as_ref(),
    };

    let section = ctx.cfg.decoding.initial.clone().unwrap_or_default();
    let mode = match a.decoding {
        Some(DecodingArg::Greedy) => DecodingMode::Greedy,
        Some(DecodingArg::Sampled) => DecodingMode::Sampled,
        None => section.mode.unwrap_or(DecodingMode::Greedy),
    };
    let mut decoding = section.apply(match mode {
        DecodingMode::Greedy => DecodingParams::greedy(),
        DecodingMode::Sampled => DecodingParams::initial_sampled(),
    });
    decoding.mode = mode;
    decoding.validate()?;
    let generator = providers::generator(&a.provider, &ctx.cfg.llm, ctx.workers)?;
    let stream = a.stream.clone().unwrap_or_else(|| a.mode.name().to_owned());

    create_parent(&a.output)?;
    let mut sink = Sink::open(&a.output, a.append)?;
    let work = |doc: &Document| -> Result<AdaptationRecord> {
        let demos = source.demos(doc)?;
        let request = render_initial_prompt(doc.task, &doc.source, &demos).with_decoding(decoding);
        let adaptation = generate_text(&generator, &request)?;
        Ok(AdaptationRecord {
            doc_id: doc.id.clone(),
            task: doc.task,
            mode: a.mode.name().to_owned(),
            stream: stream.clone(),
            adaptation,
            demo_ids: demos.into_iter().map(|d| d.doc_id).collect(),
        })
    };
    let (written, failures) = run_batched(ctx, &docs, &mut sink, work, |d| &d.id, |s, r| s.record(r))?;
    eprintln!("apec: wrote {written} adaptations to {}", a.output.display());
    settle(docs.len(), failures, 0)
}

fn outputs_by_doc(path: &Path) -> Result<Vec<(String, String)>> {
    let records: Vec<OutputRecord> = read_records(path)?;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let text = r
            .text()
            .ok_or_else(|| anyhow!("{}: record {} has neither final nor adaptation", path.display(), i + 1))?
            .to_owned();
        if seen.insert(r.doc_id.clone(), i).is_some() {
            bail!("{}: document {} appears more than once", path.display(), r.doc_id);
        }
        out.push((r.doc_id, text));
    }
    Ok(out)
}

fn refine(ctx: &Ctx, a: RefineArgs) -> Result<Outcome> {
    let docs = load(&a.corpus)?;
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let inputs = outputs_by_doc(&a.input)?;
    let jobs: Vec<(&Document, String)> = inputs
        .into_iter()
        .map(|(id, text)| {
            by_id
                .get(id.as_str())
                .map(|d| (*d, text))
                .ok_or_else(|| CoreError::UnknownDocId(id).into())
        })
        .collect::<Result<_>>()?;

    let defaults = ApecConfig::default();
    let config = ApecConfig {
        cycles: a.cycles.or(ctx.cfg.apec.cycles).unwrap_or(defaults.cycles),
        demo_count: a.k.or(ctx.cfg.apec.demo_count).unwrap_or(defaults.demo_count),
        refine_decoding: ctx
            .cfg
            .decoding
            .refine
            .as_ref()
            .map_or(defaults.refine_decoding, |s| s.apply(defaults.refine_decoding)),
        strict_improvement: ctx.cfg.apec.strict_improvement.unwrap_or(defaults.strict_improvement),
    };
    config.validate()?;
    let retriever = retriever(ctx, &a.train, a.index.as_ref())?;
    let generator: Generator = providers::generator(&a.provider, &ctx.cfg.llm, ctx.workers)?;
    let embedder = ctx.required_embedder(a.embedder)?;
    let stream = a.stream.clone().unwrap_or_else(|| stream_name(&a.input));

    create_parent(&a.output)?;
    let mut sink = Sink::open(&a.output, a.append)?;
    let incomplete = std::cell::Cell::new(0usize);
    let work = |(doc, initial): &(&Document, String)| -> Result<ApecTrace> {
        Ok(run_apec(doc, initial, &retriever, &generator, &embedder, &config)?)
    };
    let write = |s: &mut Sink, t: &ApecTrace| {
        if !t.complete {
            incomplete.set(incomplete.get() + 1);
        }
        s.record(&TraceRecord {
            stream: stream.clone(),
            trace: t.clone(),
        })
    };
    let (written, failures) = run_batched(ctx, &jobs, &mut sink, work, |(d, _)| &d.id, write)?;
    eprintln!("apec: wrote {written} traces to {}", a.output.display());
    settle(jobs.len(), failures, incomplete.get())
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<Outcome> {
    let docs = load(&a.corpus)?;
    let outputs: BTreeMap<String, String> = outputs_by_doc(&a.input)?.into_iter().collect();
    let embedder = ctx.required_embedder(a.embedder)?;
    let report = evaluate_run(&outputs, &docs, &embedder, ctx.executor())?;
    emit_report(&report, || render_eval_table(&report), a.format, a.output.as_ref(), a.append)?;
    Ok(Outcome::Done)
}

fn ensemble(a: EnsembleArgs) -> Result<Outcome> {
    if a.traces.len() < 2 {
        return Err(usage("ensemble needs at least two --traces files"));
    }
    let mut streams: Vec<(String, Vec<ApecTrace>)> = Vec::new();
    for path in &a.traces {
        let records: Vec<TraceRecord> = read_records(path)?;
        let name = records.first().map_or_else(|| stream_name(path), |r| r.stream.clone());
        if let Some(other) = records.iter().find(|r| r.stream != name) {
            bail!("{} mixes streams {name} and {}", path.display(), other.stream);
        }
        if streams.iter().any(|(n, _)| *n == name) {
            return Err(usage(format!("stream {name} given twice")));
        }
        streams.push((name, records.into_iter().map(|r| r.trace).collect()));
    }
    if let Some(unknown) = a.priority.iter().find(|p| !streams.iter().any(|(n, _)| n == *p)) {
        return Err(usage(format!("--priority names unknown stream {unknown}")));
    }
    let outcome = ensemble_streams(&streams, &a.priority)?;

    create_parent(&a.output)?;
    let mut sink = Sink::open(&a.output, a.append)?;
    for choice in &outcome.choices {
        sink.record(choice)?;
    }
    eprintln!("apec: wrote {} ensembled documents to {}", outcome.choices.len(), a.output.display());
    if outcome.missing.is_empty() {
        return Ok(Outcome::Done);
    }
    for (doc, lacking) in &outcome.missing {
        eprintln!("apec: {doc} missing from {}", lacking.join(", "));
    }
    Ok(Outcome::Partial(format!(
        "{} documents are not present in every stream",
        outcome.missing.len()
    )))
}

fn tablecheck() -> Result<Outcome> {
    let checks = check_tables();
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let flagged = checks.iter().filter(|c| !c.asserted).count();
    println!(
        "{} rows checked, {} failed, {} flagged as inconsistent in the source",
        checks.len(),
        failed,
        flagged
    );
    Ok(if failed == 0 {
        Outcome::Done
    } else {
        Outcome::Failed(format!("{failed} table rows do not reconcile"))
    })
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<Outcome> {
    let docs = load(&a.input)?;
    let (train, dev) = split_corpus(
        docs,
        SplitSpec {
            dev_size: a.dev_size,
            seed: ctx.seed,
        },
    )?;
    for (path, part) in [(&a.train_out, &train), (&a.dev_out, &dev)] {
        create_parent(path)?;
        write_jsonl(path, part).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("apec: {} train, {} dev", train.len(), dev.len());
    Ok(Outcome::Done)
}

fn filter(ctx: &Ctx, a: FilterArgs) -> Result<Outcome> {
    let docs = load(&a.input)?;
    let counter = providers::token_counter(a.tokenizer, &ctx.cfg.tokenizer)?;
    let (kept, dropped) = filter_by_token_budget(docs, a.budget, counter.as_ref())?;
    create_parent(&a.output)?;
    write_jsonl(&a.output, &kept)?;
    if let Some(p) = &a.dropped {
        create_parent(p)?;
        write_jsonl(p, &dropped)?;
    }
    eprintln!("apec: kept {}, dropped {} over {} tokens", kept.len(), dropped.len(), a.budget);
    Ok(Outcome::Done)
}
