//! Corpus ingestion, token-budget filtering, train/dev splitting, corpus
//! statistics and evaluation of system outputs against references.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::generation::{initial_prompt, Task};
use crate::retrieval::DemoPair;
use crate::similarity::{bow_vector, table_average, Embedder};
use crate::textstats::{text_stats, TextStats};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub reference: Option<String>,
    pub task: Task,
}

impl Document {
    /// Training pair view; `None` without a reference.
    pub fn demo_pair(&self) -> Option<DemoPair> {
        self.reference.as_ref().map(|r| DemoPair {
            id: self.id.clone(),
            source: self.source.clone(),
            adaptation: r.clone(),
        })
    }

    pub fn reference(&self) -> Result<&str> {
        self.reference
            .as_deref()
            .ok_or_else(|| Error::MissingReferences(self.id.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// `.csv` is CSV, anything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    source: String,
    #[serde(default)]
    reference: Option<String>,
    task: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut rows: Vec<(usize, Document)> = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            let text = fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let doc: Document =
                    serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
                rows.push((i + 1, doc));
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(1, e.to_string()))?;
            let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
            for record in reader.records() {
                let record = record.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    parse_err(line, e.to_string())
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                let row: CsvRow = record
                    .deserialize(Some(&headers))
                    .map_err(|e| parse_err(line, e.to_string()))?;
                let task = row.task.parse().map_err(|e: Error| parse_err(line, e.to_string()))?;
                rows.push((
                    line,
                    Document {
                        id: row.id,
                        source: row.source,
                        reference: row.reference,
                        task,
                    },
                ));
            }
        }
    }

    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(rows.len());
    for (line, mut doc) in rows {
        if doc.source.trim().is_empty() {
            return Err(parse_err(line, format!("document {:?} has an empty source", doc.id)));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_owned(),
                line,
                id: doc.id,
            });
        }
        if doc.reference.as_deref().is_some_and(|r| r.trim().is_empty()) {
            doc.reference = None;
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Counts model tokens for the context-budget filter.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> Result<usize>;
}

/// Whitespace-separated tokens.
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> Result<usize> {
        Ok(text.split_whitespace().count())
    }
}

pub const DEFAULT_TOKEN_BUDGET: usize = 3000;

/// Splits `docs` into those whose instruction + source + reference fit in
/// `budget` tokens (inclusive) and those that do not.
pub fn filter_by_token_budget(
    docs: Vec<Document>,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if budget == 0 {
        return Err(Error::InvalidConfig("token budget must be positive".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for doc in docs {
        let text = format!(
            "{}\n{}\n{}",
            initial_prompt(doc.task),
            doc.source,
            doc.reference.as_deref().unwrap_or("")
        );
        if counter.count(&text)? <= budget {
            kept.push(doc);
        } else {
            dropped.push(doc);
        }
    }
    Ok((kept, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev_size: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            dev_size: 240,
            seed: 0,
        }
    }
}

/// Seeded uniform draw of `dev_size` documents into dev; both parts keep input order.
pub fn split_corpus(docs: Vec<Document>, spec: SplitSpec) -> Result<(Vec<Document>, Vec<Document>)> {
    if spec.dev_size == 0 || spec.dev_size >= docs.len() {
        return Err(Error::SpecInvalid(format!(
            "dev size {} must be in 1..{}",
            spec.dev_size,
            docs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dev_positions: HashSet<usize> =
        rand::seq::index::sample(&mut rng, docs.len(), spec.dev_size).into_iter().collect();
    let (dev, train): (Vec<_>, Vec<_>) = docs
        .into_iter()
        .enumerate()
        .partition(|(i, _)| dev_positions.contains(i));
    Ok((
        train.into_iter().map(|(_, d)| d).collect(),
        dev.into_iter().map(|(_, d)| d).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStatsReport {
    pub side: Side,
    pub doc_count: usize,
    pub sentence_count: usize,
    pub word_count: usize,
    pub syllable_count: usize,
    pub sentences_per_doc: f64,
    pub words_per_sentence: f64,
    pub syllables_per_word: f64,
    /// Index over the whole corpus as one text.
    pub fh_micro: Option<f64>,
    /// Mean of per-document indices, over documents that contain words.
    pub fh_macro: Option<f64>,
    pub bow_sim: Option<f64>,
    pub emb_sim: Option<f64>,
    pub avg_sim: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Source-reference similarity rows are filled when every document has a
/// reference (embedding row only with an embedder).
pub fn corpus_stats(
    docs: &[Document],
    side: Side,
    embedder: Option<&Embedder>,
    executor: Executor,
) -> Result<CorpusStatsReport> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let with_refs = docs.iter().all(|d| d.reference.is_some());
    if side == Side::Reference && !with_refs {
        let missing = docs.iter().find(|d| d.reference.is_none()).unwrap();
        return Err(Error::MissingReferences(missing.id.clone()));
    }

    let per_doc: Vec<TextStats> = executor.map(docs, |d| match side {
        Side::Source => text_stats(&d.source),
        Side::Reference => text_stats(d.reference.as_deref().unwrap_or("")),
    });
    let total = per_doc.iter().fold(TextStats::default(), |a, &b| a.merge(b));
    let fh_micro = total.fh().ok().map(|b| b.fh);
    let fh_macro = mean(per_doc.iter().filter_map(|s| s.fh().ok()).map(|b| b.fh));

    let (bow_sim, emb_sim) = if with_refs {
        let bow = mean(executor.map(docs, |d| {
            bow_vector(&d.source).cosine(&bow_vector(d.reference.as_deref().unwrap()))
        }));
        let emb = match embedder {
            Some(e) => {
                let sims: Result<Vec<f64>> = executor
                    .map(docs, |d| {
                        let v = e.embed_many(&[&d.source, d.reference.as_deref().unwrap()])?;
                        v[0].cosine(&v[1])
                    })
                    .into_iter()
                    .collect();
                mean(sims?)
            }
            None => None,
        };
        (bow, emb)
    } else {
        (None, None)
    };
    let avg_sim = bow_sim.zip(emb_sim).map(|(b, e)| (b + e) / 2.0);

    Ok(CorpusStatsReport {
        side,
        doc_count: docs.len(),
        sentence_count: total.sentence_count,
        word_count: total.word_count,
        syllable_count: total.syllable_count,
        sentences_per_doc: ratio(total.sentence_count, docs.len()),
        words_per_sentence: ratio(total.word_count, total.sentence_count),
        syllables_per_word: ratio(total.syllable_count, total.word_count),
        fh_micro,
        fh_macro,
        bow_sim,
        emb_sim,
        avg_sim,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEvaluation {
    pub doc_id: String,
    pub fh_source: f64,
    pub fh: f64,
    pub fh_gain: f64,
    pub bow_sim: f64,
    pub emb_sim: f64,
    pub table_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub doc_count: usize,
    pub fh_gain: f64,
    pub fh: f64,
    pub bow_sim: f64,
    pub emb_sim: f64,
    /// Reporting average of the three column means.
    pub table_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<DocEvaluation>,
    pub aggregate: EvalAggregate,
}

fn fh_of(text: &str) -> Result<f64> {
    Ok(text_stats(text).fh()?.fh)
}

/// Scores each output against its document's source and reference.
/// Rows are ordered by document id.
pub fn evaluate_run(
    outputs: &BTreeMap<String, String>,
    docs: &[Document],
    embedder: &Embedder,
    executor: Executor,
) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut jobs = Vec::with_capacity(outputs.len());
    for (id, adaptation) in outputs {
        let doc = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownDocId(id.clone()))?;
        jobs.push((*doc, doc.reference()?, adaptation.as_str()));
    }

    let rows: Result<Vec<DocEvaluation>> = executor
        .map(&jobs, |&(doc, reference, adaptation)| {
            let fh_source = fh_of(&doc.source)?;
            let fh = fh_of(adaptation)?;
            let bow_sim = bow_vector(adaptation).cosine(&bow_vector(reference));
            let v = embedder.embed_many(&[adaptation, reference])?;
            let emb_sim = v[0].cosine(&v[1])?;
            Ok(DocEvaluation {
                doc_id: doc.id.clone(),
                fh_source,
                fh,
                fh_gain: fh - fh_source,
                bow_sim,
                emb_sim,
                table_avg: table_average(fh, bow_sim, emb_sim),
            })
        })
        .into_iter()
        .collect();
    let rows = rows?;

    let col = |f: fn(&DocEvaluation) -> f64| mean(rows.iter().map(f)).unwrap_or(0.0);
    let (fh, bow_sim, emb_sim) = (col(|r| r.fh), col(|r| r.bow_sim), col(|r| r.emb_sim));
    let aggregate = EvalAggregate {
        doc_count: rows.len(),
        fh_gain: col(|r| r.fh_gain),
        fh,
        bow_sim,
        emb_sim,
        table_avg: table_average(fh, bow_sim, emb_sim),
    };
    Ok(EvalReport { rows, aggregate })
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.decimals$}"))
}

pub fn render_stats_table(r: &CorpusStatsReport) -> String {
    let side = match r.side {
        Side::Source => "Source",
        Side::Reference => "Target",
    };
    let rows = [
        ("# documents", r.doc_count.to_string()),
        ("# sentences", r.sentence_count.to_string()),
        ("# words", r.word_count.to_string()),
        ("Sentences per doc", format!("{:.2}", r.sentences_per_doc)),
        ("Words per sentence", format!("{:.2}", r.words_per_sentence)),
        ("Syllables per word", format!("{:.2}", r.syllables_per_word)),
        ("FH index (micro)", opt(r.fh_micro, 2)),
        ("FH index (macro)", opt(r.fh_macro, 2)),
        ("BoW similarity", opt(r.bow_sim, 4)),
        ("Embeddings similarity", opt(r.emb_sim, 4)),
        ("Average similarity", opt(r.avg_sim, 4)),
    ];
    let mut out = format!("{:<24}{:>12}\n", "Metric", side);
    for (name, value) in rows {
        let _ = writeln!(out, "{name:<24}{value:>12}");
    }
    out
}

pub fn render_eval_table(r: &EvalReport) -> String {
    let mut out = format!(
        "{:<24}{:>10}{:>10}{:>10}{:>10}{:>12}\n",
        "Document", "FH gain", "FH score", "BoW sim.", "Emb. sim.", "FH-Sim avg"
    );
    let mut line = |name: &str, gain: f64, fh: f64, bow: f64, emb: f64, avg: f64| {
        let _ = writeln!(out, "{name:<24}{gain:>+10.2}{fh:>10.2}{bow:>10.4}{emb:>10.4}{avg:>12.2}");
    };
    for row in &r.rows {
        line(&row.doc_id, row.fh_gain, row.fh, row.bow_sim, row.emb_sim, row.table_avg);
    }
    let a = &r.aggregate;
    line("AVERAGE", a.fh_gain, a.fh, a.bow_sim, a.emb_sim, a.table_avg);
    out
}
