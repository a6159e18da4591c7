//! Automatic post-editing cycles and cross-stream ensembling.
//!
//! Each cycle asks the model to review the current adaptation and produce a
//! corrected one. The correction replaces the current adaptation only when
//! its score, `(FH + 100·cos(source, candidate)) / 2`, is strictly higher.
//! Cycles never stop early, and failed cycles still count against the budget.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::generation::{generate_text, parse_apec_response, render_apec_prompt, DecodingParams, Generator, Task};
use crate::retrieval::{Bm25Retriever, Demonstration};
use crate::similarity::{combined_score, Embedder};
use crate::textstats::fh_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApecConfig {
    pub cycles: u32,
    pub demo_count: usize,
    pub refine_decoding: DecodingParams,
    pub strict_improvement: bool,
}

impl Default for ApecConfig {
    fn default() -> Self {
        ApecConfig {
            cycles: 5,
            demo_count: 5,
            refine_decoding: DecodingParams::refine(),
            strict_improvement: true,
        }
    }
}

impl ApecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::InvalidConfig("apec cycles must be at least 1".into()));
        }
        self.refine_decoding.validate()
    }

    fn improves(&self, candidate: f64, current: f64) -> bool {
        if self.strict_improvement {
            candidate > current
        } else {
            candidate >= current
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub fh: f64,
    pub emb_sim: f64,
    pub score: f64,
}

pub fn score_candidate(source: &str, candidate: &str, embedder: &Embedder) -> Result<CandidateScore> {
    if candidate.trim().is_empty() {
        return Err(Error::EmptyCandidate);
    }
    let fh = fh_index(candidate)?.fh;
    let vectors = embedder.embed_many(&[source, candidate])?;
    let emb_sim = vectors[0].cosine(&vectors[1])?;
    Ok(CandidateScore {
        fh,
        emb_sim,
        score: combined_score(fh, emb_sim),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    /// The parsed correction, or the raw response when it could not be used.
    pub candidate: String,
    pub fh: f64,
    pub emb_sim: f64,
    pub score: f64,
    pub accepted: bool,
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApecTrace {
    pub doc_id: String,
    pub task: Task,
    pub source: String,
    pub initial: String,
    pub initial_score: f64,
    pub demo_ids: Vec<String>,
    pub records: Vec<CycleRecord>,
    #[serde(rename = "final")]
    pub final_text: String,
    pub final_score: f64,
    /// False when a provider failure cut the cycles short.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ApecTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &CycleRecord> {
        self.records.iter().filter(|r| r.accepted)
    }
}

/// Refines `initial` for `doc` through `config.cycles` post-editing cycles.
///
/// Demonstrations are retrieved once, by BM25 over the document source,
/// excluding the document itself. A provider failure during the cycles stops
/// the run and returns the partial trace with `complete == false`; failing to
/// score the initial adaptation is an error.
pub fn run_apec(
    doc: &Document,
    initial: &str,
    retriever: &Bm25Retriever,
    generator: &Generator,
    embedder: &Embedder,
    config: &ApecConfig,
) -> Result<ApecTrace> {
    config.validate()?;
    if initial.trim().is_empty() {
        return Err(Error::EmptyAdaptation);
    }
    let demos: Vec<Demonstration> =
        retriever.top_k(&doc.source, config.demo_count, None, Some(&doc.id));
    let initial_score = score_candidate(&doc.source, initial, embedder)?.score;

    let mut trace = ApecTrace {
        doc_id: doc.id.clone(),
        task: doc.task,
        source: doc.source.clone(),
        initial: initial.to_owned(),
        initial_score,
        demo_ids: demos.iter().map(|d| d.doc_id.clone()).collect(),
        records: Vec::with_capacity(config.cycles as usize),
        final_text: initial.to_owned(),
        final_score: initial_score,
        complete: true,
        error: None,
    };

    for cycle in 1..=config.cycles {
        let request = render_apec_prompt(doc.task, &doc.source, &trace.final_text, &demos)?
            .with_decoding(config.refine_decoding);
        let raw = match generate_text(generator, &request) {
            Ok(raw) => raw,
            Err(e @ Error::ResponseEmpty) => {
                trace.records.push(unusable(cycle, String::new(), &e));
                continue;
            }
            Err(e @ Error::ProviderUnavailable(_)) => {
                trace.complete = false;
                trace.error = Some(e.to_string());
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        let candidate = match parse_apec_response(&raw, doc.task) {
            Ok(parsed) => parsed.correction,
            Err(e) => {
                trace.records.push(unusable(cycle, raw, &e));
                continue;
            }
        };
        let scored = match score_candidate(&doc.source, &candidate, embedder) {
            Ok(s) => s,
            Err(e @ Error::ProviderUnavailable(_)) => {
                trace.complete = false;
                trace.error = Some(e.to_string());
                return Ok(trace);
            }
            Err(e) => {
                trace.records.push(unusable(cycle, candidate, &e));
                continue;
            }
        };
        let accepted = config.improves(scored.score, trace.final_score);
        if accepted {
            trace.final_text = candidate.clone();
            trace.final_score = scored.score;
        }
        trace.records.push(CycleRecord {
            cycle,
            candidate,
            fh: scored.fh,
            emb_sim: scored.emb_sim,
            score: scored.score,
            accepted,
            parse_failed: false,
            error: None,
        });
    }
    Ok(trace)
}

fn unusable(cycle: u32, candidate: String, error: &Error) -> CycleRecord {
    CycleRecord {
        cycle,
        candidate,
        fh: 0.0,
        emb_sim: 0.0,
        score: 0.0,
        accepted: false,
        parse_failed: true,
        error: Some(error.to_string()),
    }
}

/// One document to refine.
#[derive(Debug, Clone)]
pub struct ApecJob {
    pub doc: Document,
    pub initial: String,
}

/// Runs [`run_apec`] over many documents; cycles within a document stay sequential.
pub fn run_apec_batch(
    jobs: &[ApecJob],
    retriever: &Bm25Retriever,
    generator: &Generator,
    embedder: &Embedder,
    config: &ApecConfig,
    executor: Executor,
) -> Vec<Result<ApecTrace>> {
    executor.map(jobs, |job| {
        run_apec(&job.doc, &job.initial, retriever, generator, embedder, config)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleChoice {
    pub doc_id: String,
    pub stream: String,
    pub adaptation: String,
    pub score: f64,
}

/// Picks the candidate with the highest final score. Ties go to the stream
/// listed first in `priority`; unlisted streams rank after listed ones, in input order.
pub fn ensemble_select(candidates: &[(&str, &ApecTrace)], priority: &[String]) -> Result<EnsembleChoice> {
    let rank = |stream: &str, i: usize| {
        priority
            .iter()
            .position(|p| p == stream)
            .unwrap_or(priority.len() + i)
    };
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|(i, (sa, a)), (j, (sb, b))| {
            a.final_score
                .total_cmp(&b.final_score)
                .then_with(|| rank(sb, *j).cmp(&rank(sa, *i)))
        })
        .map(|(_, c)| c)
        .ok_or_else(|| Error::NoCandidates(String::new()))?;
    Ok(EnsembleChoice {
        doc_id: best.1.doc_id.clone(),
        stream: best.0.to_owned(),
        adaptation: best.1.final_text.clone(),
        score: best.1.final_score,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub choices: Vec<EnsembleChoice>,
    /// Documents absent from at least one stream, with the streams that lack them.
    pub missing: BTreeMap<String, Vec<String>>,
}

/// Ensembles whole streams. Only documents present in every stream are
/// chosen; the rest are listed in `missing`. Choices are ordered by doc id.
pub fn ensemble_streams(streams: &[(String, Vec<ApecTrace>)], priority: &[String]) -> Result<EnsembleOutcome> {
    if streams.is_empty() {
        return Err(Error::NoCandidates("<all>".into()));
    }
    let by_stream: Vec<BTreeMap<&str, &ApecTrace>> = streams
        .iter()
        .map(|(_, traces)| traces.iter().map(|t| (t.doc_id.as_str(), t)).collect())
        .collect();
    let all: BTreeSet<&str> = by_stream.iter().flat_map(|m| m.keys().copied()).collect();

    let mut outcome = EnsembleOutcome::default();
    for doc in all {
        let present: Vec<(&str, &ApecTrace)> = streams
            .iter()
            .zip(&by_stream)
            .filter_map(|((name, _), m)| m.get(doc).map(|t| (name.as_str(), *t)))
            .collect();
        if present.len() < streams.len() {
            let lacking = streams
                .iter()
                .zip(&by_stream)
                .filter(|(_, m)| !m.contains_key(doc))
                .map(|((name, _), _)| name.clone())
                .collect();
            outcome.missing.insert(doc.to_owned(), lacking);
            continue;
        }
        outcome.choices.push(ensemble_select(&present, priority)?);
    }
    Ok(outcome)
}
