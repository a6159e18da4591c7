//! Prompt rendering, decoding profiles, the LLM provider interface and
//! parsing of post-editing responses.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Demonstration;
use crate::retry::{ProviderFailure, RetryPolicy};

const PL_INITIAL: &str = include_str!("../templates/pl_initial.txt");
const ER_INITIAL: &str = include_str!("../templates/er_initial.txt");
const PL_APEC: &str = include_str!("../templates/pl_apec.txt");
const ER_APEC: &str = include_str!("../templates/er_apec.txt");

const INPUT_SLOT: &str = "{input}";
const INSTANCE_SLOT: &str = "{instance}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// Plain Language
    PL,
    /// Easy Read
    ER,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PL" => Ok(Task::PL),
            "ER" => Ok(Task::ER),
            _ => Err(Error::UnknownTask(s.to_owned())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::PL => "PL",
            Task::ER => "ER",
        })
    }
}

/// System prompt for the first adaptation of a document.
pub fn initial_prompt(task: Task) -> &'static str {
    match task {
        Task::PL => PL_INITIAL.trim_end(),
        Task::ER => ER_INITIAL.trim_end(),
    }
}

/// Post-editing instructions with `{input}` and `{instance}` placeholders.
pub fn apec_template(task: Task) -> &'static str {
    match task {
        Task::PL => PL_APEC.trim_end(),
        Task::ER => ER_APEC.trim_end(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub mode: DecodingMode,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 2048;

impl DecodingParams {
    pub fn greedy() -> Self {
        DecodingParams {
            mode: DecodingMode::Greedy,
            temperature: 0.0,
            top_k: 1,
            top_p: 1.0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }

    pub fn sampled(temperature: f64, top_k: u32, top_p: f64) -> Self {
        DecodingParams {
            mode: DecodingMode::Sampled,
            temperature,
            top_k,
            top_p,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }

    /// Low-temperature sampling used for the preference-tuned initial stream.
    pub fn initial_sampled() -> Self {
        Self::sampled(0.3, 40, 0.95)
    }

    /// Sampling for every post-editing cycle.
    pub fn refine() -> Self {
        Self::sampled(0.8, 50, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidDecoding("max_new_tokens must be positive".into()));
        }
        if self.mode == DecodingMode::Sampled {
            if !(self.temperature > 0.0) {
                return Err(Error::InvalidDecoding("sampling needs temperature > 0".into()));
            }
            if !(self.top_p > 0.0 && self.top_p <= 1.0) {
                return Err(Error::InvalidDecoding("top_p must be in (0, 1]".into()));
            }
            if self.top_k < 1 {
                return Err(Error::InvalidDecoding("top_k must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Empty when the instructions travel in the final user turn.
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub decoding: DecodingParams,
}

impl GenerationRequest {
    pub fn with_decoding(mut self, decoding: DecodingParams) -> Self {
        self.decoding = decoding;
        self
    }

    /// Content of the final user turn.
    pub fn prompt(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding.validate()?;
        let alternating = self.messages.iter().enumerate().all(|(i, m)| {
            m.role
                == if i % 2 == 0 {
                    Role::User
                } else {
                    Role::Assistant
                }
        });
        if !alternating || self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(Error::InvalidConfig(
                "messages must alternate user/assistant and end with a user turn".into(),
            ));
        }
        Ok(())
    }
}

fn exemplar_turns(demos: &[Demonstration]) -> Vec<Message> {
    let mut demos: Vec<&Demonstration> = demos.iter().collect();
    demos.sort_by_key(|d| d.rank);
    demos
        .into_iter()
        .flat_map(|d| [Message::user(&d.source), Message::assistant(&d.adaptation)])
        .collect()
}

/// First-pass adaptation request: task system prompt, one user/assistant
/// exemplar pair per demonstration in rank order, then the source. Greedy by default.
pub fn render_initial_prompt(task: Task, source: &str, demos: &[Demonstration]) -> GenerationRequest {
    let mut messages = exemplar_turns(demos);
    messages.push(Message::user(source));
    GenerationRequest {
        system_prompt: initial_prompt(task).to_owned(),
        messages,
        decoding: DecodingParams::greedy(),
    }
}

/// Fills the post-editing template in a single pass so text inside `source`
/// that looks like a placeholder is never substituted again.
pub fn fill_apec_template(task: Task, source: &str, adaptation: &str) -> String {
    let template = apec_template(task);
    let (head, rest) = template
        .split_once(INPUT_SLOT)
        .expect("template has an input slot");
    let (middle, tail) = rest
        .split_once(INSTANCE_SLOT)
        .expect("template has an instance slot");
    let mut out = String::with_capacity(template.len() + source.len() + adaptation.len());
    out.push_str(head);
    out.push_str(source);
    out.push_str(middle);
    out.push_str(adaptation);
    out.push_str(tail);
    out
}

/// Post-editing request: exemplar turns, then the filled template as the
/// only instruction. Sampled with the refinement profile by default.
pub fn render_apec_prompt(
    task: Task,
    source: &str,
    current_adaptation: &str,
    demos: &[Demonstration],
) -> Result<GenerationRequest> {
    if current_adaptation.trim().is_empty() {
        return Err(Error::EmptyAdaptation);
    }
    let mut messages = exemplar_turns(demos);
    messages.push(Message::user(fill_apec_template(task, source, current_adaptation)));
    Ok(GenerationRequest {
        system_prompt: String::new(),
        messages,
        decoding: DecodingParams::refine(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Critical,
    Fixable,
}

const VERDICT_MARKERS: [(&str, Verdict); 3] = [
    ("ADAPTACIÓN CORRECTA", Verdict::Correct),
    ("ERRORES CRÍTICOS", Verdict::Critical),
    ("ADAPTACIÓN A CORREGIR", Verdict::Fixable),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedApecResponse {
    pub analysis: String,
    pub correction: String,
    pub final_notes: Option<String>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Analysis,
    Correction,
    Final,
}

fn fold_accents(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'á' => 'a',
            'é' => 'e',
            'í' => 'i',
            'ó' => 'o',
            'ú' => 'u',
            c => c,
        })
        .collect()
}

/// Recognises `#`..`######` headings, ignoring surrounding whitespace,
/// emphasis markers, a trailing colon, case and accents.
fn section_header(line: &str) -> Option<Section> {
    let trimmed = line.trim();
    if !trimmed.starts_with('#') {
        return None;
    }
    let name = trimmed
        .trim_start_matches('#')
        .trim()
        .trim_matches('*')
        .trim()
        .trim_end_matches(':')
        .trim();
    let name = fold_accents(&name.to_lowercase());
    if name == "correccion" {
        Some(Section::Correction)
    } else if name == "final" {
        Some(Section::Final)
    } else if name.starts_with("analisis") {
        Some(Section::Analysis)
    } else {
        None
    }
}

/// Splits a post-editing response into its analysis, correction and final sections.
///
/// The correction is the text between the first correction heading and the
/// next final heading (or end of text), trimmed. For easy-read responses the
/// verdict is the earliest marker found in the analysis.
pub fn parse_apec_response(raw: &str, task: Task) -> Result<ParsedApecResponse> {
    let mut offsets = Vec::new();
    let mut pos = 0;
    for line in raw.split_inclusive('\n') {
        offsets.push((pos, pos + line.len(), line));
        pos += line.len();
    }

    let correction_line = offsets
        .iter()
        .position(|&(_, _, l)| section_header(l) == Some(Section::Correction))
        .ok_or(Error::MissingCorrection)?;
    let final_line = offsets[correction_line + 1..]
        .iter()
        .position(|&(_, _, l)| section_header(l) == Some(Section::Final))
        .map(|i| i + correction_line + 1);
    let analysis_line = offsets[..correction_line]
        .iter()
        .position(|&(_, _, l)| section_header(l) == Some(Section::Analysis));

    let body_start = offsets[correction_line].1;
    let body_end = final_line.map_or(raw.len(), |i| offsets[i].0);
    let mut correction = &raw[body_start..body_end];
    if let Some(cut) = correction.find("# Final") {
        correction = &correction[..cut];
    }
    let correction = correction.trim();
    if correction.is_empty() {
        return Err(Error::MissingCorrection);
    }

    let analysis_start = analysis_line.map_or(0, |i| offsets[i].1);
    let analysis = raw[analysis_start..offsets[correction_line].0].trim().to_owned();
    let final_notes = final_line
        .map(|i| raw[offsets[i].1..].trim().to_owned())
        .filter(|s| !s.is_empty());

    let verdict = match task {
        Task::PL => None,
        Task::ER => {
            let upper = analysis.to_uppercase();
            VERDICT_MARKERS
                .iter()
                .filter_map(|&(marker, v)| upper.find(marker).map(|p| (p, v)))
                .min_by_key(|&(p, _)| p)
                .map(|(_, v)| v)
        }
    };

    Ok(ParsedApecResponse {
        analysis,
        correction: correction.to_owned(),
        final_notes,
        verdict,
    })
}

/// A chat-completion backend.
pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, ProviderFailure>;
}

/// One provider call as recorded in a run transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: GenerationRequest,
    pub response: std::result::Result<String, String>,
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable generation handle: retries, an optional cap on concurrent
/// requests, and an optional transcript of every call.
pub struct Generator {
    provider: Arc<dyn LlmProvider>,
    retry: RetryPolicy,
    in_flight: Option<InFlight>,
    transcript: Option<Mutex<Vec<Exchange>>>,
}

impl Generator {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Generator {
            provider,
            retry: RetryPolicy::default(),
            in_flight: None,
            transcript: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = Some(InFlight {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        });
        self
    }

    pub fn recording(mut self) -> Self {
        self.transcript = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    fn record(&self, request: &GenerationRequest, response: std::result::Result<String, String>) {
        if let Some(t) = &self.transcript {
            t.lock().unwrap().push(Exchange {
                request: request.clone(),
                response,
            });
        }
    }
}

/// Sends `request` and returns the assistant text.
pub fn generate_text(generator: &Generator, request: &GenerationRequest) -> Result<String> {
    request.validate()?;
    let _slot = generator.in_flight.as_ref().map(InFlight::acquire);
    let result = generator
        .retry
        .run(|| generator.provider.complete(request))
        .and_then(|text| {
            if text.trim().is_empty() {
                Err(Error::ResponseEmpty)
            } else {
                Ok(text)
            }
        });
    generator.record(
        request,
        result.as_ref().map(Clone::clone).map_err(ToString::to_string),
    );
    result
}

/// Offline providers for tests and dry runs.
pub mod stub {
    use super::*;

    /// Answers with the final user message.
    pub struct EchoProvider;

    impl LlmProvider for EchoProvider {
        fn id(&self) -> &str {
            "echo"
        }

        fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, ProviderFailure> {
            Ok(request.prompt().to_owned())
        }
    }

    #[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
    pub struct ScriptEntry {
        #[serde(rename = "match")]
        pub pattern: String,
        pub response: String,
    }

    /// Replays canned responses. Each call consumes the first unused entry
    /// whose `match` occurs in the final user message; an empty `match`
    /// accepts any prompt. Running out of entries is a fatal failure.
    pub struct ScriptedProvider {
        entries: Mutex<Vec<(ScriptEntry, bool)>>,
    }

    impl ScriptedProvider {
        pub fn new(entries: Vec<ScriptEntry>) -> Self {
            ScriptedProvider {
                entries: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
            }
        }

        /// Loads a JSONL fixture of `{"match": ..., "response": ...}` lines.
        pub fn from_jsonl(path: &Path) -> Result<Self> {
            let text = fs::read_to_string(path)?;
            let mut entries = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.push(entry);
            }
            Ok(Self::new(entries))
        }

        pub fn remaining(&self) -> usize {
            self.entries.lock().unwrap().iter().filter(|(_, used)| !used).count()
        }
    }

    impl LlmProvider for ScriptedProvider {
        fn id(&self) -> &str {
            "scripted"
        }

        fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, ProviderFailure> {
            let prompt = request.prompt();
            let mut entries = self.entries.lock().unwrap();
            match entries
                .iter_mut()
                .find(|(e, used)| !*used && prompt.contains(e.pattern.as_str()))
            {
                Some((entry, used)) => {
                    *used = true;
                    Ok(entry.response.clone())
                }
                None => Err(ProviderFailure::fatal("script has no entry for this prompt")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::stub::*;
    use super::*;

    fn demo(rank: usize, source: &str, adaptation: &str) -> Demonstration {
        Demonstration {
            doc_id: format!("d{rank}"),
            source: source.into(),
            adaptation: adaptation.into(),
            retrieval_score: 1.0 / rank as f64,
            rank,
        }
    }

    #[test]
    fn task_parsing() {
        assert_eq!("pl".parse::<Task>().unwrap(), Task::PL);
        assert_eq!(" ER ".parse::<Task>().unwrap(), Task::ER);
        assert!(matches!("XX".parse::<Task>(), Err(Error::UnknownTask(t)) if t == "XX"));
    }

    #[test]
    fn zero_shot_initial_prompt() {
        let r = render_initial_prompt(Task::PL, "texto", &[]);
        assert!(r
            .system_prompt
            .starts_with("Eres un asistente que adapta textos a un estilo de lenguaje claro."));
        assert_eq!(r.messages, [Message::user("texto")]);
        assert_eq!(r.decoding.mode, DecodingMode::Greedy);
        r.validate().unwrap();
    }

    #[test]
    fn few_shot_turns_follow_rank() {
        let demos = [demo(2, "s2", "a2"), demo(1, "s1", "a1")];
        let r = render_initial_prompt(Task::ER, "texto", &demos);
        assert!(r.system_prompt.contains("estilo de lectura fácil"));
        let got: Vec<(Role, &str)> = r.messages.iter().map(|m| (m.role, m.content.as_str())).collect();
        assert_eq!(
            got,
            [
                (Role::User, "s1"),
                (Role::Assistant, "a1"),
                (Role::User, "s2"),
                (Role::Assistant, "a2"),
                (Role::User, "texto"),
            ]
        );
    }

    #[test]
    fn apec_prompt_substitution() {
        let r = render_apec_prompt(Task::PL, "ORIGEN {instance}", "ADAPTADO", &[]).unwrap();
        assert_eq!(r.messages.len(), 1);
        let p = r.prompt();
        assert!(p.contains("# Original\nORIGEN {instance}\n"));
        assert!(p.ends_with("# Adaptación\nADAPTADO"));
        assert!(!p.contains("{input}"));
        assert!(r.system_prompt.is_empty());
        assert_eq!(r.decoding, DecodingParams::refine());

        let with_demos = render_apec_prompt(Task::ER, "o", "a", &[demo(1, "s", "t")]).unwrap();
        assert_eq!(with_demos.messages.len(), 3);
        assert!(matches!(
            render_apec_prompt(Task::PL, "o", " \n", &[]),
            Err(Error::EmptyAdaptation)
        ));
    }

    #[test]
    fn decoding_validation() {
        DecodingParams::greedy().validate().unwrap();
        DecodingParams::refine().validate().unwrap();
        DecodingParams::initial_sampled().validate().unwrap();
        assert!(DecodingParams::sampled(0.0, 40, 0.9).validate().is_err());
        assert!(DecodingParams::sampled(0.5, 0, 0.9).validate().is_err());
        assert!(DecodingParams::sampled(0.5, 40, 1.5).validate().is_err());
        let greedy_with_junk = DecodingParams {
            temperature: -3.0,
            top_k: 0,
            ..DecodingParams::greedy()
        };
        greedy_with_junk.validate().unwrap();
    }

    #[test]
    fn parses_three_sections() {
        let raw = "# Análisis de la adaptación\nFrases largas.\n\n# Corrección\nLínea uno.\nLínea dos.\n\n# Final\nNada más.\n";
        let p = parse_apec_response(raw, Task::PL).unwrap();
        assert_eq!(p.analysis, "Frases largas.");
        assert_eq!(p.correction, "Línea uno.\nLínea dos.");
        assert_eq!(p.final_notes.as_deref(), Some("Nada más."));
        assert_eq!(p.verdict, None);
    }

    #[test]
    fn tolerant_headers() {
        let raw = "Intro\n  ## ANALISIS DE LA ADAPTACION  \nok\n### **Corrección:**\r\nTexto nuevo.\r\n#Final\n";
        let p = parse_apec_response(raw, Task::PL).unwrap();
        assert_eq!(p.analysis, "ok");
        assert_eq!(p.correction, "Texto nuevo.");
        assert_eq!(p.final_notes, None);
    }

    #[test]
    fn easy_read_verdicts() {
        let raw = "# Análisis de la adaptación\nHay ERRORES CRÍTICOS. No es ADAPTACIÓN CORRECTA.\n# Corrección\nNuevo.";
        assert_eq!(parse_apec_response(raw, Task::ER).unwrap().verdict, Some(Verdict::Critical));
        let raw = "# Análisis de la adaptación\nAdaptación a corregir: frases largas.\n# Corrección\nNuevo.";
        assert_eq!(parse_apec_response(raw, Task::ER).unwrap().verdict, Some(Verdict::Fixable));
        let raw = "# Análisis de la adaptación\nBien.\n# Corrección\nNuevo.";
        assert_eq!(parse_apec_response(raw, Task::ER).unwrap().verdict, None);
        let raw = "# Análisis\nADAPTACIÓN CORRECTA\n# Corrección\nNuevo.";
        assert_eq!(parse_apec_response(raw, Task::PL).unwrap().verdict, None);
    }

    #[test]
    fn missing_correction() {
        assert!(matches!(
            parse_apec_response("# Análisis\nbien\n# Final\nfin", Task::PL),
            Err(Error::MissingCorrection)
        ));
        assert!(matches!(
            parse_apec_response("# Corrección\n\n  \n# Final\nfin", Task::PL),
            Err(Error::MissingCorrection)
        ));
        assert!(matches!(parse_apec_response("", Task::ER), Err(Error::MissingCorrection)));
    }

    #[test]
    fn inline_final_marker_is_cut() {
        let p = parse_apec_response("# Corrección\nTexto. # Final nota", Task::PL).unwrap();
        assert_eq!(p.correction, "Texto.");
    }

    struct Flaky {
        failures_left: AtomicUsize,
        calls: AtomicUsize,
    }

    impl LlmProvider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, _: &GenerationRequest) -> std::result::Result<String, ProviderFailure> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderFailure::transient("timeout"));
            }
            Ok("hecho".into())
        }
    }

    fn flaky(failures: usize) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures_left: AtomicUsize::new(failures),
            calls: AtomicUsize::new(0),
        })
    }

    #[test]
    fn echo_returns_last_user_message() {
        let g = Generator::new(Arc::new(EchoProvider));
        let r = render_initial_prompt(Task::PL, "hola mundo", &[demo(1, "a", "b")]);
        assert_eq!(generate_text(&g, &r).unwrap(), "hola mundo");
    }

    #[test]
    fn retries_transient_failures() {
        let p = flaky(2);
        let g = Generator::new(p.clone()).with_retry(RetryPolicy::immediate(3));
        let r = render_initial_prompt(Task::PL, "x", &[]);
        assert_eq!(generate_text(&g, &r).unwrap(), "hecho");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);

        let p = flaky(usize::MAX);
        let g = Generator::new(p.clone()).with_retry(RetryPolicy::immediate(3));
        assert!(matches!(generate_text(&g, &r), Err(Error::ProviderUnavailable(_))));
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn empty_response_and_transcript() {
        let g = Generator::new(Arc::new(ScriptedProvider::new(vec![ScriptEntry {
            pattern: String::new(),
            response: "  ".into(),
        }])))
        .recording();
        let r = render_initial_prompt(Task::PL, "x", &[]);
        assert!(matches!(generate_text(&g, &r), Err(Error::ResponseEmpty)));
        let t = g.transcript();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].request, r);
        assert!(t[0].response.is_err());
    }

    #[test]
    fn scripted_provider_consumes_matching_entries_in_order() {
        let entry = |m: &str, r: &str| ScriptEntry {
            pattern: m.into(),
            response: r.into(),
        };
        let p = ScriptedProvider::new(vec![entry("beta", "B1"), entry("alfa", "A1"), entry("beta", "B2")]);
        let g = Generator::new(Arc::new(p)).with_retry(RetryPolicy::immediate(0));
        let ask = |s: &str| generate_text(&g, &render_initial_prompt(Task::PL, s, &[]));
        assert_eq!(ask("texto alfa").unwrap(), "A1");
        assert_eq!(ask("texto beta").unwrap(), "B1");
        assert_eq!(ask("texto beta").unwrap(), "B2");
        assert!(matches!(ask("texto beta"), Err(Error::ProviderUnavailable(_))));
    }

    #[test]
    fn in_flight_cap_is_respected() {
        struct Slow {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl LlmProvider for Slow {
            fn id(&self) -> &str {
                "slow"
            }
            fn complete(&self, _: &GenerationRequest) -> std::result::Result<String, ProviderFailure> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok("ok".into())
            }
        }
        let slow = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let g = Generator::new(slow.clone()).with_max_in_flight(2);
        let r = render_initial_prompt(Task::PL, "x", &[]);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| generate_text(&g, &r).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
