//! JSONL run artifacts. Every record carries `schema_version`; files are only
//! ever appended to, by one writer.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apec_core::apec::ApecTrace;
use apec_core::generation::Task;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

pub fn to_line<T: Serialize>(record: &T) -> Result<String> {
    Ok(serde_json::to_string(&Versioned {
        schema_version: SCHEMA_VERSION,
        record,
    })?)
}

pub struct Sink {
    out: Box<dyn Write>,
}

impl Sink {
    /// Opens `path` for appending. An existing file is refused unless `append`.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        if path.exists() && !append {
            bail!("{} already exists; pass --append to add to it", path.display());
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Sink {
            out: Box::new(BufWriter::new(file)),
        })
    }

    pub fn stdout() -> Self {
        Sink {
            out: Box::new(std::io::stdout()),
        }
    }

    pub fn to(path: Option<&PathBuf>, append: bool) -> Result<Self> {
        match path {
            Some(p) => Self::open(p, append),
            None => Ok(Self::stdout()),
        }
    }

    pub fn record<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = to_line(record)?;
        self.raw(&line)
    }

    pub fn raw(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// Reads every non-blank line of a JSONL artifact. Lines with a
/// `schema_version` other than the current one are rejected.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let value: Value = serde_json::from_str(line).with_context(at)?;
        match value.get("schema_version") {
            None => {}
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(v) => bail!("{}: unsupported schema_version {v}", at()),
        }
        out.push(serde_json::from_value(value).with_context(at)?);
    }
    Ok(out)
}

/// One initial adaptation, as written by `adapt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub doc_id: String,
    pub task: Task,
    pub mode: String,
    pub stream: String,
    pub adaptation: String,
    pub demo_ids: Vec<String>,
}

/// One refined document, as written by `refine`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stream: String,
    #[serde(flatten)]
    pub trace: ApecTrace,
}

/// Any artifact that names a document and an output text: `final` wins over `adaptation`.
#[derive(Debug, Clone, Deserialize)]
pub struct OutputRecord {
    pub doc_id: String,
    #[serde(rename = "final")]
    pub final_text: Option<String>,
    pub adaptation: Option<String>,
}

impl OutputRecord {
    pub fn text(&self) -> Option<&str> {
        self.final_text.as_deref().or(self.adaptation.as_deref())
    }
}

pub fn stream_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stream".to_owned())
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}
