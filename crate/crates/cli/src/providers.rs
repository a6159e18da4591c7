//! Builds model and embedding handles from `--provider` / `--embedder` values.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Result};
use apec_core::corpus::{TokenCounter, WhitespaceCounter};
use apec_core::generation::stub::{EchoProvider, ScriptedProvider};
use apec_core::generation::Generator;
use apec_core::http::{Endpoint, HttpTokenCounter, OpenAiChatProvider, OpenAiEmbeddingProvider};
use apec_core::retry::RetryPolicy;
use apec_core::similarity::stub::HashingEmbedder;
use apec_core::similarity::Embedder;

use crate::config::EndpointSection;

pub const DEFAULT_MODEL: &str = "default";

#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    Echo,
    Scripted(PathBuf),
    Http,
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "echo" => Ok(ProviderSpec::Echo),
            "http" => Ok(ProviderSpec::Http),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(ProviderSpec::Scripted(p.into())),
                _ => Err(format!("expected echo, http or scripted:<fixture.jsonl>, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmbedderSpec {
    /// No embedding model; embedding columns are left empty where allowed.
    None,
    /// Deterministic feature-hashing vectors, for dry runs and tests.
    Stub,
    /// OpenAI-compatible embeddings endpoint.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TokenizerSpec {
    Whitespace,
    Http,
}

fn endpoint(section: &EndpointSection, url_var: &str, key_var: &str) -> Result<Endpoint> {
    let url = section
        .endpoint
        .clone()
        .or_else(|| std::env::var(url_var).ok())
        .filter(|u| !u.is_empty())
        .ok_or_else(|| anyhow!("no endpoint configured: set {url_var} or the endpoint key in the config file"))?;
    let key = section.api_key.clone().or_else(|| std::env::var(key_var).ok());
    let mut ep = Endpoint::new(url, section.model.as_deref().unwrap_or(DEFAULT_MODEL)).with_api_key(key);
    if let Some(secs) = section.timeout_secs {
        if secs == 0 {
            bail!("timeout_secs must be positive");
        }
        ep.timeout = Duration::from_secs(secs);
    }
    Ok(ep)
}

fn retry(section: &EndpointSection) -> RetryPolicy {
    RetryPolicy {
        retries: section.retries.unwrap_or(RetryPolicy::default().retries),
        ..RetryPolicy::default()
    }
}

pub fn generator(spec: &ProviderSpec, section: &EndpointSection, workers: usize) -> Result<Generator> {
    let g = match spec {
        ProviderSpec::Echo => Generator::new(Arc::new(EchoProvider)),
        ProviderSpec::Scripted(path) => Generator::new(Arc::new(ScriptedProvider::from_jsonl(path)?)),
        ProviderSpec::Http => {
            let ep = endpoint(section, "LLM_ENDPOINT", "LLM_API_KEY")?;
            Generator::new(Arc::new(OpenAiChatProvider::new(ep)))
        }
    };
    Ok(g.with_retry(retry(section))
        .with_max_in_flight(section.max_in_flight.unwrap_or(workers.max(1))))
}

pub fn embedder(spec: EmbedderSpec, section: &EndpointSection) -> Result<Option<Embedder>> {
    Ok(match spec {
        EmbedderSpec::None => None,
        EmbedderSpec::Stub => Some(Embedder::new(Arc::new(HashingEmbedder::default()))),
        EmbedderSpec::Http => {
            let ep = endpoint(section, "EMB_ENDPOINT", "EMB_API_KEY")?;
            Some(Embedder::new(Arc::new(OpenAiEmbeddingProvider::new(ep))).with_retry(retry(section)))
        }
    })
}

pub fn required_embedder(spec: EmbedderSpec, section: &EndpointSection) -> Result<Embedder> {
    embedder(spec, section)?.ok_or_else(|| anyhow!("this command needs an embedder (stub or http)"))
}

pub fn token_counter(spec: TokenizerSpec, section: &EndpointSection) -> Result<Box<dyn TokenCounter>> {
    Ok(match spec {
        TokenizerSpec::Whitespace => Box::new(WhitespaceCounter),
        TokenizerSpec::Http => Box::new(HttpTokenCounter::new(endpoint(section, "LLM_ENDPOINT", "LLM_API_KEY")?)),
    })
}
