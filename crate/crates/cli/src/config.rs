//! Run configuration file (TOML). String values may reference environment
//! variables as `${NAME}`; an unset variable is an error.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use apec_core::generation::{DecodingMode, DecodingParams, Task};
use apec_core::retrieval::Bm25Params;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub llm: EndpointSection,
    #[serde(default)]
    pub embeddings: EndpointSection,
    #[serde(default)]
    pub tokenizer: EndpointSection,
    #[serde(default)]
    pub decoding: DecodingSections,
    #[serde(default)]
    pub apec: ApecSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingSections {
    pub initial: Option<DecodingSection>,
    pub refine: Option<DecodingSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingSection {
    pub mode: Option<DecodingMode>,
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub top_p: Option<f64>,
    pub max_new_tokens: Option<u32>,
}

impl DecodingSection {
    pub fn apply(&self, mut base: DecodingParams) -> DecodingParams {
        if let Some(m) = self.mode {
            base.mode = m;
        }
        if let Some(t) = self.temperature {
            base.temperature = t;
        }
        if let Some(k) = self.top_k {
            base.top_k = k;
        }
        if let Some(p) = self.top_p {
            base.top_p = p;
        }
        if let Some(n) = self.max_new_tokens {
            base.max_new_tokens = n;
        }
        base
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApecSection {
    pub cycles: Option<u32>,
    pub demo_count: Option<usize>,
    pub strict_improvement: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub epsilon: Option<f64>,
    pub min_token_len: Option<usize>,
    pub demo_count: Option<usize>,
    pub ratio: Option<[f64; 2]>,
}

impl RetrievalSection {
    pub fn bm25(&self) -> Bm25Params {
        let d = Bm25Params::default();
        Bm25Params {
            k1: self.k1.unwrap_or(d.k1),
            b: self.b.unwrap_or(d.b),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            min_token_len: self.min_token_len.unwrap_or(d.min_token_len),
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&raw, |name| std::env::var(name).ok()).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(raw: &str, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(raw)?;
        interpolate(&mut value, &env)?;
        Ok(value.try_into()?)
    }
}

fn interpolate(value: &mut toml::Value, env: &impl Fn(&str) -> Option<String>) -> Result<()> {
    match value {
        toml::Value::String(s) => *s = expand(s, env)?,
        toml::Value::Array(xs) => {
            for x in xs {
                interpolate(x, env)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, x) in t.iter_mut() {
                interpolate(x, env)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn expand(s: &str, env: &impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| anyhow!("unterminated ${{ in {s:?}"))?;
        let name = &after[..end];
        if name.is_empty() {
            bail!("empty variable name in {s:?}");
        }
        out.push_str(&env(name).ok_or_else(|| anyhow!("environment variable {name} is not set"))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(name: &str) -> Option<String> {
        match name {
            "LLM_ENDPOINT" => Some("http://localhost:8000/v1/chat/completions".into()),
            "LLM_API_KEY" => Some("secret".into()),
            _ => None,
        }
    }

    #[test]
    fn interpolates_strings() {
        let cfg = FileConfig::parse(
            r#"
            seed = 7
            [llm]
            endpoint = "${LLM_ENDPOINT}"
            api_key = "Bearer-less ${LLM_API_KEY}"
            [retrieval]
            ratio = [0.5, 1.5]
            "#,
            env,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.llm.endpoint.as_deref(), Some("http://localhost:8000/v1/chat/completions"));
        assert_eq!(cfg.llm.api_key.as_deref(), Some("Bearer-less secret"));
        assert_eq!(cfg.retrieval.ratio, Some([0.5, 1.5]));
    }

    #[test]
    fn unset_variable_is_an_error() {
        let err = FileConfig::parse("[embeddings]\napi_key = \"${EMB_API_KEY}\"", env).unwrap_err();
        assert!(format!("{err:#}").contains("EMB_API_KEY"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("[apec]\ncycle = 3", env).is_err());
    }

    #[test]
    fn decoding_override() {
        let cfg = FileConfig::parse("[decoding.refine]\ntemperature = 0.5", env).unwrap();
        let d = cfg.decoding.refine.unwrap().apply(DecodingParams::refine());
        assert_eq!(d.temperature, 0.5);
        assert_eq!(d.top_k, DecodingParams::refine().top_k);
    }
}
