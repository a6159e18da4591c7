//! Lexical and semantic similarity, and the two score combinations built on them.
//!
//! Cosine similarities live in `[0, 1]` (counts) or `[-1, 1]` (embeddings) and
//! are scaled by 100 before being averaged with the readability index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retry::{ProviderFailure, RetryPolicy};

/// Raw term counts over lowercased alphanumeric runs of at least two characters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BowVector {
    counts: BTreeMap<String, u32>,
}

impl BowVector {
    pub fn counts(&self) -> &BTreeMap<String, u32> {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.counts
            .values()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &BowVector) -> f64 {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .filter_map(|(t, &c)| large.counts.get(t).map(|&d| c as f64 * d as f64))
            .sum()
    }

    /// Cosine similarity in `[0, 1]`; 0 when either vector is empty.
    pub fn cosine(&self, other: &BowVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(0.0, 1.0)
    }
}

impl<S: Into<String>> FromIterator<(S, u32)> for BowVector {
    fn from_iter<I: IntoIterator<Item = (S, u32)>>(iter: I) -> Self {
        let mut counts = BTreeMap::new();
        for (term, n) in iter {
            if n > 0 {
                *counts.entry(term.into()).or_insert(0) += n;
            }
        }
        BowVector { counts }
    }
}

pub fn bow_vector(text: &str) -> BowVector {
    let lower = text.to_lowercase();
    let mut counts = BTreeMap::new();
    for token in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().nth(1).is_some())
    {
        *counts.entry(token.to_owned()).or_insert(0) += 1;
    }
    BowVector { counts }
}

/// Cosine of two dense vectors; 0 when either has zero norm.
pub fn cosine_dense(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        cosine_dense(&self.values, &other.values)
    }
}

/// In-loop score: readability averaged with embedding similarity on a 0-100 scale.
pub fn combined_score(fh: f64, emb_sim: f64) -> f64 {
    (fh + 100.0 * emb_sim) / 2.0
}

/// Reporting score: readability averaged with both similarities on a 0-100 scale.
pub fn table_average(fh: f64, bow_sim: f64, emb_sim: f64) -> f64 {
    (fh + 100.0 * bow_sim + 100.0 * emb_sim) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fh: f64,
    pub bow_sim: f64,
    pub emb_sim: f64,
    pub combined: f64,
    pub table_avg: f64,
}

impl MetricReport {
    pub fn new(fh: f64, bow_sim: f64, emb_sim: f64) -> Self {
        MetricReport {
            fh,
            bow_sim,
            emb_sim,
            combined: combined_score(fh, emb_sim),
            table_avg: table_average(fh, bow_sim, emb_sim),
        }
    }
}

/// A backend that turns texts into fixed-length vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ProviderFailure>;
}

/// Shareable embedding handle: retries transient failures and caches vectors
/// by exact text for the lifetime of the handle.
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    retry: RetryPolicy,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
    dim: Mutex<Option<usize>>,
    upstream_calls: AtomicUsize,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Embedder {
            provider,
            retry: RetryPolicy::default(),
            cache: Mutex::new(HashMap::new()),
            dim: Mutex::new(None),
            upstream_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    /// Number of requests that reached the provider (cache misses, retries included).
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_many(&[text])?.remove(0))
    }

    /// Embeds all texts, sending only uncached ones upstream in one batch.
    pub fn embed_many(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let missing: Vec<&str> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .collect()
        };

        if !missing.is_empty() {
            let vectors = self.retry.run(|| {
                self.upstream_calls.fetch_add(1, Ordering::Relaxed);
                self.provider.embed(&missing)
            })?;
            if vectors.len() != missing.len() {
                return Err(Error::ProviderUnavailable(format!(
                    "{} returned {} vectors for {} inputs",
                    self.provider.id(),
                    vectors.len(),
                    missing.len()
                )));
            }
            let mut dim = self.dim.lock().unwrap();
            for v in &vectors {
                let expected = *dim.get_or_insert(v.len());
                if v.len() != expected || expected == 0 {
                    return Err(Error::DimensionMismatch {
                        left: expected,
                        right: v.len(),
                    });
                }
            }
            drop(dim);
            let mut cache = self.cache.lock().unwrap();
            for (text, v) in missing.iter().zip(vectors) {
                cache.insert((*text).to_owned(), EmbeddingVector::new(v));
            }
        }

        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}

pub fn embed_text(text: &str, embedder: &Embedder) -> Result<EmbeddingVector> {
    embedder.embed(text)
}

/// Offline providers for tests, benchmarks and dry runs.
pub mod stub {
    use super::*;

    /// Maps every text to the same vector.
    pub struct ConstantEmbedder(pub Vec<f64>);

    impl EmbeddingProvider for ConstantEmbedder {
        fn id(&self) -> &str {
            "constant"
        }

        fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ProviderFailure> {
            Ok(texts.iter().map(|_| self.0.clone()).collect())
        }
    }

    /// Signed feature hashing of lowercased words and character trigrams.
    /// Deterministic, and non-zero for any non-empty text.
    pub struct HashingEmbedder {
        pub dim: usize,
    }

    impl Default for HashingEmbedder {
        fn default() -> Self {
            HashingEmbedder { dim: 256 }
        }
    }

    impl HashingEmbedder {
        pub fn vector(&self, text: &str) -> Vec<f64> {
            let mut v = vec![0.0; self.dim];
            let mut add = |feature: &str, weight: f64| {
                let h = crate::stable_hash(feature.as_bytes());
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[(h % self.dim as u64) as usize] += sign * weight;
            };
            let lower = text.to_lowercase();
            for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                add(word, 1.0);
            }
            let chars: Vec<char> = format!(" {} ", lower.trim()).chars().collect();
            for tri in chars.windows(3) {
                add(&tri.iter().collect::<String>(), 0.5);
            }
            v
        }
    }

    impl EmbeddingProvider for HashingEmbedder {
        fn id(&self) -> &str {
            "hashing"
        }

        fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ProviderFailure> {
            Ok(texts.iter().map(|t| self.vector(t)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::stub::*;
    use super::*;

    fn bow(pairs: &[(&str, u32)]) -> BowVector {
        pairs.iter().map(|&(t, n)| (t, n)).collect()
    }

    #[test]
    fn bow_examples() {
        assert_eq!(bow_vector("Sol sol MAR"), bow(&[("sol", 2), ("mar", 1)]));
        assert_eq!(bow_vector("¡Hola!"), bow(&[("hola", 1)]));
        assert!(bow_vector("y o").is_empty());
        assert_eq!(bow_vector("año 2022, ÁRBOL"), bow(&[("año", 1), ("2022", 1), ("árbol", 1)]));
    }

    #[test]
    fn cosine_examples() {
        let a = bow(&[("a", 1), ("b", 1)]);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.cosine(&bow(&[("c", 3)])), 0.0);
        assert!((a.cosine(&bow(&[("a", 1), ("c", 1)])) - 0.5).abs() < 1e-12);
        assert_eq!(a.cosine(&BowVector::default()), 0.0);

        assert!((cosine_dense(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_dense(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_dense(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_dense(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn score_examples() {
        assert!((combined_score(61.05, 0.8711) - 74.08).abs() < 1e-9);
        assert_eq!(combined_score(0.0, 0.0), 0.0);
        assert_eq!(combined_score(100.0, 1.0), 100.0);
        assert!((table_average(61.05, 0.5293, 0.8711) - 67.03).abs() <= 0.01);
        assert!((table_average(64.31, 0.5478, 0.8804) - 69.04).abs() <= 0.01);
        assert_eq!(table_average(0.0, 0.0, 0.0), 0.0);

        let r = MetricReport::new(61.05, 0.5293, 0.8711);
        assert_eq!(r.combined, combined_score(61.05, 0.8711));
        assert_eq!(r.table_avg, table_average(61.05, 0.5293, 0.8711));
    }

    #[test]
    fn stub_embedder_contract() {
        let e = Embedder::new(Arc::new(ConstantEmbedder(vec![1.0, 0.0, 0.0])));
        assert_eq!(embed_text("cualquier texto", &e).unwrap().values(), [1.0, 0.0, 0.0]);
        assert!(matches!(embed_text("", &e), Err(Error::EmptyText)));
        assert!(matches!(embed_text("  ", &e), Err(Error::EmptyText)));
    }

    #[test]
    fn cache_bounds_upstream_calls() {
        let e = Embedder::new(Arc::new(HashingEmbedder::default()));
        let a = e.embed("la casa verde").unwrap();
        let b = e.embed("la casa verde").unwrap();
        assert_eq!(a, b);
        assert_eq!(e.upstream_calls(), 1);
        e.embed_many(&["la casa verde", "otro", "otro"]).unwrap();
        assert_eq!(e.upstream_calls(), 2);
    }

    #[test]
    fn hashing_embedder_is_nonzero_and_fixed_dim() {
        let h = HashingEmbedder { dim: 32 };
        for text in ["a", "¿?", "El sol sale."] {
            let v = h.vector(text);
            assert_eq!(v.len(), 32);
            assert!(v.iter().any(|x| *x != 0.0), "{text:?}");
        }
    }

    struct Flaky {
        failures: AtomicUsize,
    }

    impl EmbeddingProvider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }

        fn embed(&self, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, ProviderFailure> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(ProviderFailure::transient("503"));
            }
            Ok(texts.iter().map(|_| vec![1.0]).collect())
        }
    }

    #[test]
    fn embedder_retries_then_gives_up() {
        let ok = Embedder::new(Arc::new(Flaky {
            failures: AtomicUsize::new(2),
        }))
        .with_retry(RetryPolicy::immediate(3));
        assert!(ok.embed("x").is_ok());
        assert_eq!(ok.upstream_calls(), 3);

        let down = Embedder::new(Arc::new(Flaky {
            failures: AtomicUsize::new(100),
        }))
        .with_retry(RetryPolicy::immediate(3));
        assert!(matches!(down.embed("x"), Err(Error::ProviderUnavailable(_))));
        assert_eq!(down.upstream_calls(), 4);
    }
}
