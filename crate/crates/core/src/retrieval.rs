//! Few-shot demonstration selection over (source, adaptation) training pairs.
//!
//! Okapi BM25 with a floor for negative idf values:
//!
//! ```text
//! idf(t)   = ln((N - n(t) + 0.5) / (n(t) + 0.5))      replaced by ε·mean(positive idf) when < 0
//! s(q, d)  = Σ_{t ∈ q} idf(t) · f(t,d)·(k1 + 1) / (f(t,d) + k1·(1 - b + b·|d|/avgdl))
//! ```
//!
//! Documents and queries are split on whitespace, lowercased, and tokens
//! shorter than `min_token_len` characters are dropped. Query tokens are summed
//! with multiplicity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::Embedder;

pub const INDEX_FORMAT: &str = "apec-bm25";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub epsilon: f64,
    pub min_token_len: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
            min_token_len: 4,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k1 >= 0.0
            && (0.0..=1.0).contains(&self.b)
            && self.epsilon >= 0.0
            && self.min_token_len >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid BM25 parameters {self:?}")))
        }
    }

    pub fn tokens<'a>(&self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        let min = self.min_token_len;
        text.split_whitespace()
            .filter(move |t| t.chars().count() >= min)
            .map(str::to_lowercase)
    }
}

/// One training pair that can be offered to the model as an example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub id: String,
    pub source: String,
    pub adaptation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub doc_id: String,
    pub source: String,
    pub adaptation: String,
    pub retrieval_score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    format: String,
    version: u32,
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_token_counts: Vec<usize>,
    avgdl: f64,
    /// term -> [(document position, term frequency)], positions ascending
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    #[serde(skip)]
    idf: BTreeMap<String, f64>,
}

impl Bm25Index {
    pub fn build(pairs: &[DemoPair], params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_token_counts = Vec::with_capacity(pairs.len());
        for (pos, pair) in pairs.iter().enumerate() {
            let mut freqs: BTreeMap<String, u32> = BTreeMap::new();
            let mut len = 0;
            for token in params.tokens(&pair.source) {
                *freqs.entry(token).or_insert(0) += 1;
                len += 1;
            }
            doc_token_counts.push(len);
            for (term, f) in freqs {
                postings.entry(term).or_default().push((pos, f));
            }
        }
        let avgdl = doc_token_counts.iter().sum::<usize>() as f64 / pairs.len() as f64;
        let mut index = Bm25Index {
            format: INDEX_FORMAT.to_owned(),
            version: INDEX_VERSION,
            params,
            doc_ids: pairs.iter().map(|p| p.id.clone()).collect(),
            doc_token_counts,
            avgdl,
            postings,
            idf: BTreeMap::new(),
        };
        index.compute_idf();
        Ok(index)
    }

    fn compute_idf(&mut self) {
        let n = self.doc_ids.len() as f64;
        let raw: Vec<(&String, f64)> = self
            .postings
            .iter()
            .map(|(t, p)| {
                let df = p.len() as f64;
                (t, ((n - df + 0.5) / (df + 0.5)).ln())
            })
            .collect();
        let positive: Vec<f64> = raw.iter().map(|&(_, v)| v).filter(|&v| v > 0.0).collect();
        let floor = if positive.is_empty() {
            0.0
        } else {
            self.params.epsilon * positive.iter().sum::<f64>() / positive.len() as f64
        };
        self.idf = raw
            .into_iter()
            .map(|(t, v)| (t.clone(), if v < 0.0 { floor } else { v }))
            .collect();
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_token_counts(&self) -> &[usize] {
        &self.doc_token_counts
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Postings of `term` as (document position, frequency).
    pub fn postings(&self, term: &str) -> &[(usize, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(0.0)
    }

    /// BM25 score of every indexed document against `query`, by position.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let Bm25Params { k1, b, .. } = self.params;
        let mut scores = vec![0.0; self.doc_ids.len()];
        for term in self.params.tokens(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(pos, f) in postings {
                let f = f as f64;
                let rel_len = if self.avgdl > 0.0 {
                    self.doc_token_counts[pos] as f64 / self.avgdl
                } else {
                    0.0
                };
                scores[pos] += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * rel_len));
            }
        }
        scores
    }

    fn check_store(&self, pairs: &[DemoPair]) -> Result<()> {
        if pairs.len() != self.doc_ids.len() {
            return Err(Error::IndexMismatch(format!(
                "index has {} documents, store has {}",
                self.doc_ids.len(),
                pairs.len()
            )));
        }
        if let Some((id, pair)) = self.doc_ids.iter().zip(pairs).find(|(id, p)| **id != p.id) {
            return Err(Error::IndexMismatch(format!(
                "index expects {id:?} where store has {:?}",
                pair.id
            )));
        }
        Ok(())
    }

    /// The `k` best-scoring pairs for `query`.
    ///
    /// `pairs` must be the store the index was built from. Pairs failing the
    /// optional length-ratio range, or whose id equals `exclude`, are removed
    /// before ranking. Ties go to the smaller document id.
    pub fn top_k(
        &self,
        pairs: &[DemoPair],
        query: &str,
        k: usize,
        ratio: Option<(f64, f64)>,
        exclude: Option<&str>,
    ) -> Result<Vec<Demonstration>> {
        self.check_store(pairs)?;
        let scores = self.scores(query);
        let candidates = pairs
            .iter()
            .zip(scores)
            .filter(|(p, _)| exclude != Some(p.id.as_str()))
            .filter(|(p, _)| match ratio {
                Some((lo, hi)) => {
                    length_ratio_admissible(&p.source, &p.adaptation, lo, hi).unwrap_or(false)
                }
                None => true,
            });
        Ok(rank_top_k(candidates, k))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut index: Bm25Index = serde_json::from_slice(&fs::read(path)?)?;
        if index.format != INDEX_FORMAT || index.version != INDEX_VERSION {
            return Err(Error::IndexVersion(index.version));
        }
        index.params.validate()?;
        let n = index.doc_ids.len();
        let sound = n > 0
            && index.doc_token_counts.len() == n
            && index
                .postings
                .values()
                .flatten()
                .all(|&(pos, f)| pos < n && f >= 1);
        if !sound {
            return Err(Error::IndexMismatch(format!("{} is corrupt", path.display())));
        }
        index.compute_idf();
        Ok(index)
    }
}

/// An index paired with the store it was built from.
#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    index: Bm25Index,
    pairs: Vec<DemoPair>,
}

impl Bm25Retriever {
    pub fn new(index: Bm25Index, pairs: Vec<DemoPair>) -> Result<Self> {
        index.check_store(&pairs)?;
        Ok(Bm25Retriever { index, pairs })
    }

    pub fn build(pairs: Vec<DemoPair>, params: Bm25Params) -> Result<Self> {
        let index = Bm25Index::build(&pairs, params)?;
        Ok(Bm25Retriever { index, pairs })
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn pairs(&self) -> &[DemoPair] {
        &self.pairs
    }

    pub fn top_k(
        &self,
        query: &str,
        k: usize,
        ratio: Option<(f64, f64)>,
        exclude: Option<&str>,
    ) -> Vec<Demonstration> {
        self.index
            .top_k(&self.pairs, query, k, ratio, exclude)
            .expect("store checked at construction")
    }
}

/// Free-function form of [`Bm25Index::top_k`].
pub fn bm25_top_k(
    index: &Bm25Index,
    pairs: &[DemoPair],
    query: &str,
    k: usize,
    ratio: Option<(f64, f64)>,
) -> Result<Vec<Demonstration>> {
    index.top_k(pairs, query, k, ratio, None)
}

fn rank_top_k<'a>(candidates: impl Iterator<Item = (&'a DemoPair, f64)>, k: usize) -> Vec<Demonstration> {
    let mut ranked: Vec<(&DemoPair, f64)> = candidates.collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    ranked
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (p, score))| Demonstration {
            doc_id: p.id.clone(),
            source: p.source.clone(),
            adaptation: p.adaptation.clone(),
            retrieval_score: score,
            rank: i + 1,
        })
        .collect()
}

/// Whether `lo <= |adaptation| / |source| <= hi`, lengths in whitespace tokens.
pub fn length_ratio_admissible(source: &str, adaptation: &str, lo: f64, hi: f64) -> Result<bool> {
    let src = source.split_whitespace().count();
    if src == 0 {
        return Err(Error::EmptySource);
    }
    let ratio = adaptation.split_whitespace().count() as f64 / src as f64;
    Ok(lo <= ratio && ratio <= hi)
}

/// Ranks pairs by embedding cosine between `query` and each source.
pub fn embedding_top_k(
    pairs: &[DemoPair],
    query: &str,
    k: usize,
    embedder: &Embedder,
    exclude: Option<&str>,
) -> Result<Vec<Demonstration>> {
    let pool: Vec<&DemoPair> = pairs.iter().filter(|p| exclude != Some(p.id.as_str())).collect();
    let q = embedder.embed(query)?;
    let sources: Vec<&str> = pool.iter().map(|p| p.source.as_str()).collect();
    let vectors = embedder.embed_many(&sources)?;
    let mut scored = Vec::with_capacity(pool.len());
    for (p, v) in pool.into_iter().zip(&vectors) {
        scored.push((p, q.cosine(v)?));
    }
    Ok(rank_top_k(scored.into_iter(), k))
}

/// `k` pairs drawn uniformly without replacement (partial Fisher-Yates over
/// a ChaCha8 stream seeded with `seed`), in draw order.
pub fn random_k(pairs: &[DemoPair], k: usize, seed: u64) -> Result<Vec<Demonstration>> {
    if k > pairs.len() {
        return Err(Error::KTooLarge {
            k,
            available: pairs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in 0..k {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    Ok(order[..k]
        .iter()
        .enumerate()
        .map(|(i, &pos)| Demonstration {
            doc_id: pairs[pos].id.clone(),
            source: pairs[pos].source.clone(),
            adaptation: pairs[pos].adaptation.clone(),
            retrieval_score: 0.0,
            rank: i + 1,
        })
        .collect())
}

/// Per-document seed so random demonstrations differ across documents but
/// replay identically for a fixed run seed.
pub fn derive_seed(run_seed: u64, doc_id: &str) -> u64 {
    run_seed ^ crate::stable_hash(doc_id.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, source: &str, adaptation: &str) -> DemoPair {
        DemoPair {
            id: id.into(),
            source: source.into(),
            adaptation: adaptation.into(),
        }
    }

    fn words(n: usize) -> String {
        vec!["palabra"; n].join(" ")
    }

    #[test]
    fn short_tokens_are_not_indexed() {
        let idx = Bm25Index::build(&[pair("a", "la casa verde es", "")], Bm25Params::default()).unwrap();
        assert_eq!(idx.vocabulary().collect::<Vec<_>>(), ["casa", "verde"]);
        assert_eq!(idx.doc_token_counts(), [2]);
    }

    #[test]
    fn avgdl_is_mean_kept_length() {
        let idx = Bm25Index::build(
            &[
                pair("a", "casa verde roja", ""),
                pair("b", "perro gato pato loro mono y", ""),
            ],
            Bm25Params::default(),
        )
        .unwrap();
        assert_eq!(idx.avgdl(), 4.0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            Bm25Index::build(&[], Bm25Params::default()),
            Err(Error::EmptyCorpus)
        ));
        let bad = Bm25Params {
            b: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            Bm25Index::build(&[pair("a", "x", "")], bad),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sole_document_ranks_first() {
        let pairs = [pair("a", "natación", "nadar")];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let top = idx.top_k(&pairs, "natación", 5, None, None).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!((top[0].doc_id.as_str(), top[0].rank), ("a", 1));
    }

    #[test]
    fn disjoint_document_scores_zero() {
        let pairs = [
            pair("a", "piscina municipal abierta", ""),
            pair("b", "concierto familiar domingo", ""),
            pair("c", "piscina olímpica cerrada", ""),
        ];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let s = idx.scores("piscina abierta");
        assert_eq!(s[1], 0.0);
        assert!(s[0] > s[2] && s[2] > 0.0);
    }

    #[test]
    fn negative_idf_is_floored() {
        // "común" appears in 3 of 4 documents: raw idf ln(1.5/3.5) < 0
        let pairs = [
            pair("a", "común único", ""),
            pair("b", "común", ""),
            pair("c", "común", ""),
            pair("d", "otro", ""),
        ];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let pos = (3.5f64 / 1.5).ln();
        assert!((idx.idf("único") - pos).abs() < 1e-12);
        assert!((idx.idf("común") - 0.25 * pos).abs() < 1e-12);
    }

    #[test]
    fn ratio_filter_examples() {
        let src = words(100);
        assert!(length_ratio_admissible(&src, &words(90), 0.8, 1.2).unwrap());
        assert!(!length_ratio_admissible(&src, &words(40), 0.8, 1.2).unwrap());
        assert!(length_ratio_admissible(&src, &words(80), 0.8, 1.2).unwrap());
        assert!(length_ratio_admissible(&src, &words(120), 0.8, 1.2).unwrap());
        assert!(matches!(
            length_ratio_admissible("  ", "x", 0.8, 1.2),
            Err(Error::EmptySource)
        ));
    }

    #[test]
    fn ratio_filter_excludes_before_ranking() {
        let pairs = [
            pair("a", "piscina piscina piscina", "una"),
            pair("b", "piscina", "una"),
        ];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let all = idx.top_k(&pairs, "piscina", 5, None, None).unwrap();
        assert_eq!(all.len(), 2);
        let filtered = idx.top_k(&pairs, "piscina", 5, Some((0.8, 1.2)), None).unwrap();
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered[0].doc_id, "b");
        let excluded = idx.top_k(&pairs, "piscina", 5, None, Some("a")).unwrap();
        assert_eq!(excluded.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn store_must_match_index() {
        let pairs = [pair("a", "piscina", "")];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let other = [pair("z", "piscina", "")];
        assert!(matches!(
            idx.top_k(&other, "piscina", 1, None, None),
            Err(Error::IndexMismatch(_))
        ));
    }

    #[test]
    fn persisted_index_round_trips() {
        let pairs = [
            pair("a", "piscina municipal abierta", ""),
            pair("b", "concierto familiar domingo piscina", ""),
        ];
        let idx = Bm25Index::build(&pairs, Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let loaded = Bm25Index::load(&path).unwrap();
        assert_eq!(loaded, idx);
        assert_eq!(loaded.scores("piscina domingo"), idx.scores("piscina domingo"));

        let mut raw: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        raw["version"] = 99.into();
        fs::write(&path, raw.to_string()).unwrap();
        assert!(matches!(Bm25Index::load(&path), Err(Error::IndexVersion(99))));
    }

    #[test]
    fn random_k_contract() {
        let pairs: Vec<_> = (0..10).map(|i| pair(&format!("d{i}"), "x", "y")).collect();
        let all = random_k(&pairs, 10, 7).unwrap();
        let mut ids: Vec<_> = all.iter().map(|d| d.doc_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, pairs.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
        assert_eq!(random_k(&pairs, 3, 42).unwrap(), random_k(&pairs, 3, 42).unwrap());
        assert!(matches!(
            random_k(&pairs, 11, 0),
            Err(Error::KTooLarge { k: 11, available: 10 })
        ));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
    }
}
