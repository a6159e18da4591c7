//! Spanish Plain Language and Easy Read adaptation with metric-gated
//! automatic post-editing cycles.
//!
//! The pipeline: an initial LLM adaptation (zero-shot or with retrieved
//! demonstrations), then a fixed number of post-editing cycles in which the
//! model critiques and rewrites the current adaptation. A rewrite is kept only
//! if it raises the average of the Fernández Huerta readability index and the
//! embedding similarity to the source. Several refined streams can then be
//! ensembled per document, and outputs evaluated against references.

pub mod apec;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod generation;
pub mod http;
pub mod retrieval;
pub mod retry;
pub mod similarity;
pub mod tables;
pub mod textstats;

pub use error::{Error, Result};

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
