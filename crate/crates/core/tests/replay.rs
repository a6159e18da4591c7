//! Seeded draws must replay identically across releases.

use apec_core::retrieval::{derive_seed, random_k, DemoPair};

fn pairs() -> Vec<DemoPair> {
    (0..20)
        .map(|i| DemoPair { id: format!("p{i:02}"), source: format!("fuente {i}"), adaptation: format!("adaptación {i}") })
        .collect()
}

fn ids(seed: u64) -> Vec<String> {
    random_k(&pairs(), 5, seed).unwrap().into_iter().map(|d| d.doc_id).collect()
}

#[test]
fn random_demonstrations_replay() {
    assert_eq!(ids(0), GOLDEN_0);
    assert_eq!(ids(42), GOLDEN_42);
    assert_eq!(ids(7), ids(7));
}

#[test]
fn per_document_seeds_replay() {
    assert_eq!(derive_seed(42, "doc-1"), GOLDEN_SEED);
    assert_ne!(derive_seed(42, "doc-1"), derive_seed(42, "doc-2"));
}

const GOLDEN_0: [&str; 5] = ["p14", "p00", "p03", "p12", "p17"];
const GOLDEN_42: [&str; 5] = ["p19", "p09", "p13", "p08", "p16"];
const GOLDEN_SEED: u64 = 4815726426097224369;
