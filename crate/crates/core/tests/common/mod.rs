//! Shared fixtures and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use fecund_core::corpus_model::{CodeInstance, Document};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

pub const SRC: &str = "ai";

/// Random corpus of `n` documents with Zipf-distributed code ids.
pub fn zipf_docs(seed: u64, n: usize, vocabulary: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(vocabulary as f64, 1.1).unwrap();
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=12);
            let codes: Vec<u32> = (0..k).map(|_| zipf.sample(&mut rng) as u32).collect();
            Document::new(format!("d{i:03}"), rng.random_range(100..4000)).unwrap().with_code_ids(SRC, codes)
        })
        .collect()
}

/// Documents built from `(length, code ids)` pairs.
pub fn docs_from(spec: &[(usize, Vec<u32>)]) -> Vec<Document> {
    spec.iter()
        .enumerate()
        .map(|(i, (len, codes))| Document::new(format!("d{i:03}"), *len).unwrap().with_code_ids(SRC, codes.iter().copied()))
        .collect()
}

pub fn code_ids(doc: &Document, source: &str) -> Vec<u32> {
    doc.instances(source).unwrap_or_default().iter().map(|c| c.code.0).collect()
}

pub fn distinct<'a>(docs: impl IntoIterator<Item = &'a Document>, source: &str) -> usize {
    docs.into_iter().flat_map(|d| code_ids(d, source)).collect::<BTreeSet<_>>().len()
}

/// Σ g(count) over codes pooled across `docs`.
pub fn brute_objective(docs: &[&Document], g: fn(f64) -> f64) -> f64 {
    let mut counts: HashMap<u32, u64> = HashMap::new();
    for d in docs {
        for c in code_ids(d, SRC) {
            *counts.entry(c).or_default() += 1;
        }
    }
    counts.values().map(|&m| g(m as f64)).sum()
}

/// Best objective over every subset whose total length is below `budget`.
pub fn brute_best(docs: &[Document], budget: u64, g: fn(f64) -> f64) -> f64 {
    let n = docs.len();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let subset: Vec<&Document> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &docs[i]).collect();
        let len: u64 = subset.iter().map(|d| d.text_length as u64).sum();
        if len < budget {
            best = best.max(brute_objective(&subset, g));
        }
    }
    best
}

pub fn positioned(id: &str, len: usize, source: &str, codes: &[(u32, f64)]) -> Document {
    Document::new(id, len).unwrap().with_codes(source, codes.iter().map(|&(c, p)| CodeInstance::at(fecund_core::corpus_model::CodeId(c), p)))
}

/// Reference tallies for the three code-counting regimes.
pub fn reference_unique(order: &[&Document]) -> Vec<u64> {
    let mut seen = BTreeSet::new();
    order
        .iter()
        .map(|d| {
            seen.extend(code_ids(d, SRC));
            seen.len() as u64
        })
        .collect()
}

pub fn reference_retrospective(order: &[&Document], threshold: u64) -> Vec<u64> {
    let mut total: HashMap<u32, u64> = HashMap::new();
    for d in order {
        for c in code_ids(d, SRC) {
            *total.entry(c).or_default() += 1;
        }
    }
    let mut seen = BTreeSet::new();
    order
        .iter()
        .map(|d| {
            seen.extend(code_ids(d, SRC).into_iter().filter(|c| total[c] >= threshold));
            seen.len() as u64
        })
        .collect()
}

pub fn reference_iterative(order: &[&Document], threshold: u64) -> Vec<u64> {
    let mut running: HashMap<u32, u64> = HashMap::new();
    order
        .iter()
        .map(|d| {
            for c in code_ids(d, SRC) {
                *running.entry(c).or_default() += 1;
            }
            running.values().filter(|&&m| m >= threshold).count() as u64
        })
        .collect()
}
