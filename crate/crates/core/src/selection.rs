//! Budgeted corpus selection.
//!
//! The objective for a corpus `A` is `Σ_i g(Σ_{a∈A} f_{i,a})`: for every code,
//! a concave value function `g` of the number of copies of that code in the
//! corpus. Feasible corpora satisfy `Σ_{a∈A} len(a) < L` (strict).
//!
//! Selectors are registered by name:
//!
//! * `lazy-greedy`: cost-benefit greedy with a priority queue of stale upper
//!   bounds, re-evaluated on pop.
//! * `naive-greedy`: the same rule, re-scanning every candidate each round.
//! * `exact`: exhaustive enumeration for up to [`EXACT_MAX_CANDIDATES`] candidates.
//!
//! Greedy ties are broken toward the shorter document, then the
//! lexicographically smaller id. Greedy stops when nothing fits or the best
//! marginal gain is at most [`MIN_GAIN`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_model::{mean_length, CodeId, Document};
use crate::registry::{Named, Registry, UnknownName};

pub const MIN_GAIN: f64 = 1e-12;
pub const EXACT_MAX_CANDIDATES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("exact selection supports at most {max} candidates, got {got}")]
    TooManyCandidates { got: usize, max: usize },
    #[error("cannot sample {requested} documents from {available} candidates")]
    TooManyRequested { requested: usize, available: usize },
    #[error("budget must be at least 1 character")]
    ZeroBudget,
    #[error(transparent)]
    Unknown(#[from] UnknownName),
}

/// Concave value of `m` copies of one code.
pub trait ValueFunction: Named + Send + Sync + fmt::Debug {
    fn value(&self, copies: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SqrtValue;

impl Named for SqrtValue {
    fn name(&self) -> &str {
        "sqrt"
    }
}

impl ValueFunction for SqrtValue {
    fn value(&self, copies: f64) -> f64 {
        copies.sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Log1pValue;

impl Named for Log1pValue {
    fn name(&self) -> &str {
        "log1p"
    }
}

impl ValueFunction for Log1pValue {
    fn value(&self, copies: f64) -> f64 {
        copies.ln_1p()
    }
}

/// Counts a code once no matter how many copies are present.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniqueValue;

impl Named for UniqueValue {
    fn name(&self) -> &str {
        "unique"
    }
}

impl ValueFunction for UniqueValue {
    fn value(&self, copies: f64) -> f64 {
        copies.min(1.0)
    }
}

pub fn value_functions() -> Registry<dyn ValueFunction> {
    let mut r: Registry<dyn ValueFunction> = Registry::new("value function");
    r.register(Arc::new(SqrtValue)).register(Arc::new(Log1pValue)).register(Arc::new(UniqueValue));
    r
}

pub fn value_function(name: &str) -> Result<Arc<dyn ValueFunction>, UnknownName> {
    value_functions().get(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetDerivation {
    Explicit,
    /// `n_docs` times the mean document length of the candidate pool.
    MeanDocuments { n_docs: f64, mean_length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionBudget {
    /// A corpus is feasible iff its total length is strictly below this.
    pub max_chars: u64,
    pub derivation: BudgetDerivation,
}

impl SelectionBudget {
    pub fn explicit(max_chars: u64) -> Result<Self, SelectionError> {
        if max_chars == 0 {
            return Err(SelectionError::ZeroBudget);
        }
        Ok(Self { max_chars, derivation: BudgetDerivation::Explicit })
    }

    /// Budget admitting any corpus of at most `n_docs` average documents:
    /// `L = floor(n_docs * mean) + 1`, so `total < L` iff `total <= n_docs * mean`.
    pub fn mean_documents<'a>(candidates: impl IntoIterator<Item = &'a Document>, n_docs: f64) -> Self {
        let mean = mean_length(candidates);
        let max_chars = (n_docs * mean).floor().max(0.0) as u64 + 1;
        Self { max_chars, derivation: BudgetDerivation::MeanDocuments { n_docs, mean_length: mean } }
    }

    pub fn admits(&self, total_chars: u64) -> bool {
        total_chars < self.max_chars
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Marginal gain per character.
    CostBenefit,
    /// Marginal gain, ignoring length.
    PlainGain,
    /// Runs both passes and keeps the higher objective, preferring
    /// cost-benefit on ties. Cost-benefit alone can fall below half the
    /// optimum when a dense short document crowds out a long valuable one.
    #[default]
    BestOfBoth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSelection {
    /// In pick order for greedy selectors, sorted for `exact`, sample order for random.
    pub selected_ids: Vec<String>,
    pub objective_value: f64,
    pub total_chars: u64,
    pub budget: Option<SelectionBudget>,
    pub value_function: String,
    pub selector: String,
    /// Marginal objective gain contributed by each pick, aligned with `selected_ids`.
    pub step_gains: Vec<f64>,
}

impl CorpusSelection {
    pub fn contains(&self, id: &str) -> bool {
        self.selected_ids.iter().any(|s| s == id)
    }
}

/// Objective value of `selected` computed from scratch.
pub fn objective<'a>(
    selected: impl IntoIterator<Item = &'a Document>,
    value_function: &dyn ValueFunction,
    coder_source: &str,
) -> f64 {
    let mut counts: BTreeMap<CodeId, u64> = BTreeMap::new();
    for doc in selected {
        for inst in doc.instances(coder_source).unwrap_or_default() {
            *counts.entry(inst.code).or_insert(0) += 1;
        }
    }
    counts.values().map(|&m| value_function.value(m as f64)).sum()
}

pub struct SelectionRequest<'a> {
    pub candidates: Vec<&'a Document>,
    pub budget: SelectionBudget,
    pub value_function: Arc<dyn ValueFunction>,
    pub coder_source: String,
    pub ranking: Ranking,
}

impl<'a> SelectionRequest<'a> {
    pub fn new(
        candidates: impl IntoIterator<Item = &'a Document>,
        budget: SelectionBudget,
        value_function: Arc<dyn ValueFunction>,
        coder_source: &str,
    ) -> Self {
        Self {
            candidates: candidates.into_iter().collect(),
            budget,
            value_function,
            coder_source: coder_source.to_string(),
            ranking: Ranking::default(),
        }
    }

    pub fn with_ranking(mut self, ranking: Ranking) -> Self {
        self.ranking = ranking;
        self
    }
}

pub trait Selector: Named + Send + Sync {
    fn select(&self, request: &SelectionRequest<'_>) -> Result<CorpusSelection, SelectionError>;
}

pub fn selectors() -> Registry<dyn Selector> {
    let mut r: Registry<dyn Selector> = Registry::new("selector");
    r.register(Arc::new(LazyGreedy)).register(Arc::new(NaiveGreedy)).register(Arc::new(ExactSelector));
    r
}

/// Candidates with codes mapped to dense indices.
struct Problem<'a> {
    docs: Vec<&'a Document>,
    lens: Vec<u64>,
    /// Per candidate: (dense code index, copies in this document).
    codes: Vec<Vec<(usize, u32)>>,
    /// Rank of each candidate's id in lexicographic order.
    id_rank: Vec<usize>,
    n_codes: usize,
}

impl<'a> Problem<'a> {
    fn new(docs: &[&'a Document], coder_source: &str) -> Self {
        let mut dense: HashMap<CodeId, usize> = HashMap::new();
        let mut codes = Vec::with_capacity(docs.len());
        for doc in docs {
            let mut per: BTreeMap<usize, u32> = BTreeMap::new();
            for inst in doc.instances(coder_source).unwrap_or_default() {
                let next = dense.len();
                let idx = *dense.entry(inst.code).or_insert(next);
                *per.entry(idx).or_insert(0) += 1;
            }
            codes.push(per.into_iter().collect());
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by(|&a, &b| docs[a].id.cmp(&docs[b].id));
        let mut id_rank = vec![0; docs.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank;
        }
        Self {
            lens: docs.iter().map(|d| d.text_length as u64).collect(),
            docs: docs.to_vec(),
            codes,
            id_rank,
            n_codes: dense.len(),
        }
    }

    fn gain(&self, cand: usize, counts: &[u32], g: &dyn ValueFunction) -> f64 {
        self.codes[cand]
            .iter()
            .map(|&(c, k)| {
                let have = counts[c] as f64;
                g.value(have + k as f64) - g.value(have)
            })
            .sum()
    }

    fn add(&self, cand: usize, counts: &mut [u32]) {
        for &(c, k) in &self.codes[cand] {
            counts[c] += k;
        }
    }

    fn score(&self, cand: usize, gain: f64, ranking: Ranking) -> f64 {
        match ranking {
            Ranking::CostBenefit | Ranking::BestOfBoth => gain / self.lens[cand] as f64,
            Ranking::PlainGain => gain,
        }
    }

    /// Greedy preference: higher score, then shorter, then smaller id.
    fn prefer(&self, a: (usize, f64), b: (usize, f64)) -> Ordering {
        a.1.total_cmp(&b.1)
            .then_with(|| self.lens[b.0].cmp(&self.lens[a.0]))
            .then_with(|| self.id_rank[b.0].cmp(&self.id_rank[a.0]))
    }
}

/// Resolves `BestOfBoth` into two single-ranking passes.
fn with_ranking_rule(
    request: &SelectionRequest<'_>,
    pass: impl Fn(Ranking) -> CorpusSelection,
) -> CorpusSelection {
    match request.ranking {
        Ranking::BestOfBoth => {
            let cb = pass(Ranking::CostBenefit);
            let pg = pass(Ranking::PlainGain);
            if pg.objective_value > cb.objective_value + MIN_GAIN {
                pg
            } else {
                cb
            }
        }
        r => pass(r),
    }
}

fn finish(
    request: &SelectionRequest<'_>,
    selector: &str,
    picked: Vec<&Document>,
    step_gains: Vec<f64>,
) -> CorpusSelection {
    CorpusSelection {
        selected_ids: picked.iter().map(|d| d.id.clone()).collect(),
        objective_value: objective(picked.iter().copied(), request.value_function.as_ref(), &request.coder_source),
        total_chars: picked.iter().map(|d| d.text_length as u64).sum(),
        budget: Some(request.budget.clone()),
        value_function: request.value_function.name().to_string(),
        selector: selector.to_string(),
        step_gains,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveGreedy;

impl Named for NaiveGreedy {
    fn name(&self) -> &str {
        "naive-greedy"
    }
}

impl Selector for NaiveGreedy {
    fn select(&self, request: &SelectionRequest<'_>) -> Result<CorpusSelection, SelectionError> {
        Ok(with_ranking_rule(request, |r| self.pass(request, r)))
    }
}

impl NaiveGreedy {
    fn pass(&self, request: &SelectionRequest<'_>, ranking: Ranking) -> CorpusSelection {
        let problem = Problem::new(&request.candidates, &request.coder_source);
        let g = request.value_function.as_ref();
        let mut counts = vec![0u32; problem.n_codes];
        let mut remaining: Vec<usize> = (0..problem.docs.len()).collect();
        let mut total = 0u64;
        let mut picked = Vec::new();
        let mut gains = Vec::new();

        loop {
            remaining.retain(|&c| request.budget.admits(total + problem.lens[c]));
            let mut best: Option<(usize, f64, f64)> = None;
            for &c in &remaining {
                let gain = problem.gain(c, &counts, g);
                if gain <= MIN_GAIN {
                    continue;
                }
                let score = problem.score(c, gain, ranking);
                let better = match best {
                    None => true,
                    Some((b, _, bs)) => problem.prefer((c, score), (b, bs)) == Ordering::Greater,
                };
                if better {
                    best = Some((c, gain, score));
                }
            }
            let Some((c, gain, _)) = best else { break };
            problem.add(c, &mut counts);
            total += problem.lens[c];
            picked.push(problem.docs[c]);
            gains.push(gain);
            remaining.retain(|&r| r != c);
        }
        finish(request, self.name(), picked, gains)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LazyGreedy;

impl Named for LazyGreedy {
    fn name(&self) -> &str {
        "lazy-greedy"
    }
}

struct HeapEntry<'p> {
    cand: usize,
    gain: f64,
    score: f64,
    /// Number of picks made when `gain` was computed.
    round: usize,
    problem: &'p Problem<'p>,
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.problem.prefer((self.cand, self.score), (other.cand, other.score))
    }
}

impl Selector for LazyGreedy {
    fn select(&self, request: &SelectionRequest<'_>) -> Result<CorpusSelection, SelectionError> {
        Ok(with_ranking_rule(request, |r| self.pass(request, r)))
    }
}

impl LazyGreedy {
    fn pass(&self, request: &SelectionRequest<'_>, ranking: Ranking) -> CorpusSelection {
        let problem = Problem::new(&request.candidates, &request.coder_source);
        let g = request.value_function.as_ref();
        let mut counts = vec![0u32; problem.n_codes];
        let mut heap = BinaryHeap::with_capacity(problem.docs.len());
        for c in 0..problem.docs.len() {
            if request.budget.admits(problem.lens[c]) {
                let gain = problem.gain(c, &counts, g);
                let score = problem.score(c, gain, ranking);
                heap.push(HeapEntry { cand: c, gain, score, round: 0, problem: &problem });
            }
        }

        let mut total = 0u64;
        let mut picked = Vec::new();
        let mut gains = Vec::new();
        while let Some(mut top) = heap.pop() {
            if !request.budget.admits(total + problem.lens[top.cand]) {
                continue;
            }
            if top.round != picked.len() {
                top.gain = problem.gain(top.cand, &counts, g);
                top.score = problem.score(top.cand, top.gain, ranking);
                top.round = picked.len();
                heap.push(top);
                continue;
            }
            // Gains never grow, so a fresh non-positive gain is final.
            if top.gain <= MIN_GAIN {
                continue;
            }
            problem.add(top.cand, &mut counts);
            total += problem.lens[top.cand];
            picked.push(problem.docs[top.cand]);
            gains.push(top.gain);
        }
        finish(request, self.name(), picked, gains)
    }
}

/// Exhaustive search. Ties go to the lexicographically smallest sorted id list.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSelector;

impl Named for ExactSelector {
    fn name(&self) -> &str {
        "exact"
    }
}

impl Selector for ExactSelector {
    fn select(&self, request: &SelectionRequest<'_>) -> Result<CorpusSelection, SelectionError> {
        let n = request.candidates.len();
        if n > EXACT_MAX_CANDIDATES {
            return Err(SelectionError::TooManyCandidates { got: n, max: EXACT_MAX_CANDIDATES });
        }
        let mut sorted = request.candidates.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let problem = Problem::new(&sorted, &request.coder_source);
        let g = request.value_function.as_ref();

        let value_of = |mask: u32| -> Option<f64> {
            let total: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| problem.lens[i]).sum();
            if !request.budget.admits(total) {
                return None;
            }
            let mut counts = vec![0u32; problem.n_codes];
            for i in (0..n).filter(|i| mask >> i & 1 == 1) {
                problem.add(i, &mut counts);
            }
            Some(counts.iter().map(|&m| g.value(m as f64)).sum())
        };

        let mut best_mask = 0u32;
        let mut best = 0.0;
        for mask in 1..(1u32 << n) {
            let Some(v) = value_of(mask) else { continue };
            if v > best + MIN_GAIN || ((v - best).abs() <= MIN_GAIN && lex_less(mask, best_mask, n)) {
                best = v;
                best_mask = mask;
            }
        }

        let mut counts = vec![0u32; problem.n_codes];
        let mut picked = Vec::new();
        let mut gains = Vec::new();
        for i in (0..n).filter(|i| best_mask >> i & 1 == 1) {
            gains.push(problem.gain(i, &counts, g));
            problem.add(i, &mut counts);
            picked.push(sorted[i]);
        }
        Ok(finish(request, self.name(), picked, gains))
    }
}

/// Lexicographic order of the id lists encoded by two masks over id-sorted candidates.
fn lex_less(a: u32, b: u32, n: usize) -> bool {
    let ids = |m: u32| (0..n).filter(move |i| m >> i & 1 == 1);
    let mut ia = ids(a);
    let mut ib = ids(b);
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => return false,
            (None, Some(_)) => return true,
            (Some(_), None) => return false,
            (Some(x), Some(y)) if x != y => return x < y,
            _ => {}
        }
    }
}

/// Uniform sample of `n_docs` candidates without replacement, scored with
/// `value_function` for reporting.
pub fn select_random(
    candidates: &[&Document],
    n_docs: usize,
    seed: u64,
    value_function: &dyn ValueFunction,
    coder_source: &str,
) -> Result<CorpusSelection, SelectionError> {
    if n_docs > candidates.len() {
        return Err(SelectionError::TooManyRequested { requested: n_docs, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<&Document> =
        rand::seq::index::sample(&mut rng, candidates.len(), n_docs).into_iter().map(|i| candidates[i]).collect();
    let mut counts: HashMap<CodeId, u64> = HashMap::new();
    let mut gains = Vec::with_capacity(picked.len());
    for d in &picked {
        let mut gain = 0.0;
        for inst in d.instances(coder_source).unwrap_or_default() {
            let have = counts.entry(inst.code).or_insert(0);
            gain += value_function.value(*have as f64 + 1.0) - value_function.value(*have as f64);
            *have += 1;
        }
        gains.push(gain);
    }
    Ok(CorpusSelection {
        selected_ids: picked.iter().map(|d| d.id.clone()).collect(),
        objective_value: objective(picked.iter().copied(), value_function, coder_source),
        total_chars: picked.iter().map(|d| d.text_length as u64).sum(),
        budget: None,
        value_function: value_function.name().to_string(),
        selector: "random".to_string(),
        step_gains: gains,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
    /// Selected by both arms; read once.
    Overlap,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
            Arm::Overlap => "overlap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "treatment" => Some(Arm::Treatment),
            "control" => Some(Arm::Control),
            "overlap" => Some(Arm::Overlap),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// 1-based reading position.
    pub position: usize,
    pub doc_id: String,
    pub arm: Arm,
}

/// A blinded reading order together with the sealed arm assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedOrder {
    pub entries: Vec<ManifestEntry>,
}

impl BlindedOrder {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn arm_of(&self, id: &str) -> Option<Arm> {
        self.entries.iter().find(|e| e.doc_id == id).map(|e| e.arm)
    }
}

/// Seeded uniform permutation of the union of both arms; documents in both
/// appear once, tagged [`Arm::Overlap`].
pub fn interleave_blinded(treatment: &CorpusSelection, control: &CorpusSelection, seed: u64) -> BlindedOrder {
    let control_set: HashSet<&str> = control.selected_ids.iter().map(String::as_str).collect();
    let treatment_set: HashSet<&str> = treatment.selected_ids.iter().map(String::as_str).collect();
    let mut union: Vec<(&str, Arm)> = Vec::new();
    let mut seen = HashSet::new();
    for id in &treatment.selected_ids {
        if seen.insert(id.as_str()) {
            let arm = if control_set.contains(id.as_str()) { Arm::Overlap } else { Arm::Treatment };
            union.push((id, arm));
        }
    }
    for id in &control.selected_ids {
        if !treatment_set.contains(id.as_str()) && seen.insert(id.as_str()) {
            union.push((id, Arm::Control));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    union.shuffle(&mut rng);
    BlindedOrder {
        entries: union
            .into_iter()
            .enumerate()
            .map(|(i, (id, arm))| ManifestEntry { position: i + 1, doc_id: id.to_string(), arm })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, len: usize, codes: &[u32]) -> Document {
        Document::new(id, len).unwrap().with_code_ids("ai", codes.iter().copied())
    }

    fn three() -> Vec<Document> {
        vec![doc("A", 10, &[0, 0]), doc("B", 10, &[1]), doc("C", 10, &[0])]
    }

    fn request<'a>(docs: &'a [Document], l: u64, vf: &str) -> SelectionRequest<'a> {
        SelectionRequest::new(docs, SelectionBudget::explicit(l).unwrap(), value_function(vf).unwrap(), "ai")
    }

    #[test]
    fn objective_examples() {
        let a = doc("A", 1, &[0, 0]);
        let b = doc("B", 1, &[1]);
        assert!((objective([&a], &SqrtValue, "ai") - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(objective(std::iter::empty(), &SqrtValue, "ai"), 0.0);
        assert_eq!(objective([&a, &b], &UniqueValue, "ai"), 2.0);
    }

    #[test]
    fn three_document_instance() {
        let docs = three();
        for name in ["lazy-greedy", "naive-greedy", "exact"] {
            let sel = selectors().get(name).unwrap().select(&request(&docs, 21, "sqrt")).unwrap();
            let mut ids = sel.selected_ids.clone();
            ids.sort();
            assert_eq!(ids, vec!["A", "B"], "{name}");
            assert!((sel.objective_value - (2f64.sqrt() + 1.0)).abs() < 1e-12);
            assert_eq!(sel.total_chars, 20);
        }
    }

    #[test]
    fn nothing_fits() {
        let docs = vec![doc("A", 2, &[0]), doc("B", 5, &[1])];
        for name in ["lazy-greedy", "naive-greedy", "exact"] {
            let sel = selectors().get(name).unwrap().select(&request(&docs, 1, "sqrt")).unwrap();
            assert!(sel.selected_ids.is_empty());
            assert_eq!(sel.objective_value, 0.0);
        }
    }

    #[test]
    fn budget_is_strict() {
        let docs = vec![doc("A", 10, &[0])];
        let sel = LazyGreedy.select(&request(&docs, 10, "sqrt")).unwrap();
        assert!(sel.selected_ids.is_empty());
        let sel = LazyGreedy.select(&request(&docs, 11, "sqrt")).unwrap();
        assert_eq!(sel.selected_ids, vec!["A"]);
    }

    #[test]
    fn zero_gain_documents_are_not_padded_in() {
        let docs = vec![doc("A", 10, &[0]), doc("B", 10, &[]), doc("C", 10, &[0])];
        let sel = LazyGreedy.select(&request(&docs, 100, "unique")).unwrap();
        assert_eq!(sel.selected_ids, vec!["A"]);
    }

    #[test]
    fn ties_prefer_shorter_then_smaller_id() {
        let docs = vec![doc("Z", 10, &[0]), doc("Y", 10, &[1]), doc("X", 20, &[2, 3])];
        let sel = NaiveGreedy.select(&request(&docs, 100, "unique")).unwrap();
        assert_eq!(sel.selected_ids, vec!["Y", "Z", "X"]);
        let lazy = LazyGreedy.select(&request(&docs, 100, "unique")).unwrap();
        assert_eq!(lazy.selected_ids, sel.selected_ids);
    }

    #[test]
    fn plain_gain_ignores_length() {
        let docs = vec![doc("short", 1, &[0]), doc("long", 100, &[1, 2])];
        let req = request(&docs, 1000, "unique").with_ranking(Ranking::PlainGain);
        assert_eq!(LazyGreedy.select(&req).unwrap().selected_ids, vec!["long", "short"]);
        let req = request(&docs, 1000, "unique");
        assert_eq!(LazyGreedy.select(&req).unwrap().selected_ids, vec!["short", "long"]);
    }

    #[test]
    fn best_of_both_rescues_crowded_out_long_document() {
        let docs = vec![doc("s", 10, &[0]), doc("l", 95, &[1, 2, 3, 4, 5])];
        let cb = request(&docs, 101, "sqrt").with_ranking(Ranking::CostBenefit);
        assert_eq!(LazyGreedy.select(&cb).unwrap().selected_ids, vec!["s"]);
        let both = request(&docs, 101, "sqrt");
        assert_eq!(both.ranking, Ranking::BestOfBoth);
        for sel in [LazyGreedy.select(&both).unwrap(), NaiveGreedy.select(&both).unwrap()] {
            assert_eq!(sel.selected_ids, vec!["l"]);
            assert!((sel.objective_value - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_tie_breaks_lexicographically() {
        let docs = vec![doc("c", 5, &[0]), doc("a", 5, &[0]), doc("b", 5, &[0])];
        let sel = ExactSelector.select(&request(&docs, 6, "sqrt")).unwrap();
        assert_eq!(sel.selected_ids, vec!["a"]);
        let all_big = vec![doc("a", 50, &[0])];
        assert!(ExactSelector.select(&request(&all_big, 6, "sqrt")).unwrap().selected_ids.is_empty());
    }

    #[test]
    fn exact_refuses_large_instances() {
        let docs: Vec<Document> = (0..21).map(|i| doc(&format!("d{i}"), 1, &[i])).collect();
        assert!(matches!(
            ExactSelector.select(&request(&docs, 100, "sqrt")),
            Err(SelectionError::TooManyCandidates { got: 21, .. })
        ));
    }

    #[test]
    fn random_selection() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{i}"), 5, &[i])).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let all = select_random(&refs, 10, 1, &SqrtValue, "ai").unwrap();
        let mut ids = all.selected_ids.clone();
        ids.sort();
        assert_eq!(ids.len(), 10);
        assert!(select_random(&refs, 0, 1, &SqrtValue, "ai").unwrap().selected_ids.is_empty());
        assert_eq!(
            select_random(&refs, 4, 7, &SqrtValue, "ai").unwrap(),
            select_random(&refs, 4, 7, &SqrtValue, "ai").unwrap()
        );
        assert!(select_random(&refs, 11, 1, &SqrtValue, "ai").is_err());
    }

    #[test]
    fn mean_document_budget_admits_exactly_n_average_documents() {
        let docs: Vec<Document> = [10, 20, 31].iter().enumerate().map(|(i, &l)| doc(&format!("{i}"), l, &[])).collect();
        let b = SelectionBudget::mean_documents(&docs, 3.0);
        assert!(b.admits(61));
        assert!(!b.admits(62));
    }

    fn sel(ids: &[&str]) -> CorpusSelection {
        CorpusSelection {
            selected_ids: ids.iter().map(|s| s.to_string()).collect(),
            objective_value: 0.0,
            total_chars: 0,
            budget: None,
            value_function: "sqrt".into(),
            selector: "test".into(),
            step_gains: vec![],
        }
    }

    #[test]
    fn interleaving_covers_both_orders() {
        let t = sel(&["T1"]);
        let c = sel(&["C1"]);
        let orders: HashSet<Vec<String>> = (0..64)
            .map(|s| interleave_blinded(&t, &c, s).ids().map(str::to_string).collect())
            .collect();
        assert_eq!(orders.len(), 2);
    }

    #[test]
    fn overlap_emitted_once() {
        let order = interleave_blinded(&sel(&["A", "B"]), &sel(&["B", "C"]), 3);
        assert_eq!(order.entries.len(), 3);
        assert_eq!(order.arm_of("B"), Some(Arm::Overlap));
        assert_eq!(order.arm_of("A"), Some(Arm::Treatment));
        assert_eq!(order.arm_of("C"), Some(Arm::Control));
        let positions: Vec<usize> = order.entries.iter().map(|e| e.position).collect();
        assert_eq!(positions, vec![1, 2, 3]);
    }

    #[test]
    fn empty_control_permutes_treatment() {
        let order = interleave_blinded(&sel(&["A", "B", "C"]), &sel(&[]), 11);
        let mut ids: Vec<&str> = order.ids().collect();
        ids.sort();
        assert_eq!(ids, vec!["A", "B", "C"]);
        assert!(order.entries.iter().all(|e| e.arm == Arm::Treatment));
    }
}
