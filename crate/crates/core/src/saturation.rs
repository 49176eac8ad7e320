//! Cumulative code and theme accumulation curves, the 10+3 stopping rule, and
//! bootstrap bands over random document orderings.
//!
//! Counting regimes (registered by name):
//!
//! * `unique`: distinct codes seen so far.
//! * `hf_retrospective`: codes that are high-frequency in the complete
//!   codebook of the ordering and have appeared at least once so far.
//! * `hf_iterative`: codes whose running instance count has reached the
//!   threshold so far.
//! * `themes`: distinct themes touched by any code seen so far.
//!
//! # Bootstrap band
//!
//! Orderings are uniform permutations (sampling without replacement). At
//! step `k` of `N` the empirical 2.5/97.5 percentile half-widths around the
//! mean are divided by `sqrt((N - k) / (N - 1))`. That finite population
//! correction is an interpretation: it inflates the interval as the sample
//! exhausts the population and is `0/0` at `k = N`, so the final
//! `ceil(truncation * N)` steps (10% by default) are dropped.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_model::{percentile_sorted, CodeId, Codebook, Document, ModelError};
use crate::registry::{Named, Registry, UnknownName};

pub const DEFAULT_HF_THRESHOLD: u32 = 3;
pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_TRUNCATION: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaturationError {
    #[error("the `{0}` regime needs a code-to-theme map")]
    MissingThemeMap(String),
    #[error("bootstrap needs at least 2 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("high-frequency threshold must be at least 2, got {0}")]
    BadThreshold(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Unknown(#[from] UnknownName),
}

/// Documents prepared for repeated tallying: dense code and theme indices.
pub struct CodedCorpus<'a> {
    docs: Vec<&'a Document>,
    lens: Vec<u64>,
    /// Dense code index of every instance, per document.
    codes: Vec<Vec<usize>>,
    n_codes: usize,
    /// Dense theme indices per dense code.
    code_themes: Vec<Vec<usize>>,
    n_themes: usize,
    has_themes: bool,
}

impl<'a> CodedCorpus<'a> {
    pub fn new(docs: &[&'a Document], coder_source: &str, codebook: Option<&Codebook>) -> Result<Self, ModelError> {
        let mut dense: std::collections::HashMap<CodeId, usize> = Default::default();
        let mut originals: Vec<CodeId> = Vec::new();
        let mut codes = Vec::with_capacity(docs.len());
        for doc in docs {
            let instances = doc.require_instances(coder_source)?;
            codes.push(
                instances
                    .iter()
                    .map(|inst| {
                        *dense.entry(inst.code).or_insert_with(|| {
                            originals.push(inst.code);
                            originals.len() - 1
                        })
                    })
                    .collect(),
            );
        }
        let (code_themes, n_themes, has_themes) = match codebook {
            Some(cb) if cb.has_theme_map() => {
                let themes = originals.iter().map(|&c| cb.themes_of(c).map(|t| t.0 as usize).collect()).collect();
                (themes, cb.theme_count(), true)
            }
            _ => (vec![Vec::new(); originals.len()], 0, false),
        };
        Ok(Self {
            lens: docs.iter().map(|d| d.text_length as u64).collect(),
            docs: docs.to_vec(),
            codes,
            n_codes: originals.len(),
            code_themes,
            n_themes,
            has_themes,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn has_themes(&self) -> bool {
        self.has_themes
    }

    /// Total instances of each dense code across the whole corpus.
    fn totals(&self) -> Vec<u32> {
        let mut totals = vec![0u32; self.n_codes];
        for doc in &self.codes {
            for &c in doc {
                totals[c] += 1;
            }
        }
        totals
    }
}

/// One way of tallying a cumulative count along a document ordering.
pub trait CountingRegime: Named + Send + Sync {
    fn needs_themes(&self) -> bool {
        false
    }

    /// Cumulative count after each document of `order` (indices into `corpus`).
    fn tally(&self, corpus: &CodedCorpus<'_>, order: &[usize]) -> Vec<u64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniqueCodes;

impl Named for UniqueCodes {
    fn name(&self) -> &str {
        "unique"
    }
}

impl CountingRegime for UniqueCodes {
    fn tally(&self, corpus: &CodedCorpus<'_>, order: &[usize]) -> Vec<u64> {
        let mut seen = vec![false; corpus.n_codes];
        let mut count = 0;
        order
            .iter()
            .map(|&d| {
                for &c in &corpus.codes[d] {
                    if !seen[c] {
                        seen[c] = true;
                        count += 1;
                    }
                }
                count
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetrospectiveHighFrequency {
    pub threshold: u32,
}

impl Named for RetrospectiveHighFrequency {
    fn name(&self) -> &str {
        "hf_retrospective"
    }
}

impl CountingRegime for RetrospectiveHighFrequency {
    fn tally(&self, corpus: &CodedCorpus<'_>, order: &[usize]) -> Vec<u64> {
        let high: Vec<bool> = corpus.totals().into_iter().map(|t| t >= self.threshold).collect();
        let mut seen = vec![false; corpus.n_codes];
        let mut count = 0;
        order
            .iter()
            .map(|&d| {
                for &c in &corpus.codes[d] {
                    if high[c] && !seen[c] {
                        seen[c] = true;
                        count += 1;
                    }
                }
                count
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterativeHighFrequency {
    pub threshold: u32,
}

impl Named for IterativeHighFrequency {
    fn name(&self) -> &str {
        "hf_iterative"
    }
}

impl CountingRegime for IterativeHighFrequency {
    fn tally(&self, corpus: &CodedCorpus<'_>, order: &[usize]) -> Vec<u64> {
        let mut running = vec![0u32; corpus.n_codes];
        let mut count = 0;
        order
            .iter()
            .map(|&d| {
                for &c in &corpus.codes[d] {
                    running[c] += 1;
                    if running[c] == self.threshold {
                        count += 1;
                    }
                }
                count
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ThemeCoverage;

impl Named for ThemeCoverage {
    fn name(&self) -> &str {
        "themes"
    }
}

impl CountingRegime for ThemeCoverage {
    fn needs_themes(&self) -> bool {
        true
    }

    fn tally(&self, corpus: &CodedCorpus<'_>, order: &[usize]) -> Vec<u64> {
        let mut seen = vec![false; corpus.n_themes];
        let mut count = 0;
        order
            .iter()
            .map(|&d| {
                for &c in &corpus.codes[d] {
                    for &t in &corpus.code_themes[c] {
                        if !seen[t] {
                            seen[t] = true;
                            count += 1;
                        }
                    }
                }
                count
            })
            .collect()
    }
}

pub fn regimes(hf_threshold: u32) -> Result<Registry<dyn CountingRegime>, SaturationError> {
    if hf_threshold < 2 {
        return Err(SaturationError::BadThreshold(hf_threshold));
    }
    let mut r: Registry<dyn CountingRegime> = Registry::new("counting regime");
    r.register(Arc::new(UniqueCodes))
        .register(Arc::new(RetrospectiveHighFrequency { threshold: hf_threshold }))
        .register(Arc::new(IterativeHighFrequency { threshold: hf_threshold }))
        .register(Arc::new(ThemeCoverage));
    Ok(r)
}

pub fn regime(name: &str, hf_threshold: u32) -> Result<Arc<dyn CountingRegime>, SaturationError> {
    Ok(regimes(hf_threshold)?.get(name)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveStep {
    /// 1-based position in the ordering.
    pub doc_index: usize,
    pub doc_id: String,
    pub cumulative_chars: u64,
    pub cumulative_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub regime: String,
    pub document_order: Vec<String>,
    pub steps: Vec<CurveStep>,
}

impl SaturationCurve {
    pub fn counts(&self) -> Vec<u64> {
        self.steps.iter().map(|s| s.cumulative_count).collect()
    }

    /// Builds a curve from bare counts (documents of length 1, ids `1..=n`).
    pub fn from_counts(regime: &str, counts: &[u64]) -> Self {
        let steps: Vec<CurveStep> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| CurveStep {
                doc_index: i + 1,
                doc_id: (i + 1).to_string(),
                cumulative_chars: i as u64 + 1,
                cumulative_count: c,
            })
            .collect();
        Self { regime: regime.to_string(), document_order: steps.iter().map(|s| s.doc_id.clone()).collect(), steps }
    }
}

fn check_regime(regime: &dyn CountingRegime, corpus: &CodedCorpus<'_>) -> Result<(), SaturationError> {
    if regime.needs_themes() && !corpus.has_themes() {
        return Err(SaturationError::MissingThemeMap(regime.name().to_string()));
    }
    Ok(())
}

/// The cumulative curve for documents read in `order`.
pub fn cumulative_curve(
    order: &[&Document],
    regime: &dyn CountingRegime,
    coder_source: &str,
    codebook: Option<&Codebook>,
) -> Result<SaturationCurve, SaturationError> {
    let corpus = CodedCorpus::new(order, coder_source, codebook)?;
    check_regime(regime, &corpus)?;
    let idx: Vec<usize> = (0..order.len()).collect();
    let counts = regime.tally(&corpus, &idx);
    let mut chars = 0;
    let steps = order
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(i, (doc, count))| {
            chars += doc.text_length as u64;
            CurveStep { doc_index: i + 1, doc_id: doc.id.clone(), cumulative_chars: chars, cumulative_count: count }
        })
        .collect();
    Ok(SaturationCurve {
        regime: regime.name().to_string(),
        document_order: order.iter().map(|d| d.id.clone()).collect(),
        steps,
    })
}

/// "10+3": after at least `initial` documents, `run` consecutive documents
/// adding nothing. The earliest satisfaction point is `initial + run`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub initial: usize,
    pub run: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self { initial: 10, run: 3 }
    }
}

impl StoppingRule {
    pub fn label(&self) -> String {
        format!("{}+{}", self.initial, self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRuleResult {
    pub rule: String,
    pub satisfied_at: Option<usize>,
    pub codes_at_satisfaction: Option<u64>,
    pub all_satisfaction_points: Vec<usize>,
}

/// Every 1-based index `k >= initial + run` with `count(k) == count(k - run)`.
pub fn detect_stopping(curve: &SaturationCurve, rule: StoppingRule) -> StoppingRuleResult {
    let counts = curve.counts();
    let first = rule.initial + rule.run;
    let points: Vec<usize> = (first.max(rule.run + 1)..=counts.len())
        .filter(|&k| counts[k - 1] == counts[k - 1 - rule.run])
        .collect();
    let satisfied_at = points.first().copied();
    StoppingRuleResult {
        rule: rule.label(),
        satisfied_at,
        codes_at_satisfaction: satisfied_at.map(|k| counts[k - 1]),
        all_satisfaction_points: points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawStep {
    pub step: usize,
    pub mean_chars: f64,
    pub mean_count: f64,
    pub p025: f64,
    pub p975: f64,
}

impl RawStep {
    pub fn width(&self) -> f64 {
        self.p975 - self.p025
    }
}

/// Untruncated, uncorrected bootstrap statistics for every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBootstrap {
    pub n_docs: usize,
    pub n_iterations: usize,
    pub steps: Vec<RawStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStep {
    pub step: usize,
    /// Mean cumulative characters at this step across iterations.
    pub mean_x: f64,
    pub mean_count: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub regime: String,
    pub n_docs: usize,
    pub n_iterations: usize,
    pub truncation: f64,
    pub steps: Vec<BandStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub n_iterations: usize,
    pub seed: u64,
    pub truncation: f64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        Self { n_iterations: DEFAULT_ITERATIONS, seed, truncation: DEFAULT_TRUNCATION }
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.n_iterations = n;
        self
    }
}

/// Number of final steps dropped for `n_docs` documents.
pub fn truncated_steps(n_docs: usize, truncation: f64) -> usize {
    let raw = truncation * n_docs as f64;
    // Guard against 0.1 * 10 landing a hair above 1.
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n_docs)
}

/// Runs `n_iterations` seeded permutations. Iteration `i` draws from a
/// ChaCha8 stream `i` of the master seed, so parallel and sequential runs
/// agree bit for bit.
pub fn bootstrap_raw(
    docs: &[&Document],
    regime: &dyn CountingRegime,
    coder_source: &str,
    codebook: Option<&Codebook>,
    n_iterations: usize,
    seed: u64,
) -> Result<RawBootstrap, SaturationError> {
    let n = docs.len();
    if n < 2 {
        return Err(SaturationError::TooFewDocuments(n));
    }
    let corpus = CodedCorpus::new(docs, coder_source, codebook)?;
    check_regime(regime, &corpus)?;

    let runs: Vec<(Vec<u64>, Vec<u64>)> = (0..n_iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let counts = regime.tally(&corpus, &order);
            let mut acc = 0;
            let chars = order
                .iter()
                .map(|&d| {
                    acc += corpus.lens[d];
                    acc
                })
                .collect();
            (counts, chars)
        })
        .collect();

    let steps = (0..n)
        .map(|k| {
            let mut counts: Vec<f64> = runs.iter().map(|(c, _)| c[k] as f64).collect();
            let mean_count = counts.iter().sum::<f64>() / n_iterations as f64;
            let mean_chars = runs.iter().map(|(_, x)| x[k] as f64).sum::<f64>() / n_iterations as f64;
            counts.sort_by(f64::total_cmp);
            RawStep {
                step: k + 1,
                mean_chars,
                mean_count,
                p025: percentile_sorted(&counts, 0.025),
                p975: percentile_sorted(&counts, 0.975),
            }
        })
        .collect();
    Ok(RawBootstrap { n_docs: n, n_iterations, steps })
}

impl RawBootstrap {
    /// FPC-adjusted band over the retained steps.
    pub fn band(&self, regime: &str, truncation: f64) -> BootstrapBand {
        let n = self.n_docs;
        let keep = n - truncated_steps(n, truncation);
        let steps = self
            .steps
            .iter()
            .take(keep)
            .map(|s| {
                let fpc = ((n - s.step) as f64 / (n - 1) as f64).sqrt();
                let below = (s.mean_count - s.p025).max(0.0) / fpc;
                let above = (s.p975 - s.mean_count).max(0.0) / fpc;
                BandStep { step: s.step, mean_x: s.mean_chars, mean_count: s.mean_count, lo95: s.mean_count - below, hi95: s.mean_count + above }
            })
            .collect();
        BootstrapBand { regime: regime.to_string(), n_docs: n, n_iterations: self.n_iterations, truncation, steps }
    }
}

pub fn bootstrap_band(
    docs: &[&Document],
    regime: &dyn CountingRegime,
    coder_source: &str,
    codebook: Option<&Codebook>,
    config: BootstrapConfig,
) -> Result<BootstrapBand, SaturationError> {
    let raw = bootstrap_raw(docs, regime, coder_source, codebook, config.n_iterations, config.seed)?;
    Ok(raw.band(regime.name(), config.truncation))
}

/// Median relative position of the document's positioned code instances.
pub fn median_code_position(doc: &Document, coder_source: &str) -> Option<f64> {
    let mut positions: Vec<f64> =
        doc.instances(coder_source).unwrap_or_default().iter().filter_map(|c| c.position).collect();
    if positions.is_empty() {
        return None;
    }
    positions.sort_by(f64::total_cmp);
    let m = positions.len();
    Some(if m % 2 == 1 { positions[m / 2] } else { (positions[m / 2 - 1] + positions[m / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub doc_id: String,
    pub text_length: usize,
    pub median_position: f64,
    pub moving_average: f64,
}

/// Documents with positioned codes, sorted by length, with a centred moving
/// average of their median code positions (the window shrinks at the ends).
pub fn position_trend(docs: &[&Document], coder_source: &str, window: usize) -> Result<Vec<TrendPoint>, SaturationError> {
    if window == 0 {
        return Err(SaturationError::ZeroWindow);
    }
    let mut points: Vec<(&Document, f64)> =
        docs.iter().filter_map(|d| median_code_position(d, coder_source).map(|m| (*d, m))).collect();
    points.sort_by(|a, b| a.0.text_length.cmp(&b.0.text_length).then_with(|| a.0.id.cmp(&b.0.id)));
    let before = (window - 1) / 2;
    let after = window / 2;
    let n = points.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            let avg = points[lo..=hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo + 1) as f64;
            TrendPoint {
                doc_id: points[i].0.id.clone(),
                text_length: points[i].0.text_length,
                median_position: points[i].1,
                moving_average: avg,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_model::CodeInstance;

    fn doc(id: &str, len: usize, codes: &[u32]) -> Document {
        Document::new(id, len).unwrap().with_code_ids("h", codes.iter().copied())
    }

    fn worked_example() -> Vec<Document> {
        vec![doc("D1", 10, &[0]), doc("D2", 10, &[0]), doc("D3", 10, &[0, 1]), doc("D4", 10, &[1]), doc("D5", 10, &[1])]
    }

    fn counts(name: &str, docs: &[Document]) -> Vec<u64> {
        let refs: Vec<&Document> = docs.iter().collect();
        cumulative_curve(&refs, regime(name, 3).unwrap().as_ref(), "h", None).unwrap().counts()
    }

    #[test]
    fn regimes_on_worked_example() {
        let docs = worked_example();
        assert_eq!(counts("unique", &docs), vec![1, 1, 2, 2, 2]);
        assert_eq!(counts("hf_retrospective", &docs), vec![1, 1, 2, 2, 2]);
        assert_eq!(counts("hf_iterative", &docs), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn curve_tracks_characters() {
        let docs = worked_example();
        let refs: Vec<&Document> = docs.iter().collect();
        let curve = cumulative_curve(&refs, &UniqueCodes, "h", None).unwrap();
        let chars: Vec<u64> = curve.steps.iter().map(|s| s.cumulative_chars).collect();
        assert_eq!(chars, vec![10, 20, 30, 40, 50]);
        assert_eq!(curve.document_order[2], "D3");
    }

    #[test]
    fn themes_need_a_map() {
        let docs = worked_example();
        let refs: Vec<&Document> = docs.iter().collect();
        let err = cumulative_curve(&refs, &ThemeCoverage, "h", None).unwrap_err();
        assert_eq!(err, SaturationError::MissingThemeMap("themes".into()));
    }

    #[test]
    fn themes_count_reached_themes() {
        let mut cb = Codebook::new();
        let a = cb.intern("a");
        let b = cb.intern("b");
        cb.intern("c");
        let t1 = cb.intern_theme("t1");
        let t2 = cb.intern_theme("t2");
        cb.map_theme(a, t1).unwrap();
        cb.map_theme(b, t1).unwrap();
        cb.map_theme(b, t2).unwrap();
        let docs = [doc("1", 1, &[2]), doc("2", 1, &[0]), doc("3", 1, &[1])];
        let refs: Vec<&Document> = docs.iter().collect();
        let curve = cumulative_curve(&refs, &ThemeCoverage, "h", Some(&cb)).unwrap();
        assert_eq!(curve.counts(), vec![0, 1, 2]);
    }

    #[test]
    fn stopping_rule_examples() {
        let mut flat: Vec<u64> = (1..=10).collect();
        flat.extend([10; 5]);
        let r = detect_stopping(&SaturationCurve::from_counts("unique", &flat), StoppingRule::default());
        assert_eq!(r.satisfied_at, Some(13));
        assert_eq!(r.codes_at_satisfaction, Some(10));

        let rising: Vec<u64> = (1..=20).collect();
        let r = detect_stopping(&SaturationCurve::from_counts("unique", &rising), StoppingRule::default());
        assert_eq!(r.satisfied_at, None);
        assert!(r.all_satisfaction_points.is_empty());

        let mut plateaus: Vec<u64> = (1..=10).collect();
        plateaus.extend([10, 10, 10, 11, 11, 11, 11]);
        let r = detect_stopping(&SaturationCurve::from_counts("unique", &plateaus), StoppingRule::default());
        assert_eq!(r.all_satisfaction_points, vec![13, 17]);
        assert_eq!(r.satisfied_at, Some(13));
    }

    #[test]
    fn stopping_never_before_thirteen() {
        let r = detect_stopping(&SaturationCurve::from_counts("unique", &[0; 12]), StoppingRule::default());
        assert!(r.satisfied_at.is_none());
        let r = detect_stopping(&SaturationCurve::from_counts("unique", &[0; 13]), StoppingRule::default());
        assert_eq!(r.satisfied_at, Some(13));
    }

    #[test]
    fn bootstrap_two_disjoint_documents() {
        let docs = [doc("a", 5, &[0]), doc("b", 5, &[1])];
        let refs: Vec<&Document> = docs.iter().collect();
        let band = bootstrap_band(&refs, &UniqueCodes, "h", None, BootstrapConfig::new(4).with_iterations(200)).unwrap();
        assert_eq!(band.steps.len(), 1);
        assert_eq!(band.steps[0].mean_count, 1.0);
        assert_eq!(band.steps[0].mean_x, 5.0);
    }

    #[test]
    fn bootstrap_identical_documents_have_no_spread() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&i.to_string(), 7, &[0])).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let band = bootstrap_band(&refs, &UniqueCodes, "h", None, BootstrapConfig::new(1).with_iterations(300)).unwrap();
        assert_eq!(band.steps.len(), 9);
        for s in &band.steps {
            assert_eq!(s.lo95, s.hi95);
            assert_eq!(s.lo95, 1.0);
        }
    }

    #[test]
    fn bootstrap_rejects_single_document() {
        let docs = [doc("a", 5, &[0])];
        let refs: Vec<&Document> = docs.iter().collect();
        assert_eq!(
            bootstrap_raw(&refs, &UniqueCodes, "h", None, 10, 0).unwrap_err(),
            SaturationError::TooFewDocuments(1)
        );
    }

    #[test]
    fn truncation_counts() {
        assert_eq!(truncated_steps(2, 0.1), 1);
        assert_eq!(truncated_steps(10, 0.1), 1);
        assert_eq!(truncated_steps(11, 0.1), 2);
        assert_eq!(truncated_steps(30, 0.1), 3);
        for n in 2..500 {
            assert_eq!(n - truncated_steps(n, 0.1), n * 9 / 10, "n={n}");
        }
    }

    #[test]
    fn median_positions() {
        let with = |ps: &[f64]| {
            Document::new("x", 10).unwrap().with_codes("h", ps.iter().map(|&p| CodeInstance::at(CodeId(0), p)))
        };
        assert_eq!(median_code_position(&with(&[0.9, 0.2, 0.5]), "h"), Some(0.5));
        assert!((median_code_position(&with(&[0.2, 0.6]), "h").unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(median_code_position(&doc("y", 3, &[0, 1]), "h"), None);
    }

    #[test]
    fn trend_examples() {
        let at = |id: &str, len: usize, p: f64| {
            Document::new(id, len).unwrap().with_codes("h", [CodeInstance::at(CodeId(0), p)])
        };
        let flat: Vec<Document> = (1..8).map(|i| at(&i.to_string(), i * 100, 0.5)).collect();
        let refs: Vec<&Document> = flat.iter().collect();
        assert!(position_trend(&refs, "h", 3).unwrap().iter().all(|p| p.moving_average == 0.5));

        let single = [at("s", 10, 0.3)];
        let r: Vec<&Document> = single.iter().collect();
        assert_eq!(position_trend(&r, "h", 5).unwrap()[0].moving_average, 0.3);

        let linear: Vec<Document> = (1..=20).rev().map(|i| at(&format!("d{i}"), i * 50, i as f64 / 25.0)).collect();
        let refs: Vec<&Document> = linear.iter().collect();
        let trend = position_trend(&refs, "h", 5).unwrap();
        assert!(trend.windows(2).all(|w| w[0].text_length <= w[1].text_length));
        assert!(trend.windows(2).all(|w| w[1].moving_average > w[0].moving_average));
        assert!(position_trend(&refs, "h", 0).is_err());
    }
}
