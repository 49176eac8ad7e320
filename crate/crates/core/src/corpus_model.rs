//! Documents, codes, codebooks and the inverse-frequency fecundity metric.
//!
//! A document's *unique weight* sums `1 / f_i` over its code instances, where
//! `f_i` is the number of instances of code `i` in the scope the frequency
//! table was computed over. Summed over every document in that scope the
//! weights add up to the number of distinct codes. *Fecundity* is the unique
//! weight per 1000 characters.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("document `{doc_id}` has text_length 0; lengths must be at least 1 character")]
    ZeroLength { doc_id: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{doc_id}` carries no codes from coder source `{source_name}`")]
    UnknownCoderSource { source_name: String, doc_id: String },
    #[error("code {code} in document `{doc_id}` is missing from the frequency table (stale table?)")]
    StaleFrequencies { doc_id: String, code: CodeId },
    #[error("code {code} in document `{doc_id}` is not in the codebook")]
    UnknownCode { doc_id: String, code: CodeId },
    #[error("code position {position} in document `{doc_id}` lies outside [0, 1]")]
    PositionOutOfRange { doc_id: String, position: f64 },
    #[error("theme map references code {0} which is not in the codebook")]
    DanglingThemeCode(CodeId),
    #[error("theme map references theme {0} which has no label")]
    DanglingTheme(ThemeId),
    #[error("summary statistics need at least one value")]
    EmptySample,
}

/// Index of a code label inside a [`Codebook`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeId(pub u32);

impl fmt::Display for CodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThemeId(pub u32);

impl fmt::Display for ThemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "theme#{}", self.0)
    }
}

/// One occurrence of a code inside a document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeInstance {
    pub code: CodeId,
    /// Midpoint of the containing passage as a fraction of the document span.
    pub position: Option<f64>,
}

impl CodeInstance {
    pub fn new(code: CodeId) -> Self {
        Self { code, position: None }
    }

    pub fn at(code: CodeId, position: f64) -> Self {
        Self { code, position: Some(position) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text_length: usize,
    pub source_label: Option<String>,
    pub text: Option<String>,
    /// Coder source (e.g. `"ai"`, `"human"`) to that coder's code instances.
    pub codes: BTreeMap<String, Vec<CodeInstance>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text_length: usize) -> Result<Self, ModelError> {
        let id = id.into();
        if text_length == 0 {
            return Err(ModelError::ZeroLength { doc_id: id });
        }
        Ok(Self { id, text_length, source_label: None, text: None, codes: BTreeMap::new() })
    }

    /// Builder-style helper that attaches one coder's codes.
    pub fn with_codes(mut self, coder_source: &str, codes: impl IntoIterator<Item = CodeInstance>) -> Self {
        self.codes.entry(coder_source.to_string()).or_default().extend(codes);
        self
    }

    pub fn with_code_ids(self, coder_source: &str, codes: impl IntoIterator<Item = u32>) -> Self {
        self.with_codes(coder_source, codes.into_iter().map(|c| CodeInstance::new(CodeId(c))))
    }

    pub fn instances(&self, coder_source: &str) -> Option<&[CodeInstance]> {
        self.codes.get(coder_source).map(Vec::as_slice)
    }

    /// Instances for `coder_source`, or an error naming the missing source.
    pub fn require_instances(&self, coder_source: &str) -> Result<&[CodeInstance], ModelError> {
        self.instances(coder_source).ok_or_else(|| ModelError::UnknownCoderSource {
            source_name: coder_source.to_string(),
            doc_id: self.id.clone(),
        })
    }

    pub fn distinct_codes(&self, coder_source: &str) -> BTreeSet<CodeId> {
        self.instances(coder_source).unwrap_or_default().iter().map(|c| c.code).collect()
    }
}

/// Canonical registry of code labels plus an optional code to theme mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Codebook {
    labels: Vec<String>,
    index: HashMap<String, CodeId>,
    themes: Vec<String>,
    theme_index: HashMap<String, ThemeId>,
    theme_map: BTreeMap<CodeId, BTreeSet<ThemeId>>,
}

impl Codebook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `label`, registering it if new. Labels are expected
    /// to be canonical already.
    pub fn intern(&mut self, label: &str) -> CodeId {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = CodeId(self.labels.len() as u32);
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id_of(&self, label: &str) -> Option<CodeId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: CodeId) -> Option<&str> {
        self.labels.get(id.0 as usize).map(String::as_str)
    }

    pub fn contains(&self, id: CodeId) -> bool {
        (id.0 as usize) < self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CodeId, &str)> {
        self.labels.iter().enumerate().map(|(i, l)| (CodeId(i as u32), l.as_str()))
    }

    pub fn intern_theme(&mut self, label: &str) -> ThemeId {
        if let Some(&id) = self.theme_index.get(label) {
            return id;
        }
        let id = ThemeId(self.themes.len() as u32);
        self.themes.push(label.to_string());
        self.theme_index.insert(label.to_string(), id);
        id
    }

    pub fn theme_label(&self, id: ThemeId) -> Option<&str> {
        self.themes.get(id.0 as usize).map(String::as_str)
    }

    pub fn theme_count(&self) -> usize {
        self.themes.len()
    }

    /// Maps a code onto a theme. A code may inform several themes.
    pub fn map_theme(&mut self, code: CodeId, theme: ThemeId) -> Result<(), ModelError> {
        if !self.contains(code) {
            return Err(ModelError::DanglingThemeCode(code));
        }
        if (theme.0 as usize) >= self.themes.len() {
            return Err(ModelError::DanglingTheme(theme));
        }
        self.theme_map.entry(code).or_default().insert(theme);
        Ok(())
    }

    pub fn has_theme_map(&self) -> bool {
        !self.theme_map.is_empty()
    }

    pub fn themes_of(&self, code: CodeId) -> impl Iterator<Item = ThemeId> + '_ {
        self.theme_map.get(&code).into_iter().flatten().copied()
    }

    pub fn theme_pairs(&self) -> impl Iterator<Item = (CodeId, ThemeId)> + '_ {
        self.theme_map.iter().flat_map(|(c, ts)| ts.iter().map(move |t| (*c, *t)))
    }
}

/// A validated set of documents sharing one codebook.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Collection {
    pub documents: Vec<Document>,
    pub codebook: Codebook,
}

impl Collection {
    /// Checks id uniqueness, code references and position ranges.
    pub fn new(documents: Vec<Document>, codebook: Codebook) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if doc.text_length == 0 {
                return Err(ModelError::ZeroLength { doc_id: doc.id.clone() });
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(ModelError::DuplicateId(doc.id.clone()));
            }
            for inst in doc.codes.values().flatten() {
                if !codebook.contains(inst.code) {
                    return Err(ModelError::UnknownCode { doc_id: doc.id.clone(), code: inst.code });
                }
                if let Some(p) = inst.position {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(ModelError::PositionOutOfRange { doc_id: doc.id.clone(), position: p });
                    }
                }
            }
        }
        Ok(Self { documents, codebook })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Every coder source appearing on any document.
    pub fn coder_sources(&self) -> BTreeSet<String> {
        self.documents.iter().flat_map(|d| d.codes.keys().cloned()).collect()
    }

    pub fn mean_length(&self) -> f64 {
        mean_length(&self.documents)
    }
}

pub fn mean_length<'a>(docs: impl IntoIterator<Item = &'a Document>) -> f64 {
    let (sum, n) = docs.into_iter().fold((0u64, 0usize), |(s, n), d| (s + d.text_length as u64, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Code instance counts over a set of documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub scope: BTreeSet<String>,
    pub counts: BTreeMap<CodeId, u64>,
}

impl FrequencyTable {
    pub fn get(&self, code: CodeId) -> Option<u64> {
        self.counts.get(&code).copied()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total_instances(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Counts every instance of every code under `coder_source`; duplicates inside
/// one document each count.
pub fn compute_frequencies<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    coder_source: &str,
) -> Result<FrequencyTable, ModelError> {
    let mut table = FrequencyTable::default();
    for doc in docs {
        let instances = doc.require_instances(coder_source)?;
        table.scope.insert(doc.id.clone());
        for inst in instances {
            *table.counts.entry(inst.code).or_insert(0) += 1;
        }
    }
    Ok(table)
}

pub fn unique_weight(doc: &Document, freq: &FrequencyTable, coder_source: &str) -> Result<f64, ModelError> {
    let instances = doc.require_instances(coder_source)?;
    instances.iter().try_fold(0.0, |acc, inst| match freq.get(inst.code) {
        Some(f) if f > 0 => Ok(acc + 1.0 / f as f64),
        _ => Err(ModelError::StaleFrequencies { doc_id: doc.id.clone(), code: inst.code }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FecundityReport {
    pub document_id: String,
    pub unique_weight: f64,
    /// Unique weight per 1000 characters.
    pub fecundity: f64,
}

pub fn fecundity(doc: &Document, freq: &FrequencyTable, coder_source: &str) -> Result<FecundityReport, ModelError> {
    let weight = unique_weight(doc, freq, coder_source)?;
    Ok(FecundityReport {
        document_id: doc.id.clone(),
        unique_weight: weight,
        fecundity: weight / doc.text_length as f64 * 1000.0,
    })
}

/// Fecundity of every document in `docs`, with frequencies computed over `docs`.
pub fn corpus_fecundity<'a>(
    docs: impl IntoIterator<Item = &'a Document> + Clone,
    coder_source: &str,
) -> Result<Vec<FecundityReport>, ModelError> {
    let freq = compute_frequencies(docs.clone(), coder_source)?;
    docs.into_iter().map(|d| fecundity(d, &freq, coder_source)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub n: usize,
    /// Normal-approximation 95% interval on the mean; absent when n < 2.
    pub ci95_lower: Option<f64>,
    pub ci95_upper: Option<f64>,
    pub p25: f64,
    pub p75: f64,
}

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats, ModelError> {
    if values.is_empty() {
        return Err(ModelError::EmptySample);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let (lo, hi) = if n >= 2 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let half = 1.96 * var.sqrt() / (n as f64).sqrt();
        (Some(mean - half), Some(mean + half))
    } else {
        (None, None)
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryStats {
        mean,
        n,
        ci95_lower: lo,
        ci95_upper: hi,
        p25: percentile_sorted(&sorted, 0.25),
        p75: percentile_sorted(&sorted, 0.75),
    })
}

/// Percentile of already-sorted data with linear interpolation between order
/// statistics (rank `q * (n - 1)`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}
