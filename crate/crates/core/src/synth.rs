//! Seeded synthetic corpora for demos, tests and simulation studies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus_model::{CodeInstance, Codebook, Collection, Document, ModelError};
use crate::ingest::{split_passages, RawArticle};
use crate::stats::{DataTable, AI_DENSITY, AI_SELECTED, FECUNDITY, INDEX, LENGTH, OLD_RANDOM, OVERLAP, ROUND};

pub const HUMAN_SOURCE: &str = "human";

const SYLLABLES: [&str; 16] =
    ["ra", "fu", "ge", "ma", "lay", "si", "ro", "hin", "gya", "un", "hcr", "po", "li", "cy", "aid", "ko"];

fn lognormal_with_mean(mean: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).expect("finite parameters")
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).expect("positive").sample(rng) as u64
    }
}

fn paragraph(rng: &mut ChaCha8Rng, target: usize) -> String {
    let mut out = String::with_capacity(target + 12);
    while out.len() < target {
        if !out.is_empty() {
            out.push(' ');
        }
        for _ in 0..rng.random_range(1..=3) {
            out.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
        }
    }
    out.push('.');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleConfig {
    pub n_articles: usize,
    pub paragraphs: (usize, usize),
    pub paragraph_chars: (usize, usize),
    pub vocabulary: usize,
    pub exponent: f64,
    /// Paragraph characters per expected human code at unit intensity.
    pub chars_per_code: f64,
    /// Log-scale spread of per-article coding intensity.
    pub intensity_sigma: f64,
    pub n_themes: usize,
    pub seed: u64,
}

impl ArticleConfig {
    pub fn new(n_articles: usize, seed: u64) -> Self {
        Self {
            n_articles,
            paragraphs: (3, 12),
            paragraph_chars: (60, 600),
            vocabulary: 300,
            exponent: 1.1,
            chars_per_code: 400.0,
            intensity_sigma: 0.5,
            n_themes: 12,
            seed,
        }
    }
}

pub struct SynthArticles {
    pub articles: Vec<RawArticle>,
    /// Human codes positioned at paragraph midpoints, with a theme map.
    pub collection: Collection,
}

pub fn human_code_label(rank: usize) -> String {
    format!("human code {rank:03}")
}

/// Articles of pseudo-text with Zipf-distributed human codes per paragraph.
/// Paragraphs shorter than 100 characters carry no codes.
pub fn synth_articles(cfg: &ArticleConfig) -> Result<SynthArticles, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.vocabulary as f64, cfg.exponent).expect("valid Zipf");
    let intensity = lognormal_with_mean(1.0, cfg.intensity_sigma);
    let mut codebook = Codebook::new();
    let themes: Vec<_> = (1..=cfg.n_themes.max(1)).map(|t| codebook.intern_theme(&format!("theme {t:02}"))).collect();

    let mut articles = Vec::with_capacity(cfg.n_articles);
    let mut docs = Vec::with_capacity(cfg.n_articles);
    for a in 0..cfg.n_articles {
        let id = format!("art{:04}", a + 1);
        let n_par = rng.random_range(cfg.paragraphs.0..=cfg.paragraphs.1);
        let text: Vec<String> = (0..n_par)
            .map(|_| {
                let len = rng.random_range(cfg.paragraph_chars.0..=cfg.paragraph_chars.1);
                paragraph(&mut rng, len)
            })
            .collect();
        let article = RawArticle { id: id.clone(), full_text: text.join("\n"), source_label: Some("synthetic".into()) };
        let len = article.full_text.chars().count();
        let scale: f64 = intensity.sample(&mut rng);
        let mut codes = Vec::new();
        for p in split_passages(&article, 100) {
            let k = poisson(&mut rng, p.text.chars().count() as f64 / cfg.chars_per_code * scale);
            for _ in 0..k {
                let rank = zipf.sample(&mut rng) as usize;
                let code = codebook.intern(&human_code_label(rank));
                codebook.map_theme(code, themes[(rank - 1) % themes.len()])?;
                codes.push(CodeInstance::at(code, p.relative_midpoint(len)));
            }
        }
        let mut doc = Document::new(id, len)?.with_codes(HUMAN_SOURCE, codes);
        doc.source_label = article.source_label.clone();
        doc.text = Some(article.full_text.clone());
        docs.push(doc);
        articles.push(article);
    }
    Ok(SynthArticles { articles, collection: Collection::new(docs, codebook)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfCorpusConfig {
    pub n_docs: usize,
    pub vocabulary: usize,
    pub exponent: f64,
    pub mean_length: f64,
    pub length_sigma: f64,
    pub codes_per_1000: f64,
    pub intensity_sigma: f64,
    pub coder_source: String,
    pub seed: u64,
}

impl ZipfCorpusConfig {
    pub fn new(n_docs: usize, seed: u64) -> Self {
        Self {
            n_docs,
            vocabulary: 2000,
            exponent: 1.1,
            mean_length: 3000.0,
            length_sigma: 0.6,
            codes_per_1000: 2.0,
            intensity_sigma: 0.6,
            coder_source: "ai".into(),
            seed,
        }
    }
}

/// Text-free documents with log-normal lengths and Zipf codes whose rate per
/// character varies log-normally between documents.
pub fn zipf_corpus(cfg: &ZipfCorpusConfig) -> Result<Collection, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.vocabulary as f64, cfg.exponent).expect("valid Zipf");
    let lengths = lognormal_with_mean(cfg.mean_length, cfg.length_sigma);
    let intensity = lognormal_with_mean(1.0, cfg.intensity_sigma);
    let mut codebook = Codebook::new();
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for i in 0..cfg.n_docs {
        let len = (lengths.sample(&mut rng).round() as usize).max(50);
        let scale = intensity.sample(&mut rng);
        let k = poisson(&mut rng, len as f64 / 1000.0 * cfg.codes_per_1000 * scale);
        let codes: Vec<CodeInstance> = (0..k)
            .map(|_| CodeInstance::new(codebook.intern(&format!("code {:04}", zipf.sample(&mut rng) as usize))))
            .collect();
        docs.push(Document::new(format!("doc{:05}", i + 1), len)?.with_codes(&cfg.coder_source, codes));
    }
    Collection::new(docs, codebook)
}

/// Shape of the two-round coding experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_control: usize,
    pub n_treatment: usize,
    pub n_overlap: usize,
    pub n_old_random: usize,
    /// Unique codes per 1000 characters in control documents.
    pub base_rate: f64,
    /// Treatment code rate as a multiple of the control rate.
    pub rate_multiplier: f64,
    pub control_mean_length: f64,
    pub treatment_mean_length: f64,
    pub length_sigma: f64,
    /// Multiplicative noise on the AI density signal.
    pub ai_noise_sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_control: 14,
            n_treatment: 34,
            n_overlap: 3,
            n_old_random: 11,
            base_rate: 1.382,
            rate_multiplier: 2.0,
            control_mean_length: 3500.0,
            treatment_mean_length: 2000.0,
            length_sigma: 0.4,
            ai_noise_sigma: 0.3,
        }
    }
}

impl ExperimentConfig {
    /// Expected fecundity difference between treatment and control.
    pub fn planted_effect(&self) -> f64 {
        self.base_rate * (self.rate_multiplier - 1.0)
    }
}

pub struct ExperimentFixture {
    /// Columns: fecundity, ai_selected, overlap, old_random, index, round,
    /// length, ai_density.
    pub table: DataTable,
    pub documents: Vec<Document>,
    pub planted_effect: f64,
}

/// Simulated observations. Every human code is novel, so a document's
/// fecundity is its code count per 1000 characters and the arm effect is
/// exactly `planted_effect` in expectation. Second-round documents (control,
/// treatment, overlap) are read in a random interleaved order; earlier
/// random documents have their own order and `round = 0`.
pub fn experiment_fixture(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentFixture, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(-cfg.ai_noise_sigma.powi(2) / 2.0, cfg.ai_noise_sigma).expect("finite");
    let c_len = lognormal_with_mean(cfg.control_mean_length, cfg.length_sigma);
    let t_len = lognormal_with_mean(cfg.treatment_mean_length, cfg.length_sigma);

    // (ai_selected, overlap, old_random)
    let mut arms = Vec::new();
    arms.extend(std::iter::repeat_n((false, false, false), cfg.n_control));
    arms.extend(std::iter::repeat_n((true, false, false), cfg.n_treatment));
    arms.extend(std::iter::repeat_n((true, true, false), cfg.n_overlap));
    let n_second = arms.len();
    arms.extend(std::iter::repeat_n((false, false, true), cfg.n_old_random));

    let mut second: Vec<usize> = (1..=n_second).collect();
    second.shuffle(&mut rng);
    let mut first: Vec<usize> = (1..=cfg.n_old_random).collect();
    first.shuffle(&mut rng);

    let mut next_code = 0u32;
    let n = arms.len();
    let (mut fec, mut ai, mut ov, mut old, mut idx, mut round, mut lens, mut dens) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    let mut documents = Vec::with_capacity(n);
    for (i, &(selected, overlap, old_random)) in arms.iter().enumerate() {
        let rate = if selected { cfg.base_rate * cfg.rate_multiplier } else { cfg.base_rate };
        let len = (if selected { t_len.sample(&mut rng) } else { c_len.sample(&mut rng) }).round().max(200.0) as usize;
        let k = poisson(&mut rng, rate * len as f64 / 1000.0);
        let codes: Vec<u32> = (0..k as u32).map(|j| next_code + j).collect();
        next_code += k as u32;
        documents.push(Document::new(format!("obs{:03}", i + 1), len)?.with_code_ids(HUMAN_SOURCE, codes));

        fec.push(k as f64 / len as f64 * 1000.0);
        ai.push(selected as u8 as f64);
        ov.push(overlap as u8 as f64);
        old.push(old_random as u8 as f64);
        idx.push(if old_random { first[i - n_second] } else { second[i] } as f64);
        round.push((!old_random) as u8 as f64);
        lens.push(len as f64);
        dens.push(rate * noise.sample(&mut rng).exp());
    }
    let table = [
        (FECUNDITY, fec),
        (AI_SELECTED, ai),
        (OVERLAP, ov),
        (OLD_RANDOM, old),
        (INDEX, idx),
        (ROUND, round),
        (LENGTH, lens),
        (AI_DENSITY, dens),
    ]
    .into_iter()
    .try_fold(DataTable::new(), |t, (name, col)| t.with_column(name, col))
    .expect("equal lengths");
    Ok(ExperimentFixture { table, documents, planted_effect: cfg.planted_effect() })
}
