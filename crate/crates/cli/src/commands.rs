//! Subcommand implementations. Every command writes its outputs under the
//! output directory plus a `meta_<command>.json` sidecar, the only file that
//! carries a timestamp.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use fecund_core::coder_client::{
    backends, code_passages, fallback_summary, outcome_rows, read_summaries, ClusterContext, PassageContext,
    TemplateChain,
};
use fecund_core::corpus_model::{corpus_fecundity, Collection, Document};
use fecund_core::ingest::{
    load_collection, read_documents, split_passages, write_code_rows, write_codes, write_collection, write_documents,
    CollectionPaths, RawArticle,
};
use fecund_core::plot::{Band, Chart};
use fecund_core::saturation::{
    bootstrap_raw, cumulative_curve, detect_stopping, position_trend, regimes, StoppingRule,
};
use fecund_core::selection::{
    interleave_blinded, select_random, selectors, value_function, Arm, Ranking, SelectionBudget, SelectionRequest,
};
use fecund_core::stats::{
    fit_quadratic, length_residual_check, length_table, superset_sweep, treatment_table, DataTable, QuadraticMap,
    RegressionTable, SubsetSize, SweepConfig, AI_DENSITY, AI_SELECTED, FECUNDITY, INDEX, LENGTH, OLD_RANDOM, OVERLAP,
    ROUND,
};
use fecund_core::synth::{experiment_fixture, synth_articles, zipf_corpus, ArticleConfig, ExperimentConfig, ZipfCorpusConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::failure::{Classify, ExitClass, Tagged};
use crate::{AnalyzeArgs, CodeArgs, SaturateArgs, SelectArgs, SweepArgs, SynthArgs, SynthKind};

/// Collects written files and emits the metadata sidecar.
struct Outputs {
    command: &'static str,
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(cfg: &RunConfig, command: &'static str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display())).class(ExitClass::Io)?;
        Ok(Self { command, dir: cfg.out.clone(), files: Vec::new() })
    }

    /// Path for `name`, recorded as an output.
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display())).class(ExitClass::Io)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value).class(ExitClass::Compute)?;
        s.push('\n');
        self.text(name, &s)
    }

    fn finish(self, seed: Option<u64>) -> anyhow::Result<()> {
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = serde_json::json!({
            "command": self.command,
            "seed": seed,
            "created_unix": created,
            "version": env!("CARGO_PKG_VERSION"),
            "outputs": self.files,
        });
        let p = self.dir.join(format!("meta_{}.json", self.command));
        std::fs::write(&p, format!("{meta:#}\n")).with_context(|| format!("writing {}", p.display())).class(ExitClass::Io)
    }
}

fn collection_paths(cfg: &RunConfig) -> CollectionPaths {
    let mut codes: Vec<PathBuf> =
        ["codes.csv", "ai_codes.csv"].iter().map(|n| cfg.input.join(n)).filter(|p| p.exists()).collect();
    for c in &cfg.codes {
        if !codes.contains(c) {
            codes.push(c.clone());
        }
    }
    let themes = Some(cfg.input.join("themes.csv")).filter(|p| p.exists());
    CollectionPaths { documents: cfg.input.join("documents.jsonl"), codes, themes }
}

fn load(cfg: &RunConfig) -> anyhow::Result<Collection> {
    load_collection(&collection_paths(cfg)).tagged()
}

fn config_err(msg: String) -> anyhow::Error {
    anyhow!(msg).context(ExitClass::Config)
}

fn data_err(msg: String) -> anyhow::Error {
    anyhow!(msg).context(ExitClass::Data)
}

pub fn synth(cfg: &RunConfig, args: SynthArgs) -> anyhow::Result<()> {
    let seed = cfg.require_seed("synth")?;
    let mut out = Outputs::new(cfg, "synth")?;
    match args.kind {
        SynthKind::Articles => {
            let s = synth_articles(&ArticleConfig::new(args.n.unwrap_or(200), seed)).tagged()?;
            let paths = CollectionPaths {
                documents: out.path("documents.jsonl"),
                codes: vec![out.path("codes.csv")],
                themes: Some(out.path("themes.csv")),
            };
            write_collection(&s.collection, &paths).tagged()?;
        }
        SynthKind::Zipf => {
            let mut zc = ZipfCorpusConfig::new(args.n.unwrap_or(2530), seed);
            zc.coder_source = cfg.coder_source.clone();
            let c = zipf_corpus(&zc).tagged()?;
            write_documents(&c.documents, &out.path("documents.jsonl")).tagged()?;
            write_codes(&c, &out.path("codes.csv"), None).tagged()?;
        }
        SynthKind::Experiment => {
            let f = experiment_fixture(&ExperimentConfig::default(), seed).tagged()?;
            f.table.write_csv(&out.path("observations.csv")).tagged()?;
        }
    }
    out.finish(Some(seed))
}

#[derive(Serialize)]
struct SourceSummary {
    source: String,
    instances: usize,
    distinct_codes: usize,
    mean_fecundity: f64,
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let c = load(cfg)?;
    let mut out = Outputs::new(cfg, "ingest")?;
    let mut rows = String::from("doc_id,coder_source,text_length,unique_weight,fecundity\n");
    let mut sources = Vec::new();
    for source in c.coder_sources() {
        let reports = corpus_fecundity(c.documents.iter(), &source).tagged()?;
        for (d, r) in c.documents.iter().zip(&reports) {
            rows.push_str(&format!("{},{},{},{},{}\n", csv_field(&d.id), source, d.text_length, r.unique_weight, r.fecundity));
        }
        let instances = c.documents.iter().map(|d| d.instances(&source).map_or(0, |i| i.len())).sum();
        let distinct = c.documents.iter().flat_map(|d| d.distinct_codes(&source)).collect::<std::collections::BTreeSet<_>>().len();
        let mean = reports.iter().map(|r| r.fecundity).sum::<f64>() / reports.len().max(1) as f64;
        sources.push(SourceSummary { source, instances, distinct_codes: distinct, mean_fecundity: mean });
    }
    out.text("fecundity.csv", &rows)?;
    out.json(
        "collection_summary.json",
        &serde_json::json!({
            "documents": c.documents.len(),
            "mean_length": c.mean_length(),
            "codebook_size": c.codebook.len(),
            "themes": c.codebook.theme_count(),
            "sources": sources,
        }),
    )?;
    out.finish(cfg.seed)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn code(mut cfg: RunConfig, args: CodeArgs) -> anyhow::Result<()> {
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(c) = args.chain {
        cfg.chain = c;
    }
    if let Some(e) = args.endpoint {
        cfg.remote.endpoint = e;
    }
    if let Some(m) = args.model {
        cfg.remote.model = m;
    }
    let seed = if cfg.backend == "mock" { cfg.require_seed("code")? } else { cfg.seed.unwrap_or(0) };
    let chain = TemplateChain::parse(&cfg.chain)
        .ok_or_else(|| config_err(format!("unknown template chain `{}` (available: fewshot, round1, socratic)", cfg.chain)))?;
    let backend = backends(seed, cfg.remote.clone()).get(&cfg.backend).class(ExitClass::Config)?;

    let docs_path = cfg.input.join("documents.jsonl");
    let docs = read_documents(&docs_path).tagged()?;
    let articles: Vec<RawArticle> = docs
        .iter()
        .map(|d| match &d.text {
            Some(t) => Ok(RawArticle { id: d.id.clone(), full_text: t.clone(), source_label: d.source_label.clone() }),
            None => Err(data_err(format!("{}: document `{}` has no text to code", docs_path.display(), d.id))),
        })
        .collect::<anyhow::Result<_>>()?;

    let clusters = match (&args.clusters, &args.exemplars) {
        (Some(c), Some(e)) => Some(ClusterContext::load(c, e).tagged()?),
        (None, None) => None,
        _ => return Err(config_err("--clusters and --exemplars must be given together".into())),
    };
    let summaries = args.summaries.as_deref().map(read_summaries).transpose().tagged()?.unwrap_or_default();
    let fallback: HashMap<&str, String> =
        articles.iter().map(|a| (a.id.as_str(), fallback_summary(&a.full_text, 400))).collect();

    let passages: Vec<(usize, fecund_core::ingest::Passage)> = articles
        .iter()
        .flat_map(|a| {
            let len = a.full_text.chars().count();
            split_passages(a, cfg.min_passage_len).into_iter().map(move |p| (len, p))
        })
        .collect();
    let contexts: Vec<PassageContext> = passages
        .iter()
        .map(|(len, p)| PassageContext {
            passage: p,
            article_len: *len,
            summary: summaries.get(&p.article_id).map(String::as_str).unwrap_or_else(|| &fallback[p.article_id.as_str()]),
            exemplars: clusters.as_ref().and_then(|c| c.exemplars_for(&p.id())),
        })
        .collect();

    let outcomes = code_passages(&contexts, backend.as_ref(), chain);
    let mut rows = outcome_rows(&outcomes);
    for r in &mut rows {
        r.coder_source = cfg.coder_source.clone();
    }

    let mut out = Outputs::new(&cfg, "code")?;
    write_code_rows(&rows, &out.path("ai_codes.csv")).tagged()?;
    let mut errors = String::from("passage_id,error\n");
    let mut summary = String::from("passage_id,article_id,position,n_codes\n");
    let mut failed = 0;
    for o in &outcomes {
        match &o.responses {
            Ok(_) => summary.push_str(&format!("{},{},{},{}\n", csv_field(&o.passage_id), csv_field(&o.article_id), o.position, o.themes().count())),
            Err(e) => {
                failed += 1;
                errors.push_str(&format!("{},{}\n", csv_field(&o.passage_id), csv_field(&e.to_string())));
            }
        }
    }
    if failed > 0 {
        log::warn!("{failed} of {} passages failed to code; see code_errors.csv", outcomes.len());
    }
    out.text("passages.csv", &summary)?;
    out.text("code_errors.csv", &errors)?;
    out.finish(cfg.seed)
}

fn ranking(name: &str) -> anyhow::Result<Ranking> {
    match name {
        "cost_benefit" => Ok(Ranking::CostBenefit),
        "plain_gain" => Ok(Ranking::PlainGain),
        "best_of_both" => Ok(Ranking::BestOfBoth),
        other => Err(config_err(format!("unknown ranking `{other}` (available: best_of_both, cost_benefit, plain_gain)"))),
    }
}

pub fn select(mut cfg: RunConfig, args: SelectArgs) -> anyhow::Result<()> {
    let seed = cfg.require_seed("select")?;
    if let Some(b) = args.budget_chars {
        cfg.budget_chars = Some(b);
    }
    if let Some(d) = args.budget_docs {
        cfg.budget_docs = d;
        cfg.budget_chars = None;
    }
    if let Some(v) = args.value_function {
        cfg.value_function = v;
    }
    if let Some(s) = args.selector {
        cfg.selector = s;
    }
    let control_docs = args.control_docs.or(cfg.control_docs);
    let vf = value_function(&cfg.value_function).class(ExitClass::Config)?;
    let selector = selectors().get(&cfg.selector).class(ExitClass::Config)?;
    let c = load(&cfg)?;
    let candidates: Vec<&Document> = c.documents.iter().collect();
    let budget = match cfg.budget_chars {
        Some(l) => SelectionBudget::explicit(l).tagged()?,
        None => SelectionBudget::mean_documents(candidates.iter().copied(), cfg.budget_docs),
    };
    let request = SelectionRequest::new(candidates.iter().copied(), budget, vf.clone(), &cfg.coder_source)
        .with_ranking(ranking(&cfg.ranking)?);
    let treatment = selector.select(&request).tagged()?;
    let n_control = control_docs.unwrap_or(treatment.selected_ids.len()).min(candidates.len());
    let control = select_random(&candidates, n_control, seed, vf.as_ref(), &cfg.coder_source).tagged()?;
    let order = interleave_blinded(&treatment, &control, seed.wrapping_add(1));

    let mut out = Outputs::new(&cfg, "select")?;
    out.json(
        "selection.json",
        &serde_json::json!({ "coder_source": cfg.coder_source, "treatment": treatment, "control": control }),
    )?;
    let mut manifest = String::from("position,doc_id\n");
    let mut unblinding = String::from("position,doc_id,arm\n");
    for e in &order.entries {
        manifest.push_str(&format!("{},{}\n", e.position, csv_field(&e.doc_id)));
        unblinding.push_str(&format!("{},{},{}\n", e.position, csv_field(&e.doc_id), e.arm.as_str()));
    }
    out.text("manifest.csv", &manifest)?;
    out.text("unblinding.csv", &unblinding)?;
    out.finish(Some(seed))
}

/// `(position, doc_id, arm)` rows of a manifest or unblinding file, in file order.
fn read_order(path: &Path) -> anyhow::Result<Vec<(usize, String, Option<Arm>)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display())).class(ExitClass::Io)?;
    let headers = r.headers().with_context(|| format!("reading {}", path.display())).class(ExitClass::Data)?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let id_col = col("doc_id").ok_or_else(|| data_err(format!("{}: missing doc_id column", path.display())))?;
    let (pos_col, arm_col) = (col("position"), col("arm"));
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display())).class(ExitClass::Data)?;
        let line = rec.position().map_or(0, |p| p.line());
        let position = match pos_col {
            Some(c) => rec[c].trim().parse().map_err(|_| data_err(format!("{}:{line}: bad position", path.display())))?,
            None => i + 1,
        };
        let arm = match arm_col {
            Some(c) => Some(Arm::parse(rec[c].trim()).ok_or_else(|| data_err(format!("{}:{line}: unknown arm `{}`", path.display(), &rec[c])))?),
            None => None,
        };
        rows.push((position, rec[id_col].to_string(), arm));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}

pub fn saturate(mut cfg: RunConfig, args: SaturateArgs) -> anyhow::Result<()> {
    if !args.regimes.is_empty() {
        cfg.regimes = args.regimes;
    }
    if let Some(i) = args.iterations {
        cfg.bootstrap_iterations = i;
    }
    if let Some(t) = args.hf_threshold {
        cfg.hf_threshold = t;
    }
    let seed = if args.bootstrap { Some(cfg.require_seed("saturate --bootstrap")?) } else { cfg.seed };
    let registry = regimes(cfg.hf_threshold).tagged()?;
    let chosen = cfg.regimes.iter().map(|r| registry.get(r).class(ExitClass::Config)).collect::<anyhow::Result<Vec<_>>>()?;
    let c = load(&cfg)?;

    let docs: Vec<&Document> = match &args.order {
        Some(path) => {
            let want = match args.arm.as_deref() {
                None => None,
                Some("treatment") => Some(Arm::Treatment),
                Some("control") => Some(Arm::Control),
                Some(other) => return Err(config_err(format!("unknown arm `{other}` (available: control, treatment)"))),
            };
            let by_id: HashMap<&str, &Document> = c.documents.iter().map(|d| (d.id.as_str(), d)).collect();
            let mut docs = Vec::new();
            for (_, id, arm) in read_order(path)? {
                if let Some(w) = want {
                    let arm = arm.ok_or_else(|| data_err(format!("{}: --arm needs an arm column", path.display())))?;
                    if arm != w && arm != Arm::Overlap {
                        continue;
                    }
                }
                docs.push(*by_id.get(id.as_str()).ok_or_else(|| data_err(format!("{}: unknown document `{id}`", path.display())))?);
            }
            docs
        }
        None => c.documents.iter().collect(),
    };

    let mut out = Outputs::new(&cfg, "saturate")?;
    for regime in &chosen {
        let name = regime.name();
        let curve = cumulative_curve(&docs, regime.as_ref(), &cfg.human_source, Some(&c.codebook)).tagged()?;
        let stop = detect_stopping(&curve, StoppingRule::default());
        let band = match seed {
            Some(s) if args.bootstrap => {
                let raw = bootstrap_raw(&docs, regime.as_ref(), &cfg.human_source, Some(&c.codebook), cfg.bootstrap_iterations, s)
                    .tagged()?;
                Some(raw.band(name, 0.10))
            }
            _ => None,
        };

        let mut csv = String::from("doc_index,doc_id,cumulative_chars,cumulative_count");
        if band.is_some() {
            csv.push_str(",boot_mean_chars,boot_mean_count,boot_lo95,boot_hi95");
        }
        csv.push('\n');
        for s in &curve.steps {
            csv.push_str(&format!("{},{},{},{}", s.doc_index, csv_field(&s.doc_id), s.cumulative_chars, s.cumulative_count));
            if let Some(b) = &band {
                match b.steps.get(s.doc_index - 1) {
                    Some(bs) => csv.push_str(&format!(",{},{},{},{}", bs.mean_x, bs.mean_count, bs.lo95, bs.hi95)),
                    None => csv.push_str(",,,,"),
                }
            }
            csv.push('\n');
        }
        out.text(&format!("curve_{name}.csv"), &csv)?;
        out.json(&format!("stopping_{name}.json"), &stop)?;

        if cfg.plot {
            let mut chart = Chart::new(&format!("Cumulative count ({name})"), "Cumulative characters", "Count").line(
                "observed order",
                curve.steps.iter().map(|s| (s.cumulative_chars as f64, s.cumulative_count as f64)).collect(),
            );
            if let Some(b) = &band {
                chart = chart
                    .band(Band {
                        label: "95% band".into(),
                        xs: b.steps.iter().map(|s| s.mean_x).collect(),
                        lo: b.steps.iter().map(|s| s.lo95).collect(),
                        hi: b.steps.iter().map(|s| s.hi95).collect(),
                    })
                    .line("bootstrap mean", b.steps.iter().map(|s| (s.mean_x, s.mean_count)).collect());
            }
            out.text(&format!("curve_{name}.svg"), &chart.to_svg())?;
        }
    }
    out.finish(seed)
}

/// One row per coded document of an unblinding file, in reading order.
fn observations(c: &Collection, cfg: &RunConfig, unblinding: &Path) -> anyhow::Result<(DataTable, Vec<String>)> {
    let order = read_order(unblinding)?;
    let by_id: HashMap<&str, &Document> = c.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut coded = Vec::new();
    let mut arms = Vec::new();
    for (pos, id, arm) in &order {
        let d = by_id.get(id.as_str()).ok_or_else(|| data_err(format!("{}: unknown document `{id}`", unblinding.display())))?;
        let arm = arm.ok_or_else(|| data_err(format!("{}: missing arm column", unblinding.display())))?;
        coded.push(*d);
        arms.push((*pos, arm));
    }
    let human = corpus_fecundity(coded.iter().copied(), &cfg.human_source).tagged()?;
    let ai_all: BTreeMap<String, f64> = corpus_fecundity(c.documents.iter(), &cfg.coder_source)
        .tagged()?
        .into_iter()
        .map(|r| (r.document_id, r.fecundity))
        .collect();
    let n = coded.len();
    let col = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
    let table = DataTable::new()
        .with_column(FECUNDITY, col(&|i| human[i].fecundity))
        .and_then(|t| t.with_column(AI_SELECTED, col(&|i| (arms[i].1 != Arm::Control) as u8 as f64)))
        .and_then(|t| t.with_column(OVERLAP, col(&|i| (arms[i].1 == Arm::Overlap) as u8 as f64)))
        .and_then(|t| t.with_column(OLD_RANDOM, vec![0.0; n]))
        .and_then(|t| t.with_column(INDEX, col(&|i| arms[i].0 as f64)))
        .and_then(|t| t.with_column(ROUND, vec![1.0; n]))
        .and_then(|t| t.with_column(LENGTH, col(&|i| coded[i].text_length as f64)))
        .and_then(|t| t.with_column(AI_DENSITY, col(&|i| ai_all[&coded[i].id])))
        .tagged()?;
    Ok((table, coded.iter().map(|d| d.id.clone()).collect()))
}

fn write_table(out: &mut Outputs, stem: &str, table: &RegressionTable) -> anyhow::Result<()> {
    out.text(&format!("{stem}.txt"), &table.render_text())?;
    out.text(&format!("{stem}_coefficients.csv"), &table.coefficients_csv())?;
    out.text(&format!("{stem}_summary.csv"), &table.summary_csv())
}

pub fn analyze(mut cfg: RunConfig, args: AnalyzeArgs) -> anyhow::Result<()> {
    cfg.robust |= args.robust;
    let mut out = Outputs::new(&cfg, "analyze")?;
    let (data, coded) = match &args.observations {
        Some(p) => (DataTable::read_csv(p).tagged()?, None),
        None => {
            let c = load(&cfg)?;
            let unblinding = args.unblinding.clone().unwrap_or_else(|| cfg.input.join("unblinding.csv"));
            let (t, ids) = observations(&c, &cfg, &unblinding)?;
            (t, Some((c, ids)))
        }
    };
    data.write_csv(&out.path("observations.csv")).tagged()?;

    write_table(&mut out, "treatment_table", &treatment_table(&data, cfg.robust))?;
    write_table(&mut out, "length_table", &length_table(&data, cfg.robust))?;
    match length_residual_check(&data, cfg.robust) {
        Ok(check) => {
            write_table(&mut out, "length_residual_table", &check.table())?;
            out.json(
                "length_residual_stage1.json",
                &serde_json::json!({
                    "r2": check.stage1.r2,
                    "coefficients": check.stage1.coefficients,
                    "residual_dropped": check.residual_dropped,
                }),
            )?;
        }
        Err(e) => {
            log::warn!("length-residual check not estimated: {e}");
            out.text("length_residual_table.txt", &format!("not estimated: {e}\n"))?;
        }
    }

    if let Some((c, ids)) = &coded {
        let docs: Vec<&Document> = ids.iter().filter_map(|id| c.get(id)).collect();
        let trend = position_trend(&docs, &cfg.human_source, cfg.trend_window).tagged()?;
        let mut csv = String::from("doc_id,text_length,median_position,moving_average\n");
        for p in &trend {
            csv.push_str(&format!("{},{},{},{}\n", csv_field(&p.doc_id), p.text_length, p.median_position, p.moving_average));
        }
        out.text("position_trend.csv", &csv)?;
        if cfg.plot {
            let chart = Chart::new("Median code position", "Text length", "Relative position")
                .scatter("documents", trend.iter().map(|p| (p.text_length as f64, p.median_position)).collect())
                .line("moving average", trend.iter().map(|p| (p.text_length as f64, p.moving_average)).collect());
            out.text("position_trend.svg", &chart.to_svg())?;
        }
    }
    if cfg.plot {
        let (len, fec, ai) = (data.column(LENGTH), data.column(FECUNDITY), data.column(AI_SELECTED));
        if let (Some(len), Some(fec), Some(ai)) = (len, fec, ai) {
            let pts = |arm: f64| -> Vec<(f64, f64)> {
                (0..len.len()).filter(|&i| ai[i] == arm).map(|i| (len[i], fec[i])).collect()
            };
            let chart = Chart::new("Fecundity and length", "Text length", "Fecundity")
                .scatter("random", pts(0.0))
                .scatter("AI-selected", pts(1.0));
            out.text("fecundity_vs_length.svg", &chart.to_svg())?;
        }
    }
    out.finish(cfg.seed)
}

fn parse_sizes(items: &[String]) -> anyhow::Result<Vec<SubsetSize>> {
    items
        .iter()
        .map(|s| match s.trim() {
            "full" => Ok(SubsetSize::Full),
            n => n.parse().map(SubsetSize::Count).map_err(|_| config_err(format!("bad subset size `{n}`"))),
        })
        .collect()
}

fn parse_map(s: &str) -> anyhow::Result<QuadraticMap> {
    if s == "identity" {
        return Ok(QuadraticMap::IDENTITY);
    }
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| config_err(format!("bad map `{s}`")))?;
    match v[..] {
        [a, b, c] => Ok(QuadraticMap { a, b, c }),
        _ => bail!(config_err(format!("map needs three coefficients, got `{s}`"))),
    }
}

pub fn sweep(mut cfg: RunConfig, args: SweepArgs) -> anyhow::Result<()> {
    let seed = cfg.require_seed("sweep")?;
    if let Some(s) = &args.sizes {
        cfg.sizes = s.split(',').map(str::to_string).collect();
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    let map = match (&args.map, &args.observations) {
        (Some(m), _) => parse_map(m)?,
        (None, Some(p)) => {
            let t = DataTable::read_csv(p).tagged()?;
            let (x, y) = match (t.column(AI_DENSITY), t.column(FECUNDITY)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(data_err(format!("{}: needs ai_density and fecundity columns", p.display()))),
            };
            fit_quadratic(&x.iter().copied().zip(y.iter().copied()).collect::<Vec<_>>()).tagged()?
        }
        (None, None) => QuadraticMap::IDENTITY,
    };
    let vf = value_function(&cfg.value_function).class(ExitClass::Config)?;
    let mut sc = SweepConfig::new(seed, vf);
    sc.sizes = parse_sizes(&cfg.sizes)?;
    sc.replicates = cfg.replicates;
    sc.budget_docs = cfg.budget_docs.round().max(1.0) as usize;
    sc.ranking = ranking(&cfg.ranking)?;
    let c = load(&cfg)?;
    let docs: Vec<&Document> = c.documents.iter().collect();
    let result = superset_sweep(&docs, &cfg.coder_source, &map, &sc).tagged()?;

    let mut out = Outputs::new(&cfg, "sweep")?;
    out.text("sweep.csv", &result.to_csv())?;
    out.json("sweep.json", &serde_json::json!({ "map": map, "result": result }))?;
    if cfg.plot {
        let chart = Chart::new("Predicted fecundity by superset size", "Superset size", "Normalized %")
            .line("AI selection", result.rows.iter().map(|r| (r.size as f64, r.normalized_pct)).collect())
            .line("random baseline", result.rows.iter().map(|r| (r.size as f64, 100.0)).collect());
        out.text("sweep.svg", &chart.to_svg())?;
    }
    out.finish(Some(seed))
}
