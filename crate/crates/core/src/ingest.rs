//! Reading and writing coded collections, and splitting raw article text into
//! passages.
//!
//! On-disk layout:
//!
//! * `documents.jsonl`: one `{"id", "text_length", "source", "text"?}` object per line.
//! * `codes.csv`: `doc_id,coder_source,code_label,position` (position optional, in `[0, 1]`).
//! * `themes.csv`: `code_label,theme_label`.
//!
//! Everything is strict UTF-8. Character counts are Unicode scalar values.
//! Every coder source that appears anywhere in the code files is registered on
//! every document, so a document with no rows for a source still "carries" it
//! with an empty instance list.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_model::{CodeInstance, Codebook, Collection, Document, ModelError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: parse error: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: duplicate document id `{id}`")]
    DuplicateId { path: PathBuf, line: u64, id: String },
    #[error("{path}:{line}: code row references unknown document `{doc_id}`")]
    DanglingDocument { path: PathBuf, line: u64, doc_id: String },
    #[error("{path}:{line}: theme map references unknown code `{label}`")]
    DanglingThemeCode { path: PathBuf, line: u64, label: String },
    #[error("{path}:{line}: invalid field: {message}")]
    InvalidField { path: PathBuf, line: u64, message: String },
    #[error("blank code label")]
    BlankCode,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawArticle {
    pub id: String,
    pub full_text: String,
    pub source_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub article_id: String,
    /// Ordinal among the retained passages of the article.
    pub index: usize,
    pub text: String,
    /// Character offsets `(start, end)` into the article text.
    pub char_span: (usize, usize),
}

impl Passage {
    pub fn id(&self) -> String {
        format!("{}#{}", self.article_id, self.index)
    }

    /// Midpoint of the span as a fraction of `article_len` characters.
    pub fn relative_midpoint(&self, article_len: usize) -> f64 {
        let mid = (self.char_span.0 + self.char_span.1) as f64 / 2.0;
        (mid / article_len.max(1) as f64).clamp(0.0, 1.0)
    }
}

/// Splits on `\n` (a trailing `\r` is treated as part of the break) and keeps
/// non-empty segments of at least `min_len` characters.
pub fn split_passages(article: &RawArticle, min_len: usize) -> Vec<Passage> {
    let mut passages = Vec::new();
    let mut segment = String::new();
    let mut seg_start = 0usize;
    let mut seg_len = 0usize;
    let mut pos = 0usize;

    let flush = |segment: &mut String, start: usize, len: usize, passages: &mut Vec<Passage>| {
        let (text, len) = match segment.strip_suffix('\r') {
            Some(t) => (t.to_string(), len - 1),
            None => (std::mem::take(segment), len),
        };
        segment.clear();
        if len > 0 && len >= min_len {
            passages.push(Passage {
                article_id: article.id.clone(),
                index: passages.len(),
                text,
                char_span: (start, start + len),
            });
        }
    };

    for ch in article.full_text.chars() {
        if ch == '\n' {
            flush(&mut segment, seg_start, seg_len, &mut passages);
            seg_start = pos + 1;
            seg_len = 0;
        } else {
            segment.push(ch);
            seg_len += 1;
        }
        pos += 1;
    }
    flush(&mut segment, seg_start, seg_len, &mut passages);
    passages
}

/// Trims, collapses whitespace runs and lowercases.
pub fn canonicalize_code(label: &str) -> Result<String, IngestError> {
    let collapsed = label.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(IngestError::BlankCode);
    }
    Ok(collapsed.to_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectionPaths {
    pub documents: PathBuf,
    pub codes: Vec<PathBuf>,
    pub themes: Option<PathBuf>,
}

impl CollectionPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            documents: dir.join("documents.jsonl"),
            codes: vec![dir.join("codes.csv")],
            themes: Some(dir.join("themes.csv")),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text_length: usize,
    #[serde(default)]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CodeRow {
    pub doc_id: String,
    pub coder_source: String,
    pub code_label: String,
    #[serde(default)]
    pub position: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ThemeRow {
    code_label: String,
    theme_label: String,
}

pub fn read_documents(path: &Path) -> Result<Vec<Document>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| IngestError::Parse { path: path.into(), line: lineno, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = serde_json::from_str(&line)
            .map_err(|e| IngestError::Parse { path: path.into(), line: lineno, message: e.to_string() })?;
        if rec.text_length == 0 {
            return Err(IngestError::InvalidField {
                path: path.into(),
                line: lineno,
                message: format!("document `{}` has text_length 0", rec.id),
            });
        }
        if seen.insert(rec.id.clone(), lineno).is_some() {
            return Err(IngestError::DuplicateId { path: path.into(), line: lineno, id: rec.id });
        }
        let mut doc = Document::new(rec.id, rec.text_length)?;
        doc.source_label = rec.source;
        doc.text = rec.text;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_code_rows(path: &Path) -> Result<Vec<(u64, CodeRow)>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(BufReader::new(file));
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: CodeRow = rec.deserialize(Some(&headers)).map_err(|e| IngestError::Parse {
            path: path.into(),
            line,
            message: e.to_string(),
        })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Parse { path: path.into(), line, message: e.to_string() }
}

/// Loads documents, code files and an optional theme map into a validated
/// [`Collection`].
pub fn load_collection(paths: &CollectionPaths) -> Result<Collection, IngestError> {
    let mut docs = read_documents(&paths.documents)?;
    let index: HashMap<String, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
    let mut codebook = Codebook::new();
    let mut sources = BTreeSet::new();

    for path in &paths.codes {
        for (line, row) in read_code_rows(path)? {
            let &di = index.get(&row.doc_id).ok_or_else(|| IngestError::DanglingDocument {
                path: path.clone(),
                line,
                doc_id: row.doc_id.clone(),
            })?;
            let source = row.coder_source.trim();
            if source.is_empty() {
                return Err(IngestError::InvalidField { path: path.clone(), line, message: "empty coder_source".into() });
            }
            let label = canonicalize_code(&row.code_label).map_err(|_| IngestError::InvalidField {
                path: path.clone(),
                line,
                message: "blank code_label".into(),
            })?;
            if let Some(p) = row.position {
                if !(0.0..=1.0).contains(&p) {
                    return Err(IngestError::InvalidField {
                        path: path.clone(),
                        line,
                        message: format!("position {p} outside [0, 1]"),
                    });
                }
            }
            let code = codebook.intern(&label);
            sources.insert(source.to_string());
            docs[di].codes.entry(source.to_string()).or_default().push(CodeInstance { code, position: row.position });
        }
    }

    for doc in &mut docs {
        for s in &sources {
            doc.codes.entry(s.clone()).or_default();
        }
    }

    if let Some(path) = &paths.themes {
        let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let row: ThemeRow = rec.deserialize(Some(&headers)).map_err(|e| IngestError::Parse {
                path: path.clone(),
                line,
                message: e.to_string(),
            })?;
            let label = canonicalize_code(&row.code_label).map_err(|_| IngestError::InvalidField {
                path: path.clone(),
                line,
                message: "blank code_label".into(),
            })?;
            let theme = row.theme_label.trim();
            if theme.is_empty() {
                return Err(IngestError::InvalidField { path: path.clone(), line, message: "blank theme_label".into() });
            }
            let code = codebook.id_of(&label).ok_or_else(|| IngestError::DanglingThemeCode {
                path: path.clone(),
                line,
                label: label.clone(),
            })?;
            let theme = codebook.intern_theme(theme);
            codebook.map_theme(code, theme)?;
        }
    }

    Ok(Collection::new(docs, codebook)?)
}

/// Writes `collection` using `paths` (all code rows go to the first code path).
pub fn write_collection(collection: &Collection, paths: &CollectionPaths) -> Result<(), IngestError> {
    write_documents(&collection.documents, &paths.documents)?;
    let codes_path = paths.codes.first().ok_or_else(|| IngestError::InvalidField {
        path: PathBuf::new(),
        line: 0,
        message: "no codes path given".into(),
    })?;
    write_codes(collection, codes_path, None)?;
    if let Some(path) = &paths.themes {
        write_themes(&collection.codebook, path)?;
    }
    Ok(())
}

pub fn write_documents(docs: &[Document], path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in docs {
        let rec = DocumentRecord {
            id: d.id.clone(),
            text_length: d.text_length,
            source: d.source_label.clone(),
            text: d.text.clone(),
        };
        let line = serde_json::to_string(&rec).expect("document record serializes");
        writeln!(out, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

/// Writes code rows for every source, or only `only_source` when given.
pub fn write_codes(collection: &Collection, path: &Path, only_source: Option<&str>) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["doc_id", "coder_source", "code_label", "position"])
        .map_err(|e| csv_error(path, e))?;
    for d in &collection.documents {
        for (source, instances) in &d.codes {
            if only_source.is_some_and(|s| s != source) {
                continue;
            }
            for inst in instances {
                let label = collection.codebook.label(inst.code).unwrap_or_default();
                let pos = inst.position.map(|p| p.to_string()).unwrap_or_default();
                w.write_record([d.id.as_str(), source, label, &pos]).map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_code_rows(rows: &[CodeRow], path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["doc_id", "coder_source", "code_label", "position"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let pos = r.position.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([r.doc_id.as_str(), &r.coder_source, &r.code_label, &pos])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_themes(codebook: &Codebook, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["code_label", "theme_label"]).map_err(|e| csv_error(path, e))?;
    for (code, theme) in codebook.theme_pairs() {
        w.write_record([codebook.label(code).unwrap_or_default(), codebook.theme_label(theme).unwrap_or_default()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// Documents that carry text, as raw articles.
pub fn articles(collection: &Collection) -> Vec<RawArticle> {
    collection
        .documents
        .iter()
        .filter_map(|d| {
            d.text.as_ref().map(|t| RawArticle {
                id: d.id.clone(),
                full_text: t.clone(),
                source_label: d.source_label.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(text: &str) -> RawArticle {
        RawArticle { id: "a".into(), full_text: text.into(), source_label: None }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_passages(&article("A\nB"), 0).len(), 2);

        let text = format!("{}\n{}", "x".repeat(99), "y".repeat(150));
        let ps = split_passages(&article(&text), 100);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].char_span, (100, 250));
        assert_eq!(ps[0].index, 0);

        let ps = split_passages(&article(&"z".repeat(300)), 100);
        assert_eq!(ps[0].char_span, (0, 300));
        assert!(split_passages(&article(""), 0).is_empty());
    }

    #[test]
    fn split_handles_crlf_and_multibyte() {
        let ps = split_passages(&article("héllo\r\nwörld"), 0);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].text, "héllo");
        assert_eq!(ps[0].char_span, (0, 5));
        assert_eq!(ps[1].char_span, (7, 12));
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(canonicalize_code("  Refugee  Rights ").unwrap(), "refugee rights");
        assert_eq!(canonicalize_code("UNHCR").unwrap(), "unhcr");
        assert!(matches!(canonicalize_code(""), Err(IngestError::BlankCode)));
        assert!(matches!(canonicalize_code(" \t "), Err(IngestError::BlankCode)));
    }
}
