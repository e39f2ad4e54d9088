//! JSONL and JSON file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use lexforge_core::corpus::{count_tokens, CounterConfig, Document, Lang, Source};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A malformed input line, skipped and reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// On-disk document record. `token_count` is filled from the configured
/// counter when missing; `score_error` marks a document the judge could not
/// score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub text: String,
    pub lang: Lang,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_error: Option<String>,
}

impl DocRecord {
    pub fn into_document(self, counter: &CounterConfig) -> Document {
        let token_count = self.token_count.unwrap_or_else(|| count_tokens(&self.text, counter));
        Document { id: self.id, text: self.text, lang: self.lang, source: self.source, token_count, score: self.score }
    }
}

impl From<&Document> for DocRecord {
    fn from(d: &Document) -> Self {
        Self {
            id: d.id.clone(),
            text: d.text.clone(),
            lang: d.lang,
            source: d.source,
            token_count: Some(d.token_count),
            score: d.score,
            rationale: None,
            score_error: None,
        }
    }
}

#[derive(Debug)]
pub struct JsonlRead<T> {
    pub items: Vec<T>,
    pub errors: Vec<LineError>,
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<File, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Open { path: dir.to_path_buf(), source })?;
    }
    File::create(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })
}

/// Parses one JSON value per line. Blank lines are ignored; bad lines are
/// collected with their 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl Read) -> Result<JsonlRead<T>, IoError> {
    let mut out = JsonlRead { items: Vec::new(), errors: Vec::new() };
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.items.push(v),
            Err(e) => out.errors.push(LineError { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlRead<T>, IoError> {
    let read = parse_jsonl(open(path)?)?;
    for e in &read.errors {
        log::warn!("{}:{}: skipped malformed record: {}", path.display(), e.line, e.message);
    }
    Ok(read)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), IoError> {
    let mut w = BufWriter::new(create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_docs(path: &Path, counter: &CounterConfig) -> Result<JsonlRead<Document>, IoError> {
    let raw = read_jsonl::<DocRecord>(path)?;
    Ok(JsonlRead { items: raw.items.into_iter().map(|r| r.into_document(counter)).collect(), errors: raw.errors })
}

pub fn write_docs(path: &Path, docs: &[Document]) -> Result<(), IoError> {
    let records: Vec<DocRecord> = docs.iter().map(DocRecord::from).collect();
    write_jsonl(path, &records)
}
