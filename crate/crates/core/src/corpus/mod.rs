//! Ingestion of annotated posts: parsing, cleaning and label derivation.

mod clean;
mod label;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use clean::{
    classifier_text, clean_fragment, clean_post, normalize_repeats, split_qa, squash_whitespace,
    strip_html, tokenize, SEPARATOR,
};
pub use label::{
    derive_label, drop_corrupted_users, handle_missing, indicates_bullying, is_corrupted_userid,
    CORRUPTED_ID_KEEP_THRESHOLD, NO_BULLYING,
};

/// Label of a post containing bullying.
pub const BULLYING: i8 = -1;
/// Label of a post without bullying.
pub const NOT_BULLYING: i8 = 1;

pub const COLUMNS: [&str; 12] = [
    "userid", "asker", "post", "ans1", "severity1", "bully1", "ans2", "severity2", "bully2",
    "ans3", "severity3", "bully3",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("input has no header line")]
    NoHeader,
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("corpus file line {line}: {reason}")]
    CorpusLine { line: usize, reason: String },
}

/// One annotated post as read from the delimited input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawRecord {
    /// Zero-based data row ordinal in the source file.
    pub row: u64,
    pub userid: String,
    pub asker: String,
    pub post: String,
    pub ans: [Option<String>; 3],
    pub severity: [Option<u8>; 3],
    pub bully: [Option<String>; 3],
}

/// A cleaned post with its derived label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub record_id: u64,
    pub label: i8,
    pub question: String,
    pub answer: String,
}

impl CleanRecord {
    /// The single input text fed to the classifier.
    pub fn text(&self) -> String {
        classifier_text(&self.question, &self.answer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<CleanRecord>,
    /// Hex SHA-256 of the bytes the corpus was built from.
    pub provenance: String,
}

impl Corpus {
    pub fn new(records: Vec<CleanRecord>, provenance: impl Into<String>) -> Self {
        Self {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(not bullying, bullying)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let neg = self.records.iter().filter(|r| r.label == BULLYING).count();
        (self.records.len() - neg, neg)
    }

    /// Subset with the same provenance.
    pub fn subset(&self, records: Vec<CleanRecord>) -> Corpus {
        Corpus::new(records, self.provenance.clone())
    }

    /// Canonical line-delimited serialization: one JSON object per record.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("records serialize");
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_canonical_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    /// Reads a canonical corpus file; provenance becomes the file digest.
    pub fn read(path: &Path) -> Result<Corpus, CorpusError> {
        let bytes = fs::read(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_canonical_bytes(&bytes)
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Corpus, CorpusError> {
        let mut records: Vec<CleanRecord> = Vec::new();
        for (i, line) in BufReader::new(bytes).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::CorpusLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| CorpusError::CorpusLine { line: i + 1, reason };
            let rec: CleanRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            if rec.label != BULLYING && rec.label != NOT_BULLYING {
                return Err(bad(format!("label {} is not -1 or +1", rec.label)));
            }
            if let Some(prev) = records.last() {
                if rec.record_id <= prev.record_id {
                    return Err(bad(format!(
                        "record_id {} not greater than previous {}",
                        rec.record_id, prev.record_id
                    )));
                }
            }
            records.push(rec);
        }
        Ok(Corpus::new(records, sha256_hex(bytes)))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Column separator of the delimited input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Tab when the header line contains a tab, comma otherwise.
    #[default]
    Auto,
    Comma,
    Tab,
}

impl Delimiter {
    fn resolve(self, header_line: &[u8]) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
            Delimiter::Auto if header_line.contains(&b'\t') => b'\t',
            Delimiter::Auto => b',',
        }
    }
}

/// A data row that could not be turned into a [`RawRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// Zero-based data row ordinal.
    pub row: u64,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}: {}", self.row, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawRecord>,
    pub errors: Vec<RowError>,
}

pub fn parse_dataset(path: &Path, delimiter: Delimiter) -> Result<ParseOutcome, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset_bytes(&bytes, delimiter)
}

fn optional(cell: &str) -> Option<String> {
    let t = cell.trim();
    (t != "None" && !t.is_empty()).then(|| cell.to_string())
}

fn parse_severity(cell: &str) -> Result<Option<u8>, String> {
    let t = cell.trim();
    if t == "None" || t.is_empty() {
        return Ok(None);
    }
    let v: i64 = t
        .parse()
        .map_err(|_| format!("severity `{t}` is not an integer"))?;
    if !(0..=10).contains(&v) {
        return Err(format!("severity {v} outside 0..=10"));
    }
    Ok(Some(v as u8))
}

/// Parses delimited bytes whose first line is the header.
///
/// Row-level problems are collected in [`ParseOutcome::errors`] and parsing continues.
pub fn parse_dataset_bytes(bytes: &[u8], delimiter: Delimiter) -> Result<ParseOutcome, CorpusError> {
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    if bytes[..header_end].iter().all(|b| b.is_ascii_whitespace()) {
        return Err(CorpusError::NoHeader);
    }
    let delim = delimiter.resolve(&bytes[..header_end]);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .quoting(delim != b'\t')
        .flexible(true)
        .from_reader(bytes);

    let header: Vec<String> = reader
        .byte_headers()?
        .iter()
        .map(|h| String::from_utf8_lossy(h).trim().trim_start_matches('\u{feff}').to_lowercase())
        .collect();
    let mut idx = [0usize; 12];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))?;
    }

    let mut out = ParseOutcome::default();
    for (row, result) in reader.byte_records().enumerate() {
        let row = row as u64;
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if rec.len() != header.len() {
            out.errors.push(RowError {
                row,
                reason: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
            continue;
        }
        let cell = |c: usize| String::from_utf8_lossy(&rec[idx[c]]).into_owned();
        match build_raw(row, &cell) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.errors.push(RowError { row, reason }),
        }
    }
    Ok(out)
}

fn build_raw(row: u64, cell: &dyn Fn(usize) -> String) -> Result<RawRecord, String> {
    let post = cell(2);
    if post.trim().is_empty() || post.trim() == "None" {
        return Err("empty post".to_string());
    }
    let mut r = RawRecord {
        row,
        userid: cell(0),
        asker: cell(1),
        post,
        ..RawRecord::default()
    };
    for k in 0..3 {
        r.ans[k] = optional(&cell(3 + 3 * k));
        r.severity[k] = parse_severity(&cell(4 + 3 * k))?;
        r.bully[k] = optional(&cell(5 + 3 * k));
    }
    Ok(r)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PreprocessSummary {
    pub rows_in: usize,
    pub row_errors: usize,
    pub dropped_corrupted: usize,
    pub dropped_empty: usize,
    pub records_out: usize,
    pub not_bullying: usize,
    pub bullying: usize,
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows_in={} row_errors={} dropped_corrupted={} dropped_empty={} records_out={} not_bullying={} bullying={}",
            self.rows_in,
            self.row_errors,
            self.dropped_corrupted,
            self.dropped_empty,
            self.records_out,
            self.not_bullying,
            self.bullying
        )
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub corpus: Corpus,
    pub summary: PreprocessSummary,
    pub row_errors: Vec<RowError>,
}

pub fn preprocess(path: &Path, delimiter: Delimiter) -> Result<Preprocessed, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    preprocess_bytes(&bytes, delimiter)
}

/// Parse, fill missing values, drop corrupted users, clean text, derive labels.
pub fn preprocess_bytes(bytes: &[u8], delimiter: Delimiter) -> Result<Preprocessed, CorpusError> {
    let parsed = parse_dataset_bytes(bytes, delimiter)?;
    let rows_in = parsed.records.len() + parsed.errors.len();
    let filled: Vec<RawRecord> = parsed.records.into_iter().map(handle_missing).collect();
    let before = filled.len();
    let kept = drop_corrupted_users(filled);
    let dropped_corrupted = before - kept.len();

    let mut records = Vec::with_capacity(kept.len());
    let mut dropped_empty = 0;
    for raw in &kept {
        let (q, a) = split_qa(&raw.post);
        let question = clean_fragment(&q);
        let answer = clean_fragment(&a);
        if question.is_empty() && answer.is_empty() {
            dropped_empty += 1;
            continue;
        }
        records.push(CleanRecord {
            record_id: raw.row,
            label: derive_label(raw),
            question,
            answer,
        });
    }
    let corpus = Corpus::new(records, sha256_hex(bytes));
    let (not_bullying, bullying) = corpus.class_counts();
    let summary = PreprocessSummary {
        rows_in,
        row_errors: parsed.errors.len(),
        dropped_corrupted,
        dropped_empty,
        records_out: corpus.len(),
        not_bullying,
        bullying,
    };
    Ok(Preprocessed {
        corpus,
        summary,
        row_errors: parsed.errors,
    })
}
