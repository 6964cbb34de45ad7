//! Archive directories and the traces JSON-lines input.
//!
//! Layout of an archive directory:
//!
//! ```text
//! manifest.json     ArchiveManifest, UTF-8 JSON
//! activations.bin   f32 little-endian, [trace][layer][dim]
//! records.jsonl     one TraceRecord per line
//! unembedding.bin   optional, f32 little-endian, [vocab][dim]
//! vocab.txt         optional, one token per line
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use entangle_core::archive::{ActivationArchive, ArchiveManifest, Mode, TraceRecord};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const ACTIVATIONS: &str = "activations.bin";
pub const RECORDS: &str = "records.jsonl";
pub const UNEMBEDDING: &str = "unembedding.bin";
pub const VOCAB: &str = "vocab.txt";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("missing file {0}")]
    Missing(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] entangle_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IoError::Missing(path.to_path_buf())
        } else {
            IoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn byte_length_error(what: &str, expected: usize, found: u64) -> IoError {
    IoError::Core(entangle_core::Error::Validation {
        field: what.into(),
        message: format!("expected {expected} bytes, file holds {found}"),
    })
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes a little-endian f32 blob; the length must be a multiple of 4.
pub fn f32_from_le_bytes(bytes: &[u8]) -> Option<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `archive` into `dir`, creating it if needed. The archive is
/// validated first, so an invalid archive never reaches disk.
pub fn write_archive(archive: &ActivationArchive, dir: &Path) -> Result<()> {
    archive.validate()?;
    if let Some(vocab) = &archive.vocab {
        if let Some(bad) = vocab.iter().find(|t| t.contains('\n')) {
            return Err(IoError::Core(entangle_core::Error::Validation {
                field: "vocab".into(),
                message: format!("token {bad:?} contains a newline"),
            }));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = serde_json::to_vec_pretty(&archive.manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST), &manifest)?;
    write_file(&dir.join(ACTIVATIONS), &f32_to_le_bytes(&archive.tensor))?;

    let path = dir.join(RECORDS);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for r in &archive.records {
        serde_json::to_writer(&mut w, r).expect("record serializes");
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    for stale in [UNEMBEDDING, VOCAB] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    if let Some(u) = &archive.unembedding {
        write_file(&dir.join(UNEMBEDDING), &f32_to_le_bytes(u))?;
    }
    if let Some(vocab) = &archive.vocab {
        let mut text = String::new();
        for t in vocab {
            text.push_str(t);
            text.push('\n');
        }
        write_file(&dir.join(VOCAB), text.as_bytes())?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<ArchiveManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path, line: 1, source })
}

fn read_blob(path: &Path, field: &str, expected: Option<usize>) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if let Some(n) = expected {
        if bytes.len() != n {
            return Err(byte_length_error(field, n, bytes.len() as u64));
        }
    }
    f32_from_le_bytes(&bytes).ok_or_else(|| IoError::Format {
        path: path.to_path_buf(),
        message: format!("{} bytes is not a whole number of f32 values", bytes.len()),
    })
}

pub fn read_records(path: &Path) -> Result<Vec<TraceRecord>> {
    read_jsonl(path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(v);
    }
    Ok(out)
}

fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut tokens: Vec<String> = text.split('\n').map(str::to_owned).collect();
    // the writer terminates every token, so the last piece is empty
    if tokens.last().is_some_and(String::is_empty) {
        tokens.pop();
    }
    Ok(tokens)
}

/// Reads and fully validates an archive directory. Manifest checks (dtype,
/// layout, schema) run before any blob is touched.
pub fn read_archive(dir: &Path) -> Result<ActivationArchive> {
    let manifest = read_manifest(dir)?;
    manifest.validate()?;
    let tensor = read_blob(&dir.join(ACTIVATIONS), "tensor byte length", Some(manifest.tensor_byte_len()))?;
    let records = read_records(&dir.join(RECORDS))?;

    let u_path = dir.join(UNEMBEDDING);
    let v_path = dir.join(VOCAB);
    let vocab = if v_path.exists() { Some(read_vocab(&v_path)?) } else { None };
    let unembedding = if u_path.exists() {
        let expected = vocab.as_ref().map(|v| v.len() * manifest.hidden_dim * 4);
        Some(read_blob(&u_path, "unembedding", expected)?)
    } else {
        None
    };
    let archive = ActivationArchive {
        manifest,
        tensor,
        records,
        unembedding,
        vocab,
    };
    archive.validate()?;
    Ok(archive)
}

/// One line of the traces JSON-lines file consumed by the extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceInput {
    pub question: String,
    pub response: String,
    pub question_id: String,
    pub trace_id: String,
    pub is_correct: bool,
    pub mode: String,
    pub answer: String,
    pub correct_answer: String,
    pub n_tokens: u32,
}

fn single_letter(s: &str, field: &str, trace: &str) -> entangle_core::Result<char> {
    let mut it = s.trim().chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(entangle_core::Error::Validation {
            field: field.into(),
            message: format!("trace {trace}: expected one option letter, found {s:?}"),
        }),
    }
}

impl TraceInput {
    /// Label-only record (no hidden states, no aux fields).
    pub fn to_record(&self) -> entangle_core::Result<TraceRecord> {
        let mode = Mode::parse(&self.mode).ok_or_else(|| entangle_core::Error::Validation {
            field: "mode".into(),
            message: format!("trace {}: unknown mode {:?}", self.trace_id, self.mode),
        })?;
        let r = TraceRecord {
            trace_id: self.trace_id.clone(),
            question_id: self.question_id.clone(),
            mode,
            is_correct: self.is_correct,
            n_tokens: self.n_tokens,
            answer: single_letter(&self.answer, "answer", &self.trace_id)?,
            correct_answer: single_letter(&self.correct_answer, "correct_answer", &self.trace_id)?,
            aux: None,
        };
        r.validate()?;
        Ok(r)
    }
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceInput>> {
    read_jsonl(path)
}

/// Reads a traces file straight into validated records.
pub fn read_trace_records(path: &Path) -> Result<Vec<TraceRecord>> {
    let traces = read_traces(path)?;
    let mut out = Vec::with_capacity(traces.len());
    for t in &traces {
        out.push(t.to_record()?);
    }
    Ok(out)
}
