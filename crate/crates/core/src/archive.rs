//! In-memory activation archives: manifest, per-trace records and the
//! trace-major `f32` tensor, with validation, layer slicing and
//! question-disjoint fold assignment.
//!
//! Reading and writing the on-disk directory format is done by the
//! `entangle` crate; this module owns the invariants.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{streams, Rng};

pub const DTYPE_F32LE: &str = "f32le";
pub const LAYOUT_TRACE_MAJOR: &str = "trace-major [trace][layer][dim]";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    #[serde(rename = "last-token")]
    LastToken,
    #[serde(rename = "prompt-end")]
    PromptEnd,
}

/// Trace-level behavioral label carried by archives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "RCB")]
    Rcb,
    #[serde(rename = "OT")]
    Ot,
    #[serde(rename = "correct")]
    Correct,
    #[serde(rename = "unclear")]
    Unclear,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Kd, Mode::Rcb, Mode::Ot, Mode::Correct, Mode::Unclear];
    /// Failure modes with semantic meaning (excludes `correct` and `unclear`).
    pub const FAILURES: [Mode; 3] = [Mode::Kd, Mode::Rcb, Mode::Ot];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Kd => "KD",
            Mode::Rcb => "RCB",
            Mode::Ot => "OT",
            Mode::Correct => "correct",
            Mode::Unclear => "unclear",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.iter().copied().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub n_traces: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub dtype: String,
    pub layout: String,
    pub position: Position,
    pub temperature: f64,
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ArchiveManifest {
    pub fn new(n_traces: usize, n_layers: usize, hidden_dim: usize) -> Self {
        ArchiveManifest {
            n_traces,
            n_layers,
            hidden_dim,
            dtype: DTYPE_F32LE.into(),
            layout: LAYOUT_TRACE_MAJOR.into(),
            position: Position::LastToken,
            temperature: 0.8,
            schema_version: SCHEMA_VERSION,
            notes: Vec::new(),
        }
    }

    pub fn n_values(&self) -> usize {
        self.n_traces * self.n_layers * self.hidden_dim
    }

    pub fn tensor_byte_len(&self) -> usize {
        self.n_values() * 4
    }

    /// Checks the manifest on its own: dtype, layout, schema and shape.
    pub fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_F32LE {
            return Err(Error::UnsupportedDtype(self.dtype.clone()));
        }
        if self.layout != LAYOUT_TRACE_MAJOR {
            return Err(Error::validation(
                "layout",
                format!("expected {LAYOUT_TRACE_MAJOR:?}, found {:?}", self.layout),
            ));
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        for (name, v) in [
            ("n_traces", self.n_traces),
            ("n_layers", self.n_layers),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::validation(name, "must be at least 1"));
            }
        }
        if !self.temperature.is_finite() {
            return Err(Error::validation("temperature", "must be finite"));
        }
        Ok(())
    }
}

/// Optional per-trace uncertainty summaries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_norm: Option<f64>,
    /// Probability over answer options, when the extractor kept it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_probs: Option<Vec<f64>>,
}

impl AuxFields {
    fn validate(&self) -> core::result::Result<(), &'static str> {
        if let Some(p) = self.max_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err("aux.max_prob outside [0, 1]");
            }
        }
        for (v, what) in [
            (self.entropy, "aux.entropy negative"),
            (self.logit_margin, "aux.logit_margin negative"),
            (self.hidden_norm, "aux.hidden_norm negative"),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(what);
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub question_id: String,
    pub mode: Mode,
    pub is_correct: bool,
    pub n_tokens: u32,
    pub answer: char,
    pub correct_answer: char,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxFields>,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<()> {
        if (self.mode == Mode::Correct) != self.is_correct {
            return Err(Error::validation(
                "mode/is_correct",
                format!(
                    "trace {}: mode {} disagrees with is_correct={}",
                    self.trace_id,
                    self.mode.as_str(),
                    self.is_correct
                ),
            ));
        }
        if self.n_tokens == 0 {
            return Err(Error::validation(
                "n_tokens",
                format!("trace {}: n_tokens must be at least 1", self.trace_id),
            ));
        }
        if let Some(aux) = &self.aux {
            aux.validate()
                .map_err(|m| Error::validation("aux", format!("trace {}: {m}", self.trace_id)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationArchive {
    pub manifest: ArchiveManifest,
    /// Trace-major `[trace][layer][dim]` values.
    pub tensor: Vec<f32>,
    pub records: Vec<TraceRecord>,
    /// Row-major `(vocab × hidden_dim)` output projection.
    pub unembedding: Option<Vec<f32>>,
    pub vocab: Option<Vec<String>>,
}

impl ActivationArchive {
    /// Checks every archive invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let m = &self.manifest;
        if self.tensor.len() != m.n_values() {
            return Err(Error::validation(
                "tensor byte length",
                format!(
                    "manifest declares {} bytes, tensor holds {}",
                    m.tensor_byte_len(),
                    self.tensor.len() * 4
                ),
            ));
        }
        if self.records.len() != m.n_traces {
            return Err(Error::validation(
                "records length",
                format!("manifest declares {} traces, found {} records", m.n_traces, self.records.len()),
            ));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.trace_id.as_str()) {
                return Err(Error::validation(
                    "trace_id",
                    format!("duplicate trace_id {}", r.trace_id),
                ));
            }
            r.validate()?;
        }
        match (&self.unembedding, &self.vocab) {
            (Some(u), Some(v)) => {
                if u.len() != v.len() * m.hidden_dim {
                    return Err(Error::validation(
                        "unembedding",
                        format!(
                            "expected {} rows of width {}, found {} values",
                            v.len(),
                            m.hidden_dim,
                            u.len()
                        ),
                    ));
                }
            }
            (Some(_), None) => {
                return Err(Error::validation("vocab", "unembedding present without vocab"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn n_traces(&self) -> usize {
        self.manifest.n_traces
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    /// Hidden state of one trace at one layer.
    pub fn state(&self, trace: usize, layer: usize) -> &[f32] {
        let d = self.hidden_dim();
        let off = (trace * self.n_layers() + layer) * d;
        &self.tensor[off..off + d]
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.n_layers() {
            return Err(Error::OutOfRange {
                index: layer,
                limit: self.n_layers(),
            });
        }
        Ok(())
    }

    /// Rows of the given layer for every trace matching `predicate`, in
    /// record order, plus the matching record indices. An empty selection
    /// is a `0 × hidden_dim` matrix.
    pub fn select<P>(&self, predicate: P, layer: usize) -> Result<(Matrix, Vec<usize>)>
    where
        P: Fn(&TraceRecord) -> bool,
    {
        self.check_layer(layer)?;
        let idx: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| predicate(r))
            .map(|(i, _)| i)
            .collect();
        Ok((self.rows_at(&idx, layer)?, idx))
    }

    /// Hidden states of the given traces at `layer`, as `f64` rows.
    pub fn rows_at(&self, traces: &[usize], layer: usize) -> Result<Matrix> {
        self.check_layer(layer)?;
        let d = self.hidden_dim();
        let mut data = Vec::with_capacity(traces.len() * d);
        for &t in traces {
            if t >= self.n_traces() {
                return Err(Error::OutOfRange {
                    index: t,
                    limit: self.n_traces(),
                });
            }
            data.extend(self.state(t, layer).iter().map(|&x| x as f64));
        }
        Matrix::from_vec(traces.len(), d, data)
    }

    pub fn layer_matrix(&self, layer: usize) -> Result<Matrix> {
        let all: Vec<usize> = (0..self.n_traces()).collect();
        self.rows_at(&all, layer)
    }

    /// Every trace's states concatenated across layers (`n × L·d`).
    pub fn stacked_rows(&self, traces: &[usize]) -> Matrix {
        let w = self.n_layers() * self.hidden_dim();
        let mut data = Vec::with_capacity(traces.len() * w);
        for &t in traces {
            let off = t * w;
            data.extend(self.tensor[off..off + w].iter().map(|&x| x as f64));
        }
        Matrix::from_vec(traces.len(), w, data).expect("shape is consistent by construction")
    }

    /// Unembedding as a `(vocab × hidden_dim)` matrix.
    pub fn unembedding_matrix(&self) -> Option<Matrix> {
        let u = self.unembedding.as_ref()?;
        let d = self.hidden_dim();
        Matrix::from_vec(u.len() / d, d, u.iter().map(|&x| x as f64).collect()).ok()
    }

    pub fn modes_present(&self) -> BTreeSet<Mode> {
        self.records.iter().map(|r| r.mode).collect()
    }
}

/// Splits record indices into `k` folds such that every question's traces
/// land in exactly one fold. Questions are shuffled under `seed` and dealt
/// round-robin, so fold sizes differ by at most one question.
pub fn group_split(records: &[TraceRecord], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let groups: Vec<&str> = records.iter().map(|r| r.question_id.as_str()).collect();
    group_split_by(&groups, k, seed)
}

/// [`group_split`] over arbitrary group keys.
pub fn group_split_by<G: Ord + Clone>(groups: &[G], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("fold count must be at least 2"));
    }
    let mut by_group: BTreeMap<G, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.clone()).or_default().push(i);
    }
    if by_group.len() < k {
        return Err(Error::InsufficientData("fewer distinct groups than folds"));
    }
    let mut keys: Vec<&G> = by_group.keys().collect();
    Rng::derived(seed, streams::FOLDS, 0).shuffle(&mut keys);
    let mut folds = alloc::vec![Vec::new(); k];
    for (i, key) in keys.into_iter().enumerate() {
        folds[i % k].extend_from_slice(&by_group[key]);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
