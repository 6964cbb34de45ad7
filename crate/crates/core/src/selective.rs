//! Selective prediction: ranking quality, coverage/accuracy trade-offs,
//! single-pass uncertainty baselines, and the linear-accessibility
//! diagnostics (threshold accuracy on a 1-D projection, top tokens of a
//! direction under the unembedding).

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::archive::AuxFields;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrace {
    pub trace_id: String,
    /// Higher means more likely correct.
    pub score: f64,
    pub is_correct: bool,
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` via midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let ranks = crate::stats::midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    let u = rank_sum - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub coverage: f64,
    pub accuracy: f64,
    /// Accuracy minus full-coverage accuracy, in percentage points.
    pub delta_pp: f64,
    pub kept: usize,
}

/// Traces ordered by descending score, ties by ascending trace_id.
fn ranked(scored: &[ScoredTrace]) -> Vec<&ScoredTrace> {
    let mut v: Vec<&ScoredTrace> = scored.iter().collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.trace_id.cmp(&b.trace_id)));
    v
}

fn kept_count(q: f64, n: usize) -> usize {
    // ⌈q·n⌉ computed with a small guard against 0.6·1000 = 600.0000000001
    let raw = q * n as f64;
    let k = libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize;
    k.clamp(1, n)
}

pub fn coverage_curve(scored: &[ScoredTrace], grid: &[f64]) -> Result<Vec<CoveragePoint>> {
    if scored.is_empty() {
        return Err(Error::InsufficientData("coverage curve needs at least one trace"));
    }
    if let Some(q) = grid.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(Error::invalid(alloc::format!("coverage {q} outside (0, 1]")));
    }
    if scored.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let order = ranked(scored);
    let n = scored.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for t in &order {
        prefix.push(prefix.last().unwrap() + usize::from(t.is_correct));
    }
    let base = prefix[n] as f64 / n as f64;
    Ok(grid
        .iter()
        .map(|&q| {
            let k = kept_count(q, n);
            let accuracy = prefix[k] as f64 / k as f64;
            CoveragePoint {
                coverage: q,
                accuracy,
                delta_pp: 100.0 * (accuracy - base),
                kept: k,
            }
        })
        .collect())
}

pub fn accuracy_at_coverage(scored: &[ScoredTrace], q: f64) -> Result<CoveragePoint> {
    Ok(coverage_curve(scored, &[q])?[0])
}

/// `0.1, 0.2, …, 1.0`.
pub fn default_coverage_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub neg_entropy: Option<f64>,
    pub max_prob: Option<f64>,
    pub logit_margin: Option<f64>,
    pub hidden_norm: Option<f64>,
    /// Baselines that could not be computed from the inputs.
    pub missing: Vec<String>,
}

const PROB_SUM_TOL: f64 = 1e-3;

/// Single-pass uncertainty scores. Values recorded by the extractor are
/// passed through; otherwise they are derived from the option distribution.
pub fn baselines(aux: Option<&AuxFields>, hidden: Option<&[f64]>) -> Result<BaselineScores> {
    let mut out = BaselineScores::default();
    let probs = aux.and_then(|a| a.option_probs.as_deref());
    let mut sorted: Option<Vec<f64>> = None;
    if let Some(p) = probs {
        if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::validation("option_probs", "probabilities must be non-negative"));
        }
        let s: f64 = p.iter().sum();
        if libm::fabs(s - 1.0) > PROB_SUM_TOL {
            return Err(Error::validation(
                "option_probs",
                alloc::format!("probabilities sum to {s}"),
            ));
        }
        out.neg_entropy = Some(p.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log(x)).sum());
        let mut v = p.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        sorted = Some(v);
    } else if let Some(h) = aux.and_then(|a| a.entropy) {
        out.neg_entropy = Some(-h);
    }
    out.max_prob = aux
        .and_then(|a| a.max_prob)
        .or_else(|| sorted.as_ref().map(|v| v[0]));
    out.logit_margin = aux
        .and_then(|a| a.logit_margin)
        .or_else(|| sorted.as_ref().map(|v| v[0] - v.get(1).copied().unwrap_or(0.0)));
    out.hidden_norm = hidden.map(norm).or_else(|| aux.and_then(|a| a.hidden_norm));
    for (present, name) in [
        (out.neg_entropy.is_some(), "neg_entropy"),
        (out.max_prob.is_some(), "max_prob"),
        (out.logit_margin.is_some(), "logit_margin"),
        (out.hidden_norm.is_some(), "hidden_norm"),
    ] {
        if !present {
            out.missing.push(name.into());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub threshold: f64,
    /// `true`: predict positive when projection > threshold.
    pub positive_above: bool,
    pub accuracy: f64,
}

impl Threshold {
    pub fn predict(&self, x: f64) -> bool {
        (x > self.threshold) == self.positive_above
    }
}

/// Best accuracy over all midpoint thresholds (plus the two constant
/// classifiers) in both orientations. Earliest threshold wins ties.
pub fn best_threshold(projections: &[f64], labels: &[bool]) -> Result<Threshold> {
    if projections.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: projections.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n = labels.len();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]));
    // positives at or below the cut, scanning cuts between unique values
    let first = projections[order[0]];
    let mut best = Threshold {
        threshold: first - 1.0,
        positive_above: n_pos * 2 >= n,
        accuracy: n_pos.max(n - n_pos) as f64 / n as f64,
    };
    let mut pos_below = 0usize;
    let mut i = 0;
    while i < n {
        let v = projections[order[i]];
        while i < n && projections[order[i]] == v {
            pos_below += usize::from(labels[order[i]]);
            i += 1;
        }
        if i == n {
            break;
        }
        let t = 0.5 * (v + projections[order[i]]);
        let neg_below = i - pos_below;
        let pos_above = n_pos - pos_below;
        let above = (pos_above + neg_below) as f64 / n as f64;
        let below = 1.0 - above;
        if above > best.accuracy {
            best = Threshold { threshold: t, positive_above: true, accuracy: above };
        }
        if below > best.accuracy {
            best = Threshold { threshold: t, positive_above: false, accuracy: below };
        }
    }
    Ok(best)
}

/// In-sample threshold accuracy of `states` projected on `direction`.
pub fn lap_a_lin(states: &Matrix, labels: &[bool], direction: &[f64]) -> Result<f64> {
    let proj = states.matvec(direction)?;
    Ok(best_threshold(&proj, labels)?.accuracy)
}

/// Threshold chosen on one split, accuracy reported on the other.
pub fn lap_a_lin_heldout(
    train: &Matrix,
    train_labels: &[bool],
    test: &Matrix,
    test_labels: &[bool],
    direction: &[f64],
) -> Result<f64> {
    let t = best_threshold(&train.matvec(direction)?, train_labels)?;
    let proj = test.matvec(direction)?;
    if proj.is_empty() {
        return Err(Error::InsufficientData("empty evaluation split"));
    }
    let hits = proj.iter().zip(test_labels).filter(|(x, l)| t.predict(**x) == **l).count();
    Ok(hits as f64 / proj.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedToken {
    pub index: usize,
    pub token: String,
    pub score: f64,
}

/// Top `k` rows of the unembedding by inner product with `direction`.
/// Ties go to the lower token index.
pub fn lap_top_tokens(direction: &[f64], unembedding: Option<&Matrix>, vocab: &[String], k: usize) -> Result<Vec<RankedToken>> {
    let w = unembedding.ok_or_else(|| Error::validation("unembedding", "archive has no unembedding matrix"))?;
    if w.cols() != direction.len() {
        return Err(Error::DimensionMismatch {
            expected: w.cols(),
            found: direction.len(),
        });
    }
    let scores: Vec<f64> = w.iter_rows().map(|r| dot(r, direction)).collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(idx
        .into_iter()
        .take(k)
        .map(|i| RankedToken {
            index: i,
            token: vocab.get(i).cloned().unwrap_or_else(|| alloc::format!("<{i}>")),
            score: scores[i],
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapLayer {
    pub layer: usize,
    pub a_lin: f64,
    pub a_mlp: f64,
    pub gap: f64,
    pub top_tokens: Vec<RankedToken>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LapProfile {
    pub layers: Vec<LapLayer>,
}

impl LapProfile {
    pub fn push(&mut self, layer: usize, a_lin: f64, a_mlp: f64, top_tokens: Vec<RankedToken>) {
        self.layers.push(LapLayer {
            layer,
            a_lin,
            a_mlp,
            gap: a_mlp - a_lin,
            top_tokens,
        });
    }
}
