//! Behavioral regime labeling from cross-trace statistics.
//!
//! A question qualifies when its traces are correct at or above a rate
//! threshold; inside qualifying questions, incorrect traces longer than a
//! token gate are overthinking (OT) traces. Everything else incorrect is
//! non-OT. The module also carries the stability audits (Jaccard across
//! threshold sweeps, within-question purity) and the resampling baselines
//! (majority vote, best-of-N).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::archive::TraceRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub correct_rate_threshold: f64,
    pub length_threshold: u32,
    pub traces_per_question: usize,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            correct_rate_threshold: 0.6,
            length_threshold: 200,
            traces_per_question: 10,
        }
    }
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.correct_rate_threshold > 0.0 && self.correct_rate_threshold < 1.0) {
            return Err(Error::invalid("correct_rate_threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "OT")]
    Ot,
    #[serde(rename = "non-OT-incorrect")]
    NonOtIncorrect,
    #[serde(rename = "correct")]
    Correct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabeling {
    /// One regime per input record, in record order.
    pub regimes: Vec<Regime>,
    /// Per question: qualifies under the rate rule and has at least one OT trace.
    pub ot_flag: BTreeMap<String, bool>,
    pub config: RegimeConfig,
}

impl RegimeLabeling {
    pub fn ot_questions(&self) -> BTreeSet<String> {
        self.ot_flag
            .iter()
            .filter(|(_, &f)| f)
            .map(|(q, _)| q.clone())
            .collect()
    }

    pub fn count(&self, regime: Regime) -> usize {
        self.regimes.iter().filter(|&&r| r == regime).count()
    }
}

/// Whether a question with `correct` of `total` correct traces meets the
/// rate threshold.
pub fn qualifies(correct: usize, total: usize, threshold: f64) -> Result<bool> {
    if total == 0 {
        return Err(Error::InsufficientData("empty question group"));
    }
    // tolerance keeps 6/10 >= 0.6 stable against rounding
    Ok(correct as f64 >= threshold * total as f64 - 1e-9)
}

fn group_by_question(records: &[TraceRecord]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.question_id.as_str()).or_default().push(i);
    }
    groups
}

/// Labels every record. Rates are computed over all traces of the
/// question present in `records`.
pub fn label_regimes(records: &[TraceRecord], config: &RegimeConfig) -> Result<RegimeLabeling> {
    let mut regimes = alloc::vec![Regime::Correct; records.len()];
    let mut ot_flag = BTreeMap::new();
    for (q, idx) in group_by_question(records) {
        let correct = idx.iter().filter(|&&i| records[i].is_correct).count();
        let ok = qualifies(correct, idx.len(), config.correct_rate_threshold)?;
        let mut any_ot = false;
        for &i in &idx {
            let r = &records[i];
            regimes[i] = if r.is_correct {
                Regime::Correct
            } else if ok && r.n_tokens > config.length_threshold {
                any_ot = true;
                Regime::Ot
            } else {
                Regime::NonOtIncorrect
            };
        }
        ot_flag.insert(String::from(q), ok && any_ot);
    }
    Ok(RegimeLabeling {
        regimes,
        ot_flag,
        config: config.clone(),
    })
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets scoring 1.
pub fn jaccard_stability<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub length: u32,
    pub ot_count: usize,
    pub jaccard: f64,
}

/// OT question sets over a grid of thresholds, compared against the
/// labeling produced by `defaults`.
pub fn threshold_sweep(
    records: &[TraceRecord],
    rate_grid: &[f64],
    length_grid: &[u32],
    defaults: &RegimeConfig,
) -> Result<Vec<SweepRow>> {
    if rate_grid.is_empty() || length_grid.is_empty() {
        return Err(Error::invalid("sweep grids must be non-empty"));
    }
    let reference = label_regimes(records, defaults)?.ot_questions();
    let mut rows = Vec::with_capacity(rate_grid.len() * length_grid.len());
    for &rate in rate_grid {
        for &length in length_grid {
            // rates at or beyond 1 are allowed here: nothing below a perfect
            // record qualifies, which is the degenerate end of the sweep
            let cfg = RegimeConfig {
                correct_rate_threshold: rate,
                length_threshold: length,
                traces_per_question: defaults.traces_per_question,
            };
            let set = label_regimes(records, &cfg)?.ot_questions();
            rows.push(SweepRow {
                rate,
                length,
                ot_count: set.len(),
                jaccard: jaccard_stability(&set, &reference),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    /// Per label: fraction of questions containing that label whose
    /// incorrect traces all carry it. `None` when no question has it.
    pub per_label: BTreeMap<String, Option<f64>>,
    /// Fraction of questions (with incorrect traces) that are single-label.
    pub overall: Option<f64>,
}

/// Within-question purity over an arbitrary labeling of incorrect traces.
/// Questions with no incorrect trace are left out of every denominator.
pub fn purity_by<F>(records: &[TraceRecord], label: F) -> Purity
where
    F: Fn(usize) -> Option<String>,
{
    let mut per_label_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut pure_questions = 0usize;
    let mut questions = 0usize;
    for idx in group_by_question(records).values() {
        let labels: BTreeSet<String> = idx
            .iter()
            .filter(|&&i| !records[i].is_correct)
            .filter_map(|&i| label(i))
            .collect();
        if labels.is_empty() {
            continue;
        }
        questions += 1;
        let pure = labels.len() == 1;
        if pure {
            pure_questions += 1;
        }
        for l in labels {
            let e = per_label_hits.entry(l).or_default();
            e.1 += 1;
            if pure {
                e.0 += 1;
            }
        }
    }
    Purity {
        per_label: per_label_hits
            .into_iter()
            .map(|(l, (p, n))| (l, Some(p as f64 / n as f64)))
            .collect(),
        overall: (questions > 0).then(|| pure_questions as f64 / questions as f64),
    }
}

/// Purity of the OT / non-OT split produced by `labeling`.
pub fn within_question_purity(labeling: &RegimeLabeling, records: &[TraceRecord]) -> Result<Purity> {
    if labeling.regimes.len() != records.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            found: labeling.regimes.len(),
        });
    }
    let mut p = purity_by(records, |i| match labeling.regimes[i] {
        Regime::Ot => Some("OT".into()),
        Regime::NonOtIncorrect => Some("non-OT-incorrect".into()),
        Regime::Correct => None,
    });
    for key in ["OT", "non-OT-incorrect"] {
        p.per_label.entry(key.into()).or_insert(None);
    }
    Ok(p)
}

/// Most frequent answer; ties go to the smallest letter.
pub fn majority_vote(answers: &[char]) -> Result<char> {
    if answers.is_empty() {
        return Err(Error::InsufficientData("majority vote over no answers"));
    }
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    for &a in answers {
        *counts.entry(a).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    // BTreeMap iterates in ascending key order
    Ok(counts.into_iter().find(|&(_, c)| c == best).map(|(a, _)| a).unwrap())
}

/// Answer of the highest-scoring trace; the earliest trace wins ties.
pub fn best_of_n(answers: &[char], scores: &[f64]) -> Result<char> {
    if answers.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: answers.len(),
            found: scores.len(),
        });
    }
    if answers.is_empty() {
        return Err(Error::InsufficientData("best-of-N over no traces"));
    }
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(answers[best])
}
