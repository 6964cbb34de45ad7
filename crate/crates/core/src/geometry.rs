//! Contrastive directions and entanglement diagnostics.
//!
//! A contrastive vector is the unit-normalized difference between the
//! correct-class centroid and a failure-mode centroid. The shared direction
//! is the renormalized mean of the mode vectors; a mode's specificity is the
//! fraction of its squared norm orthogonal to the shared direction. Spread
//! and SNR relate within-class scatter and a steering vector to the
//! centroid gap.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm, normalized, orthonormality_error, sub, Matrix};
use crate::rng::{streams, Rng};

/// Differences at or below this norm are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-8;
const UNIT_TOL: f64 = 1e-6;

/// Named per-layer unit vectors with free-text provenance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    entries: BTreeMap<String, Vec<Vec<f64>>>,
    provenance: BTreeMap<String, String>,
}

impl DirectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a per-layer direction list. Every vector must be unit norm.
    pub fn insert(&mut self, name: &str, per_layer: Vec<Vec<f64>>, provenance: &str) -> Result<()> {
        let dim = per_layer.first().map_or(0, Vec::len);
        for v in &per_layer {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::validation(
                    "direction norm",
                    alloc::format!("{name}: norm {n} is not 1"),
                ));
            }
        }
        self.entries.insert(name.into(), per_layer);
        self.provenance.insert(name.into(), provenance.into());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn layer(&self, name: &str, layer: usize) -> Option<&[f64]> {
        self.entries.get(name)?.get(layer).map(Vec::as_slice)
    }

    pub fn provenance(&self, name: &str) -> Option<&str> {
        self.provenance.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One vector per name, all layers concatenated.
    pub fn stacked(&self, name: &str) -> Option<Vec<f64>> {
        Some(self.entries.get(name)?.concat())
    }
}

/// Per-(group, layer) centroid and within-class standard deviation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub mean: BTreeMap<(String, usize), Vec<f64>>,
    pub sd: BTreeMap<(String, usize), f64>,
}

impl Centroids {
    pub fn insert(&mut self, group: &str, layer: usize, states: &Matrix) -> Result<()> {
        if states.rows() == 0 {
            return Err(Error::InsufficientData("centroid of an empty selection"));
        }
        let mu = states.column_means();
        let sd = total_sd(states, &mu);
        self.mean.insert((group.into(), layer), mu);
        self.sd.insert((group.into(), layer), sd);
        Ok(())
    }

    pub fn get(&self, group: &str, layer: usize) -> Option<(&[f64], f64)> {
        let key = (String::from(group), layer);
        Some((self.mean.get(&key)?.as_slice(), *self.sd.get(&key)?))
    }
}

/// Square root of the total (trace) population variance about `center`.
pub fn total_sd(states: &Matrix, center: &[f64]) -> f64 {
    if states.rows() == 0 {
        return 0.0;
    }
    let ss: f64 = states
        .iter_rows()
        .map(|r| r.iter().zip(center).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum();
    libm::sqrt(ss / states.rows() as f64)
}

/// `(mean_correct − mean_mode) / ‖·‖`.
pub fn contrastive_vector(mean_correct: &[f64], mean_mode: &[f64]) -> Result<Vec<f64>> {
    pairwise_direction(mean_correct, mean_mode)
}

/// `(mean_a − mean_b) / ‖·‖` for an arbitrary class pair.
pub fn pairwise_direction(mean_a: &[f64], mean_b: &[f64]) -> Result<Vec<f64>> {
    if mean_a.len() != mean_b.len() {
        return Err(Error::DimensionMismatch {
            expected: mean_a.len(),
            found: mean_b.len(),
        });
    }
    normalized(&sub(mean_a, mean_b), DEGENERATE_EPS)
        .ok_or(Error::DegenerateDirection("class means coincide"))
}

/// Renormalized arithmetic mean of the given vectors.
pub fn shared_direction<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or(Error::InsufficientData("shared direction needs at least one vector"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        linalg::axpy(&mut acc, 1.0, v);
    }
    let k = vectors.len() as f64;
    acc.iter_mut().for_each(|x| *x /= k);
    normalized(&acc, DEGENERATE_EPS).ok_or(Error::DegenerateDirection("mode vectors cancel"))
}

/// Shared direction over `names`, each stacked across all of its layers.
pub fn shared_direction_stacked(set: &DirectionSet, names: &[&str]) -> Result<Vec<f64>> {
    let stacked = stacked_vectors(set, names)?;
    shared_direction(&stacked)
}

/// Shared direction over `names` at a single layer.
pub fn shared_direction_at_layer(set: &DirectionSet, names: &[&str], layer: usize) -> Result<Vec<f64>> {
    let mut vs = Vec::with_capacity(names.len());
    for n in names {
        vs.push(set.layer(n, layer).ok_or_else(|| Error::invalid(alloc::format!("no direction {n} at layer {layer}")))?);
    }
    shared_direction(&vs)
}

fn stacked_vectors(set: &DirectionSet, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    names
        .iter()
        .map(|n| set.stacked(n).ok_or_else(|| Error::invalid(alloc::format!("no direction named {n}"))))
        .collect()
}

/// `‖v − ⟨v,ŝ⟩ŝ‖² / ‖v‖²` with `ŝ` the unit shared direction; equals
/// `1 − cos²(v, shared)`. Neither argument needs to be pre-normalized.
pub fn specificity_ratio(v: &[f64], shared: &[f64]) -> f64 {
    let vv = dot(v, v);
    let ss = dot(shared, shared);
    if vv == 0.0 || ss == 0.0 {
        return 1.0;
    }
    let c = dot(v, shared);
    let resid = vv - c * c / ss;
    (resid / vv).clamp(0.0, 1.0)
}

/// Per-name specificity against the stacked shared direction.
pub fn stacked_specificity(set: &DirectionSet, names: &[&str]) -> Result<BTreeMap<String, f64>> {
    let stacked = stacked_vectors(set, names)?;
    let shared = shared_direction(&stacked)?;
    Ok(names
        .iter()
        .zip(&stacked)
        .map(|(n, v)| (String::from(*n), specificity_ratio(v, &shared)))
        .collect())
}

/// Average specificity of per-mode contrastive vectors against their
/// shared direction. `labels[i]` is the mode index of row `i`.
pub fn mean_specificity(states: &Matrix, labels: &[usize], n_modes: usize, correct_mean: &[f64]) -> Result<f64> {
    if labels.len() != states.rows() {
        return Err(Error::DimensionMismatch {
            expected: states.rows(),
            found: labels.len(),
        });
    }
    let d = states.cols();
    let mut sums = vec![vec![0.0; d]; n_modes];
    let mut counts = vec![0usize; n_modes];
    for (row, &l) in states.iter_rows().zip(labels) {
        if l >= n_modes {
            return Err(Error::OutOfRange { index: l, limit: n_modes });
        }
        linalg::axpy(&mut sums[l], 1.0, row);
        counts[l] += 1;
    }
    let mut vectors = Vec::with_capacity(n_modes);
    for (s, &c) in sums.iter().zip(&counts) {
        if c == 0 {
            return Err(Error::InsufficientData("a mode has no traces"));
        }
        let mu: Vec<f64> = s.iter().map(|x| x / c as f64).collect();
        vectors.push(contrastive_vector(correct_mean, &mu)?);
    }
    let shared = shared_direction(&vectors)?;
    Ok(vectors.iter().map(|v| specificity_ratio(v, &shared)).sum::<f64>() / n_modes as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub observed: f64,
    pub null: Vec<f64>,
    /// Lower-tail p-value.
    pub p_value: f64,
}

fn distinct_modes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

fn check_modes(labels: &[usize]) -> Result<usize> {
    let n_modes = distinct_modes(labels);
    let mut present = vec![false; n_modes];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InsufficientData("permutation null needs at least two modes"));
    }
    Ok(n_modes)
}

/// The statistic for permutation number `index`: labels shuffled by a
/// generator derived from `(seed, index)`.
pub fn permutation_statistic(
    states: &Matrix,
    labels: &[usize],
    correct_mean: &[f64],
    seed: u64,
    index: u64,
) -> Result<f64> {
    let n_modes = distinct_modes(labels);
    let mut perm = labels.to_vec();
    Rng::derived(seed, streams::PERMUTATION, index).shuffle(&mut perm);
    mean_specificity(states, &perm, n_modes, correct_mean)
}

/// Lower-tail add-one p-value: `(1 + #{null ≤ observed}) / (n + 1)`.
pub fn lower_tail_p(observed: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&x| x <= observed).count();
    (1 + hits) as f64 / (null.len() + 1) as f64
}

/// Permutation null for average specificity: mode labels among the
/// incorrect traces are shuffled `n_perm` times.
pub fn specificity_permutation_null(
    incorrect_states: &Matrix,
    mode_labels: &[usize],
    correct_mean: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<PermutationNull> {
    if n_perm == 0 {
        return Err(Error::invalid("n_perm must be at least 1"));
    }
    let n_modes = check_modes(mode_labels)?;
    let observed = mean_specificity(incorrect_states, mode_labels, n_modes, correct_mean)?;
    let null = (0..n_perm as u64)
        .map(|i| permutation_statistic(incorrect_states, mode_labels, correct_mean, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let p_value = lower_tail_p(observed, &null);
    Ok(PermutationNull { observed, null, p_value })
}

/// Exact permutation distribution over all `n!` orderings of the labels
/// (identity included). The p-value is `#{stat ≤ observed} / n!`.
pub fn specificity_permutation_exhaustive(
    incorrect_states: &Matrix,
    mode_labels: &[usize],
    correct_mean: &[f64],
) -> Result<PermutationNull> {
    let n = mode_labels.len();
    if n > 9 {
        return Err(Error::invalid("exhaustive enumeration limited to 9 traces"));
    }
    let n_modes = check_modes(mode_labels)?;
    let observed = mean_specificity(incorrect_states, mode_labels, n_modes, correct_mean)?;
    let mut perm = mode_labels.to_vec();
    let mut null = Vec::new();
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    null.push(mean_specificity(incorrect_states, &perm, n_modes, correct_mean)?);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            null.push(mean_specificity(incorrect_states, &perm, n_modes, correct_mean)?);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let hits = null.iter().filter(|&&x| x <= observed + 1e-12).count();
    let p_value = hits as f64 / null.len() as f64;
    Ok(PermutationNull { observed, null, p_value })
}

/// `σ_m / ‖μ_correct − μ_mode‖`, with `σ_m` the root of the mode's total
/// variance about its own mean.
pub fn spread_ratio(states_mode: &Matrix, mu_correct: &[f64], mu_mode: &[f64]) -> Result<f64> {
    if states_mode.rows() < 2 {
        return Err(Error::InsufficientData("spread ratio needs at least two rows"));
    }
    let gap = norm(&sub(mu_correct, mu_mode));
    if !(gap > DEGENERATE_EPS) {
        return Err(Error::DegenerateDirection("zero centroid gap"));
    }
    let own = states_mode.column_means();
    Ok(total_sd(states_mode, &own) / gap)
}

/// `|⟨v, gap⟩| / ‖gap‖²`.
pub fn snr(v: &[f64], gap: &[f64]) -> Result<f64> {
    let gg = dot(gap, gap);
    if !(libm::sqrt(gg) > DEGENERATE_EPS) {
        return Err(Error::DegenerateDirection("zero centroid gap"));
    }
    Ok(libm::fabs(dot(v, gap)) / gg)
}

/// Symmetric matrix of pairwise cosines.
pub fn pairwise_cosine<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Matrix> {
    if vectors.len() < 2 {
        return Err(Error::InsufficientData("pairwise cosine needs at least two vectors"));
    }
    let k = vectors.len();
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        m.set(i, i, 1.0);
        for j in (i + 1)..k {
            let c = linalg::cosine(vectors[i].as_ref(), vectors[j].as_ref())
                .ok_or(Error::DegenerateDirection("zero vector in cosine"))?;
            m.set(i, j, c);
            m.set(j, i, c);
        }
    }
    Ok(m)
}

/// Mean of the strictly upper-triangular entries.
pub fn mean_off_diagonal(m: &Matrix) -> f64 {
    let k = m.rows();
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            s += m.get(i, j);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Cosine between `Bᵀu` and `Bᵀv` for an orthonormal basis given as rows.
pub fn subspace_cosine(u: &[f64], v: &[f64], basis: &Matrix) -> Result<f64> {
    if orthonormality_error(basis) > 1e-6 {
        return Err(Error::invalid("basis rows are not orthonormal"));
    }
    let pu = basis.matvec(u)?;
    let pv = basis.matvec(v)?;
    linalg::cosine(&pu, &pv).ok_or(Error::DegenerateDirection("zero projection onto subspace"))
}

/// Correct-minus-incorrect directions that separate within-question
/// from between-question contrasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WithinBetween {
    /// From questions that have both correct and incorrect traces: the mean
    /// over those questions of (correct mean − incorrect mean).
    pub within: Option<Vec<f64>>,
    /// All-correct question means minus all-incorrect question means.
    pub between: Option<Vec<f64>>,
    pub n_mixed: usize,
    pub n_all_correct: usize,
    pub n_all_incorrect: usize,
}

pub fn within_between_vectors<Q: Ord + Clone>(
    states: &Matrix,
    question: &[Q],
    is_correct: &[bool],
) -> Result<WithinBetween> {
    if question.len() != states.rows() || is_correct.len() != states.rows() {
        return Err(Error::DimensionMismatch {
            expected: states.rows(),
            found: question.len().min(is_correct.len()),
        });
    }
    let d = states.cols();
    let mut groups: BTreeMap<Q, (Vec<f64>, usize, Vec<f64>, usize)> = BTreeMap::new();
    for ((row, q), &c) in states.iter_rows().zip(question).zip(is_correct) {
        let e = groups
            .entry(q.clone())
            .or_insert_with(|| (vec![0.0; d], 0, vec![0.0; d], 0));
        if c {
            linalg::axpy(&mut e.0, 1.0, row);
            e.1 += 1;
        } else {
            linalg::axpy(&mut e.2, 1.0, row);
            e.3 += 1;
        }
    }
    let mut within = vec![0.0; d];
    let mut n_mixed = 0;
    let mut all_c = vec![0.0; d];
    let mut n_c = 0;
    let mut all_i = vec![0.0; d];
    let mut n_i = 0;
    for (sc, nc, si, ni) in groups.values() {
        match (*nc, *ni) {
            (0, 0) => {}
            (0, ni) => {
                linalg::axpy(&mut all_i, 1.0 / ni as f64, si);
                n_i += 1;
            }
            (nc, 0) => {
                linalg::axpy(&mut all_c, 1.0 / nc as f64, sc);
                n_c += 1;
            }
            (nc, ni) => {
                linalg::axpy(&mut within, 1.0 / nc as f64, sc);
                linalg::axpy(&mut within, -1.0 / ni as f64, si);
                n_mixed += 1;
            }
        }
    }
    let within = (n_mixed > 0)
        .then(|| normalized(&within, DEGENERATE_EPS))
        .flatten();
    let between = if n_c > 0 && n_i > 0 {
        let a = linalg::scaled(&all_c, 1.0 / n_c as f64);
        let b = linalg::scaled(&all_i, 1.0 / n_i as f64);
        normalized(&sub(&a, &b), DEGENERATE_EPS)
    } else {
        None
    };
    Ok(WithinBetween {
        within,
        between,
        n_mixed,
        n_all_correct: n_c,
        n_all_incorrect: n_i,
    })
}

/// Mean of `states` after reweighting groups to the target proportions.
/// Groups absent from `target` get weight zero.
pub fn reweighted_mean<G: Ord + Clone>(states: &Matrix, groups: &[G], target: &BTreeMap<G, f64>) -> Result<Vec<f64>> {
    if groups.len() != states.rows() {
        return Err(Error::DimensionMismatch {
            expected: states.rows(),
            found: groups.len(),
        });
    }
    let mut counts: BTreeMap<G, usize> = BTreeMap::new();
    for g in groups {
        *counts.entry(g.clone()).or_default() += 1;
    }
    let total_w: f64 = target
        .iter()
        .filter(|(g, _)| counts.contains_key(*g))
        .map(|(_, w)| *w)
        .sum();
    if !(total_w > 0.0) {
        return Err(Error::InsufficientData("no target group is present"));
    }
    let mut acc = vec![0.0; states.cols()];
    for (row, g) in states.iter_rows().zip(groups) {
        if let Some(w) = target.get(g) {
            let per_row = w / total_w / counts[g] as f64;
            linalg::axpy(&mut acc, per_row, row);
        }
    }
    Ok(acc)
}
