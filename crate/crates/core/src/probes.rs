//! Linear probes: standardize, optionally project onto PCA components, then
//! fit L2-regularized logistic regression. Multiclass probes are
//! one-vs-rest with an argmax over per-class scores.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_solve, dot, gram_schmidt, normalized, sym_eigen, Matrix};
use crate::rng::{streams, Rng};

pub const SCALE_FLOOR: f64 = 1e-8;
pub const ABLATION_DROP_TOL: f64 = 1e-8;
pub const DEFAULT_PCA_COMPONENTS: usize = 50;
/// Feature counts above this use L-BFGS instead of Newton steps.
pub const NEWTON_MAX_FEATURES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Population (1/n) standard deviation, floored. Constant columns get their
/// mean snapped to the shared value so they transform to exact zeros.
pub fn fit_standardizer(x: &Matrix) -> Result<Standardizer> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::InsufficientData("standardizer needs at least two rows"));
    }
    let mut mean = x.column_means();
    let mut scale = vec![0.0; x.cols()];
    for (j, m) in mean.iter_mut().enumerate() {
        let first = x.get(0, j);
        if (1..n).all(|i| x.get(i, j) == first) {
            *m = first;
            scale[j] = 1.0;
            continue;
        }
        let var = (0..n).map(|i| { let t = x.get(i, j) - *m; t * t }).sum::<f64>() / n as f64;
        scale[j] = libm::sqrt(var).max(SCALE_FLOOR);
    }
    Ok(Standardizer { mean, scale })
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// k × d, orthonormal rows.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

/// Top-`k` principal directions of `x`. Uses the covariance eigenproblem
/// when `d ≤ n` and the Gram matrix otherwise. Variances are 1/n.
pub fn fit_pca(x: &Matrix, k: usize) -> Result<PcaBasis> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || k == 0 || k > (n - 1).min(d) {
        return Err(Error::invalid(alloc::format!(
            "PCA needs 1 ≤ k ≤ min(rows−1, cols); got k={k}, rows={n}, cols={d}"
        )));
    }
    let mean = x.column_means();
    let xc = x.center(&mean);
    let nf = n as f64;
    let (values, mut rows): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let mut cov = xc.gram_cols();
        cov.scale(1.0 / nf);
        let eig = sym_eigen(&cov)?;
        let vals = eig.values[..k].to_vec();
        let rows = (0..k).map(|i| eig.vectors.row(i).to_vec()).collect();
        (vals, rows)
    } else {
        let mut g = xc.gram_rows();
        g.scale(1.0 / nf);
        let eig = sym_eigen(&g)?;
        let top = eig.values[0].max(0.0);
        let mut rows = Vec::with_capacity(k);
        for i in 0..k {
            let lam = eig.values[i];
            if lam > 1e-12 * top.max(1e-300) {
                let v = xc.tmatvec(eig.vectors.row(i))?;
                rows.push(v);
            } else {
                rows.push(vec![0.0; d]);
            }
        }
        (eig.values[..k].to_vec(), rows)
    };
    complete_orthonormal(&mut rows, d);
    for r in rows.iter_mut() {
        canonical_sign(r);
    }
    let components = Matrix::from_rows(&rows)?;
    let explained_variance = values.into_iter().map(|v| v.max(0.0)).collect();
    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
    })
}

/// Orthonormalizes `rows` in order; rows that collapse are replaced by
/// standard basis vectors orthogonal to the ones kept.
fn complete_orthonormal(rows: &mut [Vec<f64>], d: usize) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut next_axis = 0usize;
    for r in rows.iter_mut() {
        let mut kept = gram_schmidt_onto(&basis, r);
        while kept.is_none() && next_axis < d {
            let mut e = vec![0.0; d];
            e[next_axis] = 1.0;
            next_axis += 1;
            kept = gram_schmidt_onto(&basis, &e);
        }
        let u = kept.unwrap_or_else(|| vec![0.0; d]);
        *r = u.clone();
        basis.push(u);
    }
}

fn gram_schmidt_onto(basis: &[Vec<f64>], v: &[f64]) -> Option<Vec<f64>> {
    let scale = linalg::norm(v);
    if scale == 0.0 {
        return None;
    }
    let mut r = linalg::scaled(v, 1.0 / scale);
    for _ in 0..2 {
        for q in basis {
            let c = dot(&r, q);
            linalg::axpy(&mut r, -c, q);
        }
    }
    normalized(&r, 1e-6)
}

fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if libm::fabs(*x) > libm::fabs(v[best]) {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let xc = x.center(&self.mean);
        xc.matmul(&self.components.transpose())
    }

    /// Maps scores back to the input space, adding the mean.
    pub fn reconstruct(&self, z: &Matrix) -> Result<Matrix> {
        let mut x = z.matmul(&self.components)?;
        for r in 0..x.rows() {
            linalg::axpy(x.row_mut(r), 1.0, &self.mean);
        }
        Ok(x)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + libm::log1p(libm::exp(-t))
    } else {
        libm::log1p(libm::exp(t))
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

fn signed(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

/// `½‖w‖²/C + Σ log(1 + exp(−ỹ(w·z + b)))`; the bias is not penalized.
pub fn logistic_objective(z: &Matrix, y: &[bool], w: &[f64], b: f64, c: f64) -> f64 {
    let pen = 0.5 * dot(w, w) / c;
    pen + z
        .iter_rows()
        .zip(y)
        .map(|(row, &yi)| softplus(-signed(yi) * (dot(w, row) + b)))
        .sum::<f64>()
}

/// Gradient of [`logistic_objective`] as `(∂w, ∂b)`.
pub fn logistic_gradient(z: &Matrix, y: &[bool], w: &[f64], b: f64, c: f64) -> (Vec<f64>, f64) {
    let mut gw = linalg::scaled(w, 1.0 / c);
    let mut gb = 0.0;
    for (row, &yi) in z.iter_rows().zip(y) {
        let s = signed(yi);
        let coef = -s * sigmoid(-s * (dot(w, row) + b));
        linalg::axpy(&mut gw, coef, row);
        gb += coef;
    }
    (gw, gb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogregConfig {
    pub c: f64,
    pub max_iter: usize,
    /// Stop once `‖∇‖∞ ≤ tol · rows`.
    pub tol: f64,
}

impl Default for LogregConfig {
    fn default() -> Self {
        LogregConfig {
            c: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogregFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogregFit {
    pub fn score(&self, z: &[f64]) -> f64 {
        dot(&self.weights, z) + self.bias
    }
}

/// Packs `(w, b)` as one parameter vector with the bias last.
fn grad_packed(z: &Matrix, y: &[bool], theta: &[f64], c: f64) -> Vec<f64> {
    let p = theta.len() - 1;
    let (mut g, gb) = logistic_gradient(z, y, &theta[..p], theta[p], c);
    g.push(gb);
    g
}

fn obj_packed(z: &Matrix, y: &[bool], theta: &[f64], c: f64) -> f64 {
    let p = theta.len() - 1;
    logistic_objective(z, y, &theta[..p], theta[p], c)
}

/// The objective sums per-row losses, so its gradient's rounding floor
/// grows with the row count; the tolerance is per row.
fn gtol(cfg: &LogregConfig, n: usize) -> f64 {
    cfg.tol * n.max(1) as f64
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(libm::fabs(*x)))
}

pub fn fit_logreg(z: &Matrix, y: &[bool], cfg: &LogregConfig) -> Result<LogregFit> {
    if z.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: z.rows(),
            found: y.len(),
        });
    }
    if z.rows() == 0 {
        return Err(Error::InsufficientData("no training rows"));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::SingleClass);
    }
    if !(cfg.c > 0.0) {
        return Err(Error::invalid("C must be positive"));
    }
    let p = z.cols();
    let theta = vec![0.0; p + 1];
    let (theta, iterations, converged) = if p <= NEWTON_MAX_FEATURES {
        newton(z, y, theta, cfg)?
    } else {
        lbfgs(z, y, theta, cfg)
    };
    Ok(LogregFit {
        weights: theta[..p].to_vec(),
        bias: theta[p],
        iterations,
        converged,
    })
}

/// Backtracking line search satisfying the Armijo condition. Returns the
/// accepted point and its objective, or `None` if no decrease was found.
fn armijo(z: &Matrix, y: &[bool], theta: &[f64], f0: f64, g: &[f64], dir: &[f64], c: f64) -> Option<(Vec<f64>, f64)> {
    let slope = dot(g, dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let cand: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
        let f = obj_packed(z, y, &cand, c);
        if f <= f0 + 1e-4 * step * slope {
            return Some((cand, f));
        }
        step *= 0.5;
    }
    None
}

fn newton(z: &Matrix, y: &[bool], mut theta: Vec<f64>, cfg: &LogregConfig) -> Result<(Vec<f64>, usize, bool)> {
    let p = z.cols();
    let mut f = obj_packed(z, y, &theta, cfg.c);
    for it in 0..cfg.max_iter {
        let g = grad_packed(z, y, &theta, cfg.c);
        if inf_norm(&g) <= gtol(cfg, z.rows()) {
            return Ok((theta, it, true));
        }
        let mut h = Matrix::zeros(p + 1, p + 1);
        for i in 0..p {
            h.set(i, i, 1.0 / cfg.c);
        }
        for row in z.iter_rows() {
            let m = dot(&theta[..p], row) + theta[p];
            let s = sigmoid(m);
            let wgt = s * (1.0 - s);
            if wgt == 0.0 {
                continue;
            }
            for a in 0..p {
                let ra = wgt * row[a];
                for bcol in 0..=a {
                    h.set(a, bcol, h.get(a, bcol) + ra * row[bcol]);
                }
                h.set(p, a, h.get(p, a) + ra);
            }
            h.set(p, p, h.get(p, p) + wgt);
        }
        for a in 0..=p {
            for bcol in (a + 1)..=p {
                h.set(a, bcol, h.get(bcol, a));
            }
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let dir = match cholesky_solve(&h, &neg) {
            Ok(d) => d,
            Err(_) => neg.clone(),
        };
        match armijo(z, y, &theta, f, &g, &dir, cfg.c).or_else(|| armijo(z, y, &theta, f, &g, &neg, cfg.c)) {
            Some((t, fnew)) => {
                theta = t;
                f = fnew;
            }
            None => {
                let done = inf_norm(&g) <= gtol(cfg, z.rows());
                return Ok((theta, it, done));
            }
        }
    }
    let g = grad_packed(z, y, &theta, cfg.c);
    let done = inf_norm(&g) <= gtol(cfg, z.rows());
    Ok((theta, cfg.max_iter, done))
}

fn lbfgs(z: &Matrix, y: &[bool], mut theta: Vec<f64>, cfg: &LogregConfig) -> (Vec<f64>, usize, bool) {
    const MEMORY: usize = 10;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut f = obj_packed(z, y, &theta, cfg.c);
    let mut g = grad_packed(z, y, &theta, cfg.c);
    for it in 0..cfg.max_iter {
        if inf_norm(&g) <= gtol(cfg, z.rows()) {
            return (theta, it, true);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            linalg::axpy(&mut q, -alphas[i], &y_hist[i]);
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = linalg::norm(&g);
            q.iter_mut().for_each(|v| *v /= gn.max(1.0));
        }
        for i in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            linalg::axpy(&mut q, alphas[i] - beta, &s_hist[i]);
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let accepted = armijo(z, y, &theta, f, &g, &dir, cfg.c).or_else(|| {
            s_hist.clear();
            y_hist.clear();
            let sd: Vec<f64> = g.iter().map(|v| -v).collect();
            armijo(z, y, &theta, f, &g, &sd, cfg.c)
        });
        let Some((next, fnext)) = accepted else {
            return (theta, it, false);
        };
        let gnext = grad_packed(z, y, &next, cfg.c);
        let s = linalg::sub(&next, &theta);
        let yv = linalg::sub(&gnext, &g);
        if dot(&s, &yv) > 1e-12 {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        theta = next;
        f = fnext;
        g = gnext;
    }
    let done = inf_norm(&g) <= gtol(cfg, z.rows());
    (theta, cfg.max_iter, done)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub logreg: LogregConfig,
    /// PCA components; `None` skips PCA. Clamped to `min(rows−1, cols)`.
    pub pca_components: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            logreg: LogregConfig::default(),
            pca_components: Some(DEFAULT_PCA_COMPONENTS),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub standardizer: Standardizer,
    pub pca: Option<PcaBasis>,
    pub classes: Vec<String>,
    /// One head for two classes (positive = `classes[1]`), else one per class.
    pub heads: Vec<LogregFit>,
    pub c: f64,
}

/// Fits the full standardize → PCA → logistic pipeline. `labels[i]` indexes
/// into `classes`.
pub fn fit_probe(x: &Matrix, labels: &[usize], classes: &[String], cfg: &ProbeConfig) -> Result<ProbeModel> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: labels.len(),
        });
    }
    let n_classes = classes.len();
    if n_classes < 2 {
        return Err(Error::invalid("a probe needs at least two classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::OutOfRange {
            index: bad,
            limit: n_classes,
        });
    }
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    let standardizer = fit_standardizer(x)?;
    let xs = standardizer.apply(x)?;
    let pca = match cfg.pca_components {
        Some(k) => {
            let k = k.min(x.rows() - 1).min(x.cols());
            Some(fit_pca(&xs, k)?)
        }
        None => None,
    };
    let z = match &pca {
        Some(p) => p.transform(&xs)?,
        None => xs,
    };
    let heads = if n_classes == 2 {
        let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        vec![fit_logreg(&z, &y, &cfg.logreg)?]
    } else {
        let mut hs = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let y: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            hs.push(fit_logreg(&z, &y, &cfg.logreg)?);
        }
        hs
    };
    Ok(ProbeModel {
        standardizer,
        pca,
        classes: classes.to_vec(),
        heads,
        c: cfg.logreg.c,
    })
}

impl ProbeModel {
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let xs = self.standardizer.apply(x)?;
        match &self.pca {
            Some(p) => p.transform(&xs),
            None => Ok(xs),
        }
    }

    /// Per-row head scores (logits).
    pub fn scores(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        let z = self.features(x)?;
        Ok(z.iter_rows().map(|r| self.heads.iter().map(|h| h.score(r)).collect()).collect())
    }

    /// Binary probes: positive-class probability per row.
    pub fn positive_probability(&self, x: &Matrix) -> Result<Vec<f64>> {
        if self.heads.len() != 1 {
            return Err(Error::invalid("positive probability is defined for binary probes"));
        }
        Ok(self.scores(x)?.into_iter().map(|s| sigmoid(s[0])).collect())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let scores = self.scores(x)?;
        Ok(scores
            .into_iter()
            .map(|s| {
                if s.len() == 1 {
                    usize::from(s[0] > 0.0)
                } else {
                    // first index wins ties
                    let mut best = 0;
                    for (i, v) in s.iter().enumerate() {
                        if *v > s[best] {
                            best = i;
                        }
                    }
                    best
                }
            })
            .collect())
    }

    /// Decision function of head `head` folded back to raw inputs:
    /// `score(x) = w_raw·x + b'`.
    pub fn raw_decision(&self, head: usize) -> Result<(Vec<f64>, f64)> {
        let fit = self
            .heads
            .get(head)
            .ok_or(Error::OutOfRange { index: head, limit: self.heads.len() })?;
        let (w_std, mut bias) = match &self.pca {
            Some(p) => {
                let w = p.components.tmatvec(&fit.weights)?;
                (w.clone(), fit.bias - dot(&w, &p.mean))
            }
            None => (fit.weights.clone(), fit.bias),
        };
        let w_raw: Vec<f64> = w_std.iter().zip(&self.standardizer.scale).map(|(w, s)| w / s).collect();
        bias -= dot(&w_raw, &self.standardizer.mean);
        Ok((w_raw, bias))
    }

    /// Unit vector along head `head`'s raw-space weight.
    pub fn direction(&self, head: usize) -> Result<Vec<f64>> {
        let (w, _) = self.raw_decision(head)?;
        normalized(&w, 0.0).ok_or(Error::DegenerateDirection("probe weights are zero"))
    }
}

/// Raw-space unit direction of a binary probe.
pub fn probe_direction(model: &ProbeModel) -> Result<Vec<f64>> {
    model.direction(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Classes without any true examples; excluded from balanced accuracy.
    pub absent_classes: Vec<usize>,
}

pub fn evaluate(predicted: &[usize], truth: &[usize], n_classes: usize) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData("no labels to evaluate"));
    }
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if t >= n_classes {
            return Err(Error::OutOfRange {
                index: t,
                limit: n_classes,
            });
        }
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let mut recalls = Vec::new();
    let mut absent = Vec::new();
    for c in 0..n_classes {
        if totals[c] == 0 {
            absent.push(c);
        } else {
            recalls.push(hits[c] as f64 / totals[c] as f64);
        }
    }
    Ok(Metrics {
        n: truth.len(),
        accuracy: correct as f64 / truth.len() as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        absent_classes: absent,
    })
}

pub fn evaluate_probe(model: &ProbeModel, x: &Matrix, truth: &[usize]) -> Result<Metrics> {
    if x.rows() == 0 {
        return Err(Error::InsufficientData("no rows to evaluate"));
    }
    let pred = model.predict(x)?;
    evaluate(&pred, truth, model.classes.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CvScheme {
    Stratified,
    /// Group key per row; every group stays within one fold.
    Group(Vec<String>),
}

/// Test-fold indices. Each class is shuffled and dealt round-robin, with
/// the dealing offset carried across classes so fold sizes stay balanced.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("fold count must be at least 2"));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0usize;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        Rng::derived(seed, streams::FOLDS, c as u64).shuffle(&mut idx);
        for (j, i) in idx.iter().enumerate() {
            folds[(offset + j) % k].push(*i);
        }
        offset += idx.len();
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

pub fn cv_folds(labels: &[usize], k: usize, scheme: &CvScheme, seed: u64) -> Result<Vec<Vec<usize>>> {
    match scheme {
        CvScheme::Stratified => stratified_folds(labels, k, seed),
        CvScheme::Group(groups) => {
            if groups.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: labels.len(),
                    found: groups.len(),
                });
            }
            crate::archive::group_split_by(groups, k, seed)
        }
    }
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn take(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<Metrics>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_balanced_accuracy: f64,
    pub sd_balanced_accuracy: f64,
}

impl CvResult {
    fn from_folds(folds: Vec<Metrics>) -> Self {
        let (ma, sa) = mean_sd(folds.iter().map(|m| m.accuracy));
        let (mb, sb) = mean_sd(folds.iter().map(|m| m.balanced_accuracy));
        CvResult {
            folds,
            mean_accuracy: ma,
            sd_accuracy: sa,
            mean_balanced_accuracy: mb,
            sd_balanced_accuracy: sb,
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_sd<I: IntoIterator<Item = f64>>(xs: I) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, libm::sqrt(var))
}

/// Runs one train/test split: fits on `train`, evaluates on `test`.
fn run_fold(
    x: &Matrix,
    labels: &[usize],
    classes: &[String],
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
) -> Result<Metrics> {
    let ytr = take(labels, train);
    if ytr.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleClass);
    }
    let model = fit_probe(&x.select_rows(train), &ytr, classes, cfg)?;
    evaluate_probe(&model, &x.select_rows(test), &take(labels, test))
}

pub fn cross_validate(
    x: &Matrix,
    labels: &[usize],
    classes: &[String],
    k: usize,
    scheme: &CvScheme,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<CvResult> {
    let folds = cv_folds(labels, k, scheme, seed)?;
    let mut out = Vec::with_capacity(k);
    for test in &folds {
        let train = complement(x.rows(), test);
        out.push(run_fold(x, labels, classes, &train, test, cfg)?);
    }
    Ok(CvResult::from_folds(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablated {
    pub matrix: Matrix,
    /// Rank of the orthonormalized direction span.
    pub rank: usize,
}

/// `X (I − QQᵀ)` with `Q` the Gram–Schmidt basis of `directions`.
pub fn ablate_directions<V: AsRef<[f64]>>(x: &Matrix, directions: &[V]) -> Result<Ablated> {
    for d in directions {
        if d.as_ref().len() != x.cols() {
            return Err(Error::DimensionMismatch {
                expected: x.cols(),
                found: d.as_ref().len(),
            });
        }
    }
    let q = gram_schmidt(directions, ABLATION_DROP_TOL);
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for qv in &q {
            let c = dot(row, qv);
            linalg::axpy(row, -c, qv);
        }
    }
    Ok(Ablated {
        matrix: out,
        rank: q.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Directions fit once on all rows.
    InSample,
    /// Directions refit on each fold's training rows.
    CrossFitted,
}

/// Cross-validated probe metrics after removing directions produced by
/// `fit_directions(train_x, train_labels)`.
#[allow(clippy::too_many_arguments)]
pub fn ablation_cv<F>(
    x: &Matrix,
    labels: &[usize],
    classes: &[String],
    k: usize,
    scheme: &CvScheme,
    seed: u64,
    cfg: &ProbeConfig,
    mode: AblationMode,
    fit_directions: F,
) -> Result<(CvResult, usize)>
where
    F: Fn(&Matrix, &[usize]) -> Result<Vec<Vec<f64>>>,
{
    let folds = cv_folds(labels, k, scheme, seed)?;
    let mut out = Vec::with_capacity(k);
    let mut rank = 0;
    match mode {
        AblationMode::InSample => {
            let dirs = fit_directions(x, labels)?;
            let ab = ablate_directions(x, &dirs)?;
            rank = ab.rank;
            for test in &folds {
                let train = complement(x.rows(), test);
                out.push(run_fold(&ab.matrix, labels, classes, &train, test, cfg)?);
            }
        }
        AblationMode::CrossFitted => {
            for test in &folds {
                let train = complement(x.rows(), test);
                let dirs = fit_directions(&x.select_rows(&train), &take(labels, &train))?;
                let ab = ablate_directions(x, &dirs)?;
                rank = rank.max(ab.rank);
                out.push(run_fold(&ab.matrix, labels, classes, &train, test, cfg)?);
            }
        }
    }
    Ok((CvResult::from_folds(out), rank))
}
