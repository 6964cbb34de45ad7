//! Hypothesis tests and resampling used to judge interventions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::selective::auroc;

/// McNemar switches from the exact binomial to χ² above this many
/// discordant pairs.
pub const MCNEMAR_EXACT_MAX: u64 = 25;

/// Baseline × treatment correctness contingency over paired items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    /// wrong → wrong
    pub n00: u64,
    /// wrong → right (corrections)
    pub n01: u64,
    /// right → wrong (damages)
    pub n10: u64,
    /// right → right
    pub n11: u64,
}

impl PairedOutcomes {
    pub fn from_pairs(baseline: &[bool], treated: &[bool]) -> Result<Self> {
        if baseline.len() != treated.len() {
            return Err(Error::DimensionMismatch {
                expected: baseline.len(),
                found: treated.len(),
            });
        }
        let mut o = PairedOutcomes::default();
        for (&a, &b) in baseline.iter().zip(treated) {
            match (a, b) {
                (false, false) => o.n00 += 1,
                (false, true) => o.n01 += 1,
                (true, false) => o.n10 += 1,
                (true, true) => o.n11 += 1,
            }
        }
        Ok(o)
    }

    pub fn n(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn corrections(&self) -> u64 {
        self.n01
    }

    pub fn damages(&self) -> u64 {
        self.n10
    }

    /// Treatment minus baseline accuracy, as a proportion.
    pub fn delta(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        (self.n01 as f64 - self.n10 as f64) / n as f64
    }

    pub fn baseline_accuracy(&self) -> f64 {
        ratio(self.n10 + self.n11, self.n())
    }

    pub fn treated_accuracy(&self) -> f64 {
        ratio(self.n01 + self.n11, self.n())
    }

    /// Share of baseline-incorrect items that the treatment fixed.
    pub fn correction_rate(&self) -> f64 {
        ratio(self.n01, self.n00 + self.n01)
    }

    /// Share of baseline-correct items that the treatment broke.
    pub fn damage_rate(&self) -> f64 {
        ratio(self.n10, self.n10 + self.n11)
    }

    pub fn mcnemar(&self) -> f64 {
        mcnemar_two_sided(self.n01, self.n10)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `P(X ≥ k)` for `X ~ Binomial(n, ½)`, summed in log space.
pub fn binomial_upper_tail_half(k: u64, n: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = -(n as f64) * core::f64::consts::LN_2;
    let terms: Vec<f64> = (k..=n).map(|j| ln_choose(n, j) + ln_half_n).collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| libm::exp(t - top)).sum();
    (libm::exp(top) * s).min(1.0)
}

/// Survival function of χ² with one degree of freedom.
pub fn chi2_sf_1(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc(libm::sqrt(x / 2.0))
}

pub fn mcnemar_two_sided(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    if n <= MCNEMAR_EXACT_MAX {
        let lo = b.min(c);
        // P(X ≤ lo) = P(X ≥ n − lo) by symmetry
        return (2.0 * binomial_upper_tail_half(n - lo, n)).min(1.0);
    }
    let d = b.abs_diff(c) as f64 - 1.0;
    let d = d.max(0.0);
    chi2_sf_1(d * d / n as f64)
}

/// `P(X ≥ n_pos)` under `X ~ Binomial(n_pos + n_neg, ½)`.
pub fn sign_test_one_sided(n_pos: u64, n_neg: u64) -> f64 {
    binomial_upper_tail_half(n_pos, n_pos + n_neg)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Standard normal quantile (Acklam's rational approximation, refined by
/// one Halley step).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tost {
    pub delta: f64,
    pub ci90: (f64, f64),
    pub margin: f64,
    pub equivalent: bool,
    /// Larger of the two one-sided p-values; `None` when the variance is zero.
    pub p: Option<f64>,
    pub zero_variance: bool,
}

/// CI-containment decision: equivalent iff `ci90 ⊂ (−margin, margin)`.
pub fn tost_equivalence(delta_hat: f64, ci90: (f64, f64), margin: f64) -> Result<Tost> {
    if !(margin > 0.0) {
        return Err(Error::invalid("TOST margin must be positive"));
    }
    Ok(Tost {
        delta: delta_hat,
        ci90,
        margin,
        equivalent: ci90.0 > -margin && ci90.1 < margin,
        p: None,
        zero_variance: false,
    })
}

/// Two one-sided z-tests on `delta` with standard error `se`.
pub fn tost_z(delta: f64, se: f64, margin: f64) -> Result<Tost> {
    if !(margin > 0.0) {
        return Err(Error::invalid("TOST margin must be positive"));
    }
    if !(se > 0.0) {
        return Ok(Tost {
            delta,
            ci90: (delta, delta),
            margin,
            equivalent: delta > -margin && delta < margin,
            p: None,
            zero_variance: true,
        });
    }
    let z = normal_quantile(0.95);
    let ci90 = (delta - z * se, delta + z * se);
    let p_lower = 1.0 - normal_cdf((delta + margin) / se);
    let p_upper = 1.0 - normal_cdf((margin - delta) / se);
    Ok(Tost {
        delta,
        ci90,
        margin,
        equivalent: ci90.0 > -margin && ci90.1 < margin,
        p: Some(p_lower.max(p_upper)),
        zero_variance: false,
    })
}

/// TOST on the paired accuracy difference. `se² = ((b + c)/n − δ²)/n` with
/// `b`, `c` the discordant counts. All quantities are proportions.
pub fn tost_paired(outcomes: &PairedOutcomes, margin: f64) -> Result<Tost> {
    let n = outcomes.n();
    if n == 0 {
        return Err(Error::InsufficientData("TOST needs at least one pair"));
    }
    let nf = n as f64;
    let delta = outcomes.delta();
    let disc = (outcomes.n01 + outcomes.n10) as f64 / nf;
    let var = ((disc - delta * delta) / nf).max(0.0);
    tost_z(delta, libm::sqrt(var), margin)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holm {
    pub reject: Vec<bool>,
    /// Threshold applied to the smallest p-value, `α/m`.
    pub rank1_threshold: f64,
}

/// Holm step-down at level `alpha`. Rank `i` (1-based, ascending p) is
/// compared with `α/(m − i + 1)`; testing stops at the first acceptance.
pub fn holm_correct(p_values: &[f64], alpha: f64) -> Holm {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= alpha / (m - rank) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    Holm {
        reject,
        rank1_threshold: if m == 0 { alpha } else { alpha / m as f64 },
    }
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

fn percentile_interval(estimate: f64, mut stats: Vec<f64>, level: f64) -> Interval {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Interval {
        estimate,
        lo: quantile_sorted(&stats, tail),
        hi: quantile_sorted(&stats, 1.0 - tail),
    }
}

/// Indices of bootstrap resample `b` over `n` items.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = Rng::derived(seed, streams::BOOTSTRAP, b);
    (0..n).map(|_| rng.below(n)).collect()
}

/// Percentile bootstrap over item indices. `statistic` receives the
/// resampled index list, so paired data resample jointly.
pub fn bootstrap_ci_by<F>(n: usize, statistic: F, n_boot: usize, level: f64, seed: u64) -> Result<Interval>
where
    F: Fn(&[usize]) -> f64,
{
    if n < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least two observations"));
    }
    if n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("bootstrap needs n_boot ≥ 1 and level in (0, 1)"));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = statistic(&all);
    let stats = (0..n_boot as u64)
        .map(|b| statistic(&resample_indices(n, seed, b)))
        .collect();
    Ok(percentile_interval(estimate, stats, level))
}

pub fn bootstrap_ci<F>(data: &[f64], statistic: F, n_boot: usize, level: f64, seed: u64) -> Result<Interval>
where
    F: Fn(&[f64]) -> f64,
{
    bootstrap_ci_by(
        data.len(),
        |idx| {
            let sample: Vec<f64> = idx.iter().map(|&i| data[i]).collect();
            statistic(&sample)
        },
        n_boot,
        level,
        seed,
    )
}

/// Percentile interval over all `nⁿ` ordered resamples.
pub fn bootstrap_ci_exhaustive<F>(data: &[f64], statistic: F, level: f64) -> Result<Interval>
where
    F: Fn(&[f64]) -> f64,
{
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least two observations"));
    }
    if n > 7 {
        return Err(Error::invalid("exhaustive bootstrap limited to 7 observations"));
    }
    let total = n.pow(n as u32);
    let mut stats = Vec::with_capacity(total);
    let mut sample = vec![0.0; n];
    for code in 0..total {
        let mut c = code;
        for s in sample.iter_mut() {
            *s = data[c % n];
            c /= n;
        }
        stats.push(statistic(&sample));
    }
    Ok(percentile_interval(statistic(data), stats, level))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaAuroc {
    pub auroc_a: f64,
    pub auroc_b: f64,
    pub delta: f64,
    /// One-sided, for `a > b`.
    pub p: f64,
    /// Resamples that contained both classes.
    pub n_used: usize,
}

/// Paired bootstrap of `AUROC(a) − AUROC(b)`. Resamples with one class are
/// skipped; `p = (1 + #{δ* ≤ 0}) / (n_used + 1)`.
pub fn paired_bootstrap_delta_auroc(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    n_boot: usize,
    seed: u64,
) -> Result<DeltaAuroc> {
    let n = labels.len();
    if scores_a.len() != n || scores_b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: scores_a.len().min(scores_b.len()),
        });
    }
    let auroc_a = auroc(scores_a, labels)?;
    let auroc_b = auroc(scores_b, labels)?;
    let mut hits = 0usize;
    let mut used = 0usize;
    let mut sa = vec![0.0; n];
    let mut sb = vec![0.0; n];
    let mut sl = vec![false; n];
    for b in 0..n_boot as u64 {
        let idx = resample_indices(n, seed, b);
        for (j, &i) in idx.iter().enumerate() {
            sa[j] = scores_a[i];
            sb[j] = scores_b[i];
            sl[j] = labels[i];
        }
        let (Ok(a), Ok(bb)) = (auroc(&sa, &sl), auroc(&sb, &sl)) else {
            continue;
        };
        used += 1;
        if a - bb <= 0.0 {
            hits += 1;
        }
    }
    Ok(DeltaAuroc {
        auroc_a,
        auroc_b,
        delta: auroc_a - auroc_b,
        p: (1 + hits) as f64 / (used + 1) as f64,
        n_used: used,
    })
}

/// Midranks (1-based); ties share their average rank.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two equal-length series of length ≥ 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerical("correlation of a constant series".into()));
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// Spearman rank correlation (Pearson on midranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&midranks(x), &midranks(y))
}
