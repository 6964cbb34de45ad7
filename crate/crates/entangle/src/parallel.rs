//! Rayon-backed versions of the embarrassingly parallel kernels.
//!
//! Each parallel routine computes exactly the values of its serial
//! counterpart in core: work items carry their own derived seeds and results
//! are collected in index order.

use entangle_core::geometry::{self, PermutationNull};
use entangle_core::testbed::{self, GapConfig, GapReport};
use entangle_core::Matrix;
use rayon::prelude::*;

pub const THREADS_ENV: &str = "ENTANGLE_THREADS";

/// Thread cap from `ENTANGLE_THREADS`; unset, empty or zero means rayon's
/// default.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn pool() -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Parallel [`geometry::specificity_permutation_null`].
pub fn specificity_permutation_null(
    incorrect_states: &Matrix,
    mode_labels: &[usize],
    correct_mean: &[f64],
    n_perm: usize,
    seed: u64,
) -> entangle_core::Result<PermutationNull> {
    if n_perm == 0 {
        return Err(entangle_core::Error::InvalidArgument("n_perm must be at least 1".into()));
    }
    let present: std::collections::BTreeSet<usize> = mode_labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(entangle_core::Error::InsufficientData("permutation null needs at least two modes"));
    }
    let n_modes = present.last().map_or(0, |m| m + 1);
    let observed = geometry::mean_specificity(incorrect_states, mode_labels, n_modes, correct_mean)?;
    let null = pool().install(|| {
        (0..n_perm as u64)
            .into_par_iter()
            .map(|i| geometry::permutation_statistic(incorrect_states, mode_labels, correct_mean, seed, i))
            .collect::<entangle_core::Result<Vec<f64>>>()
    })?;
    let p_value = geometry::lower_tail_p(observed, &null);
    Ok(PermutationNull { observed, null, p_value })
}

/// Parallel [`testbed::gap_suite`]: one task per (seed, ρ) cell.
pub fn gap_suite(config: &GapConfig) -> entangle_core::Result<GapReport> {
    config.validate()?;
    let jobs: Vec<(u64, f64)> = config
        .seeds()
        .into_iter()
        .flat_map(|s| config.grid.iter().map(move |&r| (s, r)))
        .collect();
    let cells = pool().install(|| {
        jobs.par_iter()
            .map(|&(seed, rho)| testbed::gap_cell(config, seed, rho))
            .collect::<entangle_core::Result<Vec<_>>>()
    })?;
    Ok(testbed::assemble_gap_report(config, cells))
}
