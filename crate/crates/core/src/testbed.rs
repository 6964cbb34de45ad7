//! Synthetic world with a planted failure direction and a behavioral
//! readout.
//!
//! The task span holds `K` orthonormal rows. The first `m` rows are answer
//! options; row `m` is a support axis `s`. A unit vector `u` orthogonal to
//! the task span carries the off-task part of the failure direction
//! `d_f = √(1−ρ)·s + √ρ·u`.
//!
//! * correct state for option `q`: `a·t_q + b·s`
//! * OT failure: the correct mean plus `c·√(1−ρ)·(t_{q+1} − t_q) + g·d_f`
//! * KD failure (geometry only): the correct mean plus
//!   `c·√(1−ρ)·(t_{q+1} − t_q) + g·(√(1−ρ)·s − √ρ·u)`
//!
//! The readout takes the best-scoring option, then shifts to the next option
//! when the support projection drops below `support_floor` or the off-task
//! projection exceeds `derail_threshold`. At `ρ = 0` the failure offset lies
//! along the support axis, so removing it does not undo the option
//! confusion while pushing correct states along it breaks them; at `ρ = 1`
//! the offset is off-task and removing it restores the answer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::archive::{ActivationArchive, ArchiveManifest, AuxFields, Mode, Position, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{contrastive_vector, shared_direction, specificity_ratio};
use crate::intervene::{additive_steer, whitened_direction, within_class_covariance, Erasure, InterventionKind, InterventionSpec, WHITEN_EPS};
use crate::linalg::{self, dot, gram_schmidt, Matrix};
use crate::probes::{cross_validate, CvScheme, ProbeConfig};
use crate::rng::{derive_seed, streams, Rng};
use crate::stats::{mcnemar_two_sided, quantile_sorted, spearman, PairedOutcomes};

/// Rows per question block in sampled datasets.
pub const QUESTION_BLOCK: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub hidden_dim: usize,
    pub n_options: usize,
    pub task_rank: usize,
    pub rho: f64,
    /// Option signal of every state.
    pub a: f64,
    /// Support-axis level of every state.
    pub b: f64,
    /// Option confusion of failures at `ρ = 0`.
    pub c: f64,
    /// Failure offset along `d_f`.
    pub g: f64,
    pub support_floor: f64,
    pub derail_threshold: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            hidden_dim: 64,
            n_options: 4,
            task_rank: 8,
            rho: 0.0,
            a: 3.0,
            b: 1.5,
            c: 2.0,
            g: 1.5,
            support_floor: 0.75,
            derail_threshold: 0.75,
            sigma: 0.35,
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task_rank + 1 > self.hidden_dim {
            return Err(Error::validation("task_rank", "task_rank + 1 must not exceed hidden_dim"));
        }
        if self.n_options < 2 || self.n_options + 1 > self.task_rank {
            return Err(Error::validation("n_options", "need 2 ≤ n_options and n_options + 1 ≤ task_rank"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::validation("rho", "must lie in [0, 1]"));
        }
        for (v, name) in [
            (self.a, "a"),
            (self.b, "b"),
            (self.c, "c"),
            (self.g, "g"),
            (self.sigma, "sigma"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation("world", format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    /// K × D, orthonormal rows; the first `n_options` are readout rows.
    pub task: Matrix,
    pub support: Vec<f64>,
    pub u_perp: Vec<f64>,
    pub d_f: Vec<f64>,
    /// Offset direction of the mirrored KD mode.
    pub d_kd: Vec<f64>,
}

pub fn build_world(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let (d, k) = (config.hidden_dim, config.task_rank);
    let mut rng = Rng::derived(config.seed, streams::WORLD, 0);
    let mut basis = Vec::new();
    // redraw until K + 1 independent rows survive (almost surely one pass)
    while basis.len() < k + 1 {
        let raw: Vec<Vec<f64>> = (0..k + 1).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
        basis = gram_schmidt(&raw, 1e-6);
    }
    let u_perp = basis.pop().expect("k + 1 rows");
    let task = Matrix::from_rows(&basis)?;
    let support = task.row(config.n_options).to_vec();
    let (sr, pr) = (libm::sqrt(1.0 - config.rho), libm::sqrt(config.rho));
    let d_f: Vec<f64> = support.iter().zip(&u_perp).map(|(s, u)| sr * s + pr * u).collect();
    let d_kd: Vec<f64> = support.iter().zip(&u_perp).map(|(s, u)| sr * s - pr * u).collect();
    Ok(SyntheticWorld {
        config: *config,
        task,
        support,
        u_perp,
        d_f,
        d_kd,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraceKind {
    Correct,
    Ot,
    Kd,
}

impl TraceKind {
    pub fn mode(self) -> Mode {
        match self {
            TraceKind::Correct => Mode::Correct,
            TraceKind::Ot => Mode::Ot,
            TraceKind::Kd => Mode::Kd,
        }
    }
}

impl SyntheticWorld {
    pub fn option_scores(&self, h: &[f64]) -> Vec<f64> {
        (0..self.config.n_options).map(|j| dot(self.task.row(j), h)).collect()
    }

    /// Behavioral answer for state `h`.
    pub fn readout(&self, h: &[f64]) -> usize {
        let scores = self.option_scores(h);
        let mut top = 0;
        for (j, s) in scores.iter().enumerate() {
            if *s > scores[top] {
                top = j;
            }
        }
        if dot(&self.support, h) < self.config.support_floor || dot(&self.u_perp, h) > self.config.derail_threshold {
            (top + 1) % self.config.n_options
        } else {
            top
        }
    }

    /// Answer drawn from a softmax over option scores at `temperature`.
    pub fn readout_sampled(&self, h: &[f64], temperature: f64, rng: &mut Rng) -> usize {
        let probs = self.option_probs(h, temperature);
        let u = rng.uniform();
        let mut acc = 0.0;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        probs.len() - 1
    }

    pub fn option_probs(&self, h: &[f64], temperature: f64) -> Vec<f64> {
        let s = self.option_scores(h);
        let t = temperature.max(1e-12);
        let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| libm::exp((x - top) / t)).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn mean(&self, kind: TraceKind, q: usize) -> Vec<f64> {
        let c = &self.config;
        let mut h = linalg::scaled(self.task.row(q), c.a);
        linalg::axpy(&mut h, c.b, &self.support);
        if kind != TraceKind::Correct {
            let w = (q + 1) % c.n_options;
            let conf = c.c * libm::sqrt(1.0 - c.rho);
            linalg::axpy(&mut h, conf, self.task.row(w));
            linalg::axpy(&mut h, -conf, self.task.row(q));
            let off = if kind == TraceKind::Ot { &self.d_f } else { &self.d_kd };
            linalg::axpy(&mut h, c.g, off);
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub states: Matrix,
    pub kind: Vec<TraceKind>,
    /// Correct option per row.
    pub option: Vec<usize>,
    /// Readout of the noiseless class mean is correct.
    pub mean_correct: Vec<bool>,
    /// Readout of the sampled state is correct.
    pub realized_correct: Vec<bool>,
}

impl Dataset {
    pub fn rows_of(&self, kind: TraceKind) -> Vec<usize> {
        (0..self.kind.len()).filter(|&i| self.kind[i] == kind).collect()
    }

    pub fn failure_rows(&self) -> Vec<usize> {
        (0..self.kind.len()).filter(|&i| self.kind[i] != TraceKind::Correct).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.realized_correct.iter().filter(|&&c| c).count() as f64 / self.realized_correct.len().max(1) as f64
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            states: self.states.select_rows(idx),
            kind: idx.iter().map(|&i| self.kind[i]).collect(),
            option: idx.iter().map(|&i| self.option[i]).collect(),
            mean_correct: idx.iter().map(|&i| self.mean_correct[i]).collect(),
            realized_correct: idx.iter().map(|&i| self.realized_correct[i]).collect(),
        }
    }
}

/// Correct then OT rows.
pub fn sample_dataset(world: &SyntheticWorld, n_correct: usize, n_fail: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    sample_modes(world, &[(TraceKind::Correct, n_correct), (TraceKind::Ot, n_fail)], sigma, seed)
}

/// Rows grouped by kind in the given order. Within a kind, consecutive
/// blocks of [`QUESTION_BLOCK`] rows share an option, cycling through the
/// options. Row noise comes from a generator derived from the row index.
pub fn sample_modes(world: &SyntheticWorld, counts: &[(TraceKind, usize)], sigma: f64, seed: u64) -> Result<Dataset> {
    if counts.iter().any(|(_, n)| *n == 0) {
        return Err(Error::invalid("every sampled class needs at least one row"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    let d = world.config.hidden_dim;
    let m = world.config.n_options;
    let total: usize = counts.iter().map(|(_, n)| n).sum();
    let mut data = Vec::with_capacity(total * d);
    let mut kind = Vec::with_capacity(total);
    let mut option = Vec::with_capacity(total);
    let mut mean_correct = Vec::with_capacity(total);
    let mut realized = Vec::with_capacity(total);
    let mut row = 0u64;
    for &(k, n) in counts {
        let means: Vec<Vec<f64>> = (0..m).map(|q| world.mean(k, q)).collect();
        let mean_ok: Vec<bool> = (0..m).map(|q| world.readout(&means[q]) == q).collect();
        for i in 0..n {
            let q = (i / QUESTION_BLOCK) % m;
            let mut rng = Rng::derived(seed, streams::SAMPLE, row);
            let h: Vec<f64> = means[q].iter().map(|mu| mu + sigma * rng.normal()).collect();
            realized.push(world.readout(&h) == q);
            data.extend_from_slice(&h);
            kind.push(k);
            option.push(q);
            mean_correct.push(mean_ok[q]);
            row += 1;
        }
    }
    Ok(Dataset {
        states: Matrix::from_vec(total, d, data)?,
        kind,
        option,
        mean_correct,
        realized_correct: realized,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DirectionSource {
    /// The planted `d_f`.
    Oracle,
    /// `normalize(mean(correct) − mean(OT))` from the dataset.
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// Only failure rows (mode-specific routing).
    Failures,
    All,
}

/// Estimated OT contrastive direction and the centroid-gap norm.
pub fn estimated_direction(data: &Dataset) -> Result<(Vec<f64>, f64)> {
    let mc = data.states.select_rows(&data.rows_of(TraceKind::Correct)).column_means();
    let mf = data.states.select_rows(&data.rows_of(TraceKind::Ot)).column_means();
    let gap = linalg::sub(&mc, &mf);
    let v = contrastive_vector(&mc, &mf)?;
    Ok((v, linalg::norm(&gap)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub outcomes: PairedOutcomes,
    pub baseline_accuracy: f64,
    pub treated_accuracy: f64,
    pub delta_pp: f64,
    pub correction_rate: f64,
    pub damage_rate: f64,
    pub p_mcnemar: f64,
}

impl ExperimentReport {
    pub fn from_outcomes(outcomes: PairedOutcomes) -> Self {
        ExperimentReport {
            baseline_accuracy: outcomes.baseline_accuracy(),
            treated_accuracy: outcomes.treated_accuracy(),
            delta_pp: 100.0 * outcomes.delta(),
            correction_rate: outcomes.correction_rate(),
            damage_rate: outcomes.damage_rate(),
            p_mcnemar: mcnemar_two_sided(outcomes.corrections(), outcomes.damages()),
            outcomes,
        }
    }
}

/// Re-reads every state after `edit` is applied to the selected rows.
pub fn evaluate_edit<F>(world: &SyntheticWorld, data: &Dataset, targets: Targets, edit: F) -> Result<ExperimentReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut treated = Vec::with_capacity(data.kind.len());
    for (i, h) in data.states.iter_rows().enumerate() {
        let touch = targets == Targets::All || data.kind[i] != TraceKind::Correct;
        let ans = if touch { world.readout(&edit(h)) } else { world.readout(h) };
        treated.push(ans == data.option[i]);
    }
    let outcomes = PairedOutcomes::from_pairs(&data.realized_correct, &treated)?;
    Ok(ExperimentReport::from_outcomes(outcomes))
}

/// Applies `spec` on the testbed. Supported kinds: additive, multi-layer
/// (the world has one layer), erase and whitened erase. `spec.alpha` scales
/// the additive direction.
pub fn run_experiment(
    world: &SyntheticWorld,
    data: &Dataset,
    spec: &InterventionSpec,
    source: &DirectionSource,
    targets: Targets,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let dir = match source {
        DirectionSource::Oracle => world.d_f.clone(),
        DirectionSource::Estimated => estimated_direction(data)?.0,
    };
    match spec.kind {
        InterventionKind::Additive | InterventionKind::MultiLayer => {
            evaluate_edit(world, data, targets, |h| additive_steer(h, &dir, spec.alpha))
        }
        InterventionKind::Erase => {
            let e = Erasure::new(&dir)?;
            evaluate_edit(world, data, targets, |h| e.apply(h))
        }
        InterventionKind::EraseWhitened => {
            let c = data.states.select_rows(&data.rows_of(TraceKind::Correct));
            let f = data.states.select_rows(&data.rows_of(TraceKind::Ot));
            let sw = within_class_covariance(&[&c, &f])?;
            let delta = linalg::sub(&c.column_means(), &f.column_means());
            let w = whitened_direction(&delta, &sw, WHITEN_EPS)?;
            let e = Erasure::new(&w.direction)?;
            evaluate_edit(world, data, targets, |h| e.apply(h))
        }
        other => Err(Error::invalid(format!("{other:?} interventions are not supported on the testbed"))),
    }
}

/// Specificity of the OT contrastive vector against the OT/KD shared
/// direction.
pub fn measured_specificity(data: &Dataset) -> Result<f64> {
    let mean_of = |k| data.states.select_rows(&data.rows_of(k)).column_means();
    let mc = mean_of(TraceKind::Correct);
    let v_ot = contrastive_vector(&mc, &mean_of(TraceKind::Ot))?;
    let v_kd = contrastive_vector(&mc, &mean_of(TraceKind::Kd))?;
    let shared = shared_direction(&[v_ot.clone(), v_kd])?;
    Ok(specificity_ratio(&v_ot, &shared))
}

/// Builds a one-layer archive from a sampled dataset. Question ids follow
/// the dataset's option blocks; answer letters come from the readout.
pub fn export_archive(world: &SyntheticWorld, data: &Dataset) -> Result<ActivationArchive> {
    let n = data.kind.len();
    let d = world.config.hidden_dim;
    let mut manifest = ArchiveManifest::new(n, 1, d);
    manifest.position = Position::LastToken;
    manifest.notes.push(format!(
        "synthetic testbed: rho={} sigma={} seed={}",
        world.config.rho, world.config.sigma, world.config.seed
    ));
    let tensor: Vec<f32> = data.states.as_slice().iter().map(|&x| x as f32).collect();
    let mut records = Vec::with_capacity(n);
    let mut block_start = 0usize;
    for i in 0..n {
        if i > 0 && (data.kind[i] != data.kind[i - 1] || (i - block_start) == QUESTION_BLOCK) {
            block_start = i;
        }
        let h = data.states.row(i);
        let probs = world.option_probs(h, 1.0);
        let kind = data.kind[i];
        records.push(TraceRecord {
            trace_id: format!("t{i:05}"),
            question_id: format!("q{:04}", block_start / QUESTION_BLOCK),
            mode: kind.mode(),
            is_correct: kind == TraceKind::Correct,
            n_tokens: if kind == TraceKind::Ot { 320 } else { 140 },
            answer: option_letter(world.readout(h)),
            correct_answer: option_letter(data.option[i]),
            aux: Some(AuxFields {
                hidden_norm: Some(linalg::norm(h)),
                option_probs: Some(probs),
                ..AuxFields::default()
            }),
        });
    }
    // unembedding rows: options, support, off-task axis
    let mut rows: Vec<Vec<f64>> = (0..world.config.n_options).map(|j| world.task.row(j).to_vec()).collect();
    rows.push(world.support.clone());
    rows.push(world.u_perp.clone());
    let mut vocab: Vec<String> = (0..world.config.n_options).map(|j| format!("option_{}", option_letter(j))).collect();
    vocab.push("support".into());
    vocab.push("off_task".into());
    let unembedding: Vec<f32> = rows.concat().into_iter().map(|x| x as f32).collect();
    let archive = ActivationArchive {
        manifest,
        tensor,
        records,
        unembedding: Some(unembedding),
        vocab: Some(vocab),
    };
    archive.validate()?;
    Ok(archive)
}

pub fn option_letter(j: usize) -> char {
    (b'A' + (j % 26) as u8) as char
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    pub grid: Vec<f64>,
    pub world: WorldConfig,
    pub n_correct: usize,
    pub n_fail: usize,
    pub n_random: usize,
    pub folds: usize,
    pub pca_components: usize,
    pub master_seed: u64,
    pub n_seeds: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            world: WorldConfig::default(),
            n_correct: 1400,
            n_fail: 600,
            n_random: 10,
            folds: 5,
            pca_components: 50,
            master_seed: 42,
            n_seeds: 5,
        }
    }
}

impl GapConfig {
    /// Fixture seeds `derive_seed(master, FIXTURE, i)`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| derive_seed(self.master_seed, streams::FIXTURE, i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::validation("grid", "must not be empty"));
        }
        if self.n_seeds == 0 || self.n_correct == 0 || self.n_fail == 0 {
            return Err(Error::validation("gap", "seed and sample counts must be positive"));
        }
        for &r in &self.grid {
            WorldConfig { rho: r, ..self.world }.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub seed: u64,
    pub rho: f64,
    pub baseline_accuracy: f64,
    pub probe_balanced_accuracy: f64,
    pub alpha: f64,
    pub targeted: ExperimentReport,
    pub uniform: ExperimentReport,
    pub erase_df: ExperimentReport,
    pub random_erasure_delta_pp: Vec<f64>,
    /// 95th percentile of random-erasure damage (−Δpp).
    pub random_damage_p95: f64,
    pub specificity: f64,
}

/// One (seed, ρ) cell. The world and samples depend only on `seed`, so
/// cells can be computed in any order.
pub fn gap_cell(config: &GapConfig, seed: u64, rho: f64) -> Result<GapCell> {
    let wc = WorldConfig {
        rho,
        seed,
        ..config.world
    };
    let world = build_world(&wc)?;
    let sigma = wc.sigma;
    let data = sample_modes(
        &world,
        &[
            (TraceKind::Correct, config.n_correct),
            (TraceKind::Ot, config.n_fail),
            (TraceKind::Kd, config.n_fail),
        ],
        sigma,
        seed,
    )?;
    let specificity = measured_specificity(&data)?;
    let mut behav_rows = data.rows_of(TraceKind::Correct);
    behav_rows.extend(data.rows_of(TraceKind::Ot));
    let data = data.subset(&behav_rows);

    let labels: Vec<usize> = data.kind.iter().map(|k| usize::from(*k == TraceKind::Ot)).collect();
    let classes = [String::from("correct"), String::from("OT")];
    let pcfg = ProbeConfig {
        pca_components: Some(config.pca_components),
        ..ProbeConfig::default()
    };
    let cv = cross_validate(&data.states, &labels, &classes, config.folds, &CvScheme::Stratified, seed, &pcfg)?;

    let (v, alpha) = estimated_direction(&data)?;
    let targeted = evaluate_edit(&world, &data, Targets::Failures, |h| additive_steer(h, &v, alpha))?;
    let uniform = evaluate_edit(&world, &data, Targets::All, |h| additive_steer(h, &v, alpha))?;
    let erase = Erasure::new(&world.d_f)?;
    let erase_df = evaluate_edit(&world, &data, Targets::All, |h| erase.apply(h))?;
    let mut random_erasure_delta_pp = Vec::with_capacity(config.n_random);
    for i in 0..config.n_random as u64 {
        let u = Rng::derived(seed, streams::RANDOM_DIRECTION, i).unit_vector(wc.hidden_dim);
        let e = Erasure::new(&u)?;
        random_erasure_delta_pp.push(evaluate_edit(&world, &data, Targets::All, |h| e.apply(h))?.delta_pp);
    }
    let mut damage: Vec<f64> = random_erasure_delta_pp.iter().map(|d| -d).collect();
    damage.sort_by(f64::total_cmp);
    Ok(GapCell {
        seed,
        rho,
        baseline_accuracy: data.accuracy(),
        probe_balanced_accuracy: cv.mean_balanced_accuracy,
        alpha,
        targeted,
        uniform,
        erase_df,
        random_damage_p95: quantile_sorted(&damage, 0.95),
        random_erasure_delta_pp,
        specificity,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub skipped: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub config: GapConfig,
    pub cells: Vec<GapCell>,
    /// Seed-averaged targeted Δpp per grid point.
    pub mean_targeted_delta_pp: Vec<f64>,
    pub spearman: Option<f64>,
    pub invariants: Vec<InvariantCheck>,
    pub passed: bool,
}

impl GapReport {
    pub fn failing(&self) -> Vec<&str> {
        self.invariants.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub const DECODABILITY_MIN_BA: f64 = 0.85;
pub const MONOTONE_MIN_SPEARMAN: f64 = 0.9;
pub const NULL_BAND_PP: f64 = 2.0;
pub const UNIFORM_DAMAGE_PP: f64 = -5.0;
pub const SIGNIFICANCE: f64 = 0.05;
pub const SPECIFICITY_TOL: f64 = 0.05;

fn check(name: &str, passed: bool, detail: String) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        passed,
        skipped: false,
        detail,
    }
}

fn skipped(name: &str, detail: &str) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        passed: true,
        skipped: true,
        detail: detail.into(),
    }
}

/// Evaluates the invariant suite over computed cells.
pub fn assemble_gap_report(config: &GapConfig, cells: Vec<GapCell>) -> GapReport {
    let grid = &config.grid;
    let at = |rho: f64| -> Vec<&GapCell> { cells.iter().filter(|c| c.rho == rho).collect() };
    let mut inv = Vec::new();

    let worst_ba = cells
        .iter()
        .map(|c| c.probe_balanced_accuracy)
        .fold(f64::INFINITY, f64::min);
    inv.push(check(
        "decodability",
        worst_ba > DECODABILITY_MIN_BA,
        format!("min probe balanced accuracy {worst_ba:.4} (need > {DECODABILITY_MIN_BA})"),
    ));

    let mean_targeted: Vec<f64> = grid
        .iter()
        .map(|&r| {
            let cs = at(r);
            cs.iter().map(|c| c.targeted.delta_pp).sum::<f64>() / cs.len().max(1) as f64
        })
        .collect();
    let mut distinct = grid.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut rho_s = None;
    if distinct.len() < 2 {
        inv.push(skipped("monotonicity", "grid has fewer than two points; monotonicity not checked"));
    } else {
        match spearman(grid, &mean_targeted) {
            Ok(s) => {
                rho_s = Some(s);
                inv.push(check(
                    "monotonicity",
                    s >= MONOTONE_MIN_SPEARMAN,
                    format!("Spearman {s:.4} between rho and mean targeted delta (need ≥ {MONOTONE_MIN_SPEARMAN})"),
                ));
            }
            Err(e) => inv.push(check("monotonicity", false, format!("Spearman undefined: {e}"))),
        }
    }

    let zero = at(0.0);
    if zero.is_empty() {
        for name in ["entangled-null", "uniform-damage", "erasure-specificity"] {
            inv.push(skipped(name, "rho = 0 not in grid"));
        }
    } else {
        let worst = zero.iter().map(|c| libm::fabs(c.targeted.delta_pp)).fold(0.0, f64::max);
        inv.push(check(
            "entangled-null",
            worst <= NULL_BAND_PP,
            format!("max |targeted delta| at rho=0 is {worst:.3}pp (need ≤ {NULL_BAND_PP})"),
        ));
        let ok = zero
            .iter()
            .all(|c| c.uniform.delta_pp < UNIFORM_DAMAGE_PP && c.uniform.p_mcnemar < SIGNIFICANCE);
        let worst_u = zero.iter().map(|c| c.uniform.delta_pp).fold(f64::NEG_INFINITY, f64::max);
        let worst_p = zero.iter().map(|c| c.uniform.p_mcnemar).fold(0.0, f64::max);
        inv.push(check(
            "uniform-damage",
            ok,
            format!("uniform delta at rho=0 at most {worst_u:.3}pp, max p {worst_p:.3e} (need < {UNIFORM_DAMAGE_PP}pp, p < {SIGNIFICANCE})"),
        ));
        let ok = zero.iter().all(|c| -c.erase_df.delta_pp > c.random_damage_p95);
        let margin = zero
            .iter()
            .map(|c| -c.erase_df.delta_pp - c.random_damage_p95)
            .fold(f64::INFINITY, f64::min);
        inv.push(check(
            "erasure-specificity",
            ok,
            format!("erase-d_f damage minus random p95 damage at rho=0, worst seed: {margin:.3}pp (need > 0)"),
        ));
    }

    let one = at(1.0);
    if one.is_empty() {
        inv.push(skipped("specific-steerable", "rho = 1 not in grid"));
    } else {
        let ok = one
            .iter()
            .all(|c| c.targeted.delta_pp > 0.0 && c.targeted.p_mcnemar < SIGNIFICANCE);
        let worst = one.iter().map(|c| c.targeted.delta_pp).fold(f64::INFINITY, f64::min);
        let worst_p = one.iter().map(|c| c.targeted.p_mcnemar).fold(0.0, f64::max);
        inv.push(check(
            "specific-steerable",
            ok,
            format!("targeted delta at rho=1 at least {worst:.3}pp, max p {worst_p:.3e} (need > 0, p < {SIGNIFICANCE})"),
        ));
    }

    let worst_spec = cells
        .iter()
        .map(|c| libm::fabs(c.specificity - c.rho))
        .fold(0.0, f64::max);
    inv.push(check(
        "specificity-recovery",
        worst_spec <= SPECIFICITY_TOL,
        format!("max |measured specificity − rho| {worst_spec:.4} (need ≤ {SPECIFICITY_TOL})"),
    ));

    let passed = inv.iter().all(|c| c.passed);
    GapReport {
        config: config.clone(),
        cells,
        mean_targeted_delta_pp: mean_targeted,
        spearman: rho_s,
        invariants: inv,
        passed,
    }
}

/// Runs every (seed, ρ) cell serially and evaluates the invariants.
pub fn gap_suite(config: &GapConfig) -> Result<GapReport> {
    config.validate()?;
    let mut cells = Vec::new();
    for seed in config.seeds() {
        for &rho in &config.grid {
            cells.push(gap_cell(config, seed, rho)?);
        }
    }
    Ok(assemble_gap_report(config, cells))
}
