//! Interventions on archives and on the synthetic world.
//!
//! On an archive there is no model to rerun, so the readout is a
//! correctness probe fit on the chosen layer: a trace counts as correct
//! when the probe says so, before and after the edit. On the world the
//! readout is the world's own answer rule.

use std::path::Path;

use entangle_core::archive::{ActivationArchive, Mode};
use entangle_core::geometry::{contrastive_vector, shared_direction};
use entangle_core::intervene::{
    additive_steer, mlp_train, probe_gate, project_correction, rank_k_basis, whitened_direction, within_class_covariance, Erasure, Gate,
    InterventionKind, InterventionSpec, MlpTrainConfig, WHITEN_EPS,
};
use entangle_core::linalg::{self, Matrix};
use entangle_core::probes::{fit_probe, ProbeConfig};
use entangle_core::stats::PairedOutcomes;
use entangle_core::testbed::{self, DirectionSource, ExperimentReport, Targets, WorldConfig};
use serde::{Deserialize, Serialize};

use super::{failure_modes, load_archive, open_out, resolve};
use crate::cli::{Common, Outcome, UsageError};
use crate::report::{write_json, Csv};

/// Values given on the command line; they override the config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Flags {
    pub layer: Option<usize>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterveneConfig {
    pub kind: InterventionKind,
    /// Steering scale; `None` uses the centroid-gap norm, which moves the
    /// target centroid onto the correct one.
    pub alpha: Option<f64>,
    /// A failure mode ("OT", "KD", "RCB") or "shared".
    pub direction: String,
    pub targets: Targets,
    pub layer: Option<usize>,
    pub k: Option<usize>,
    pub gate: Option<Gate>,
    pub probe: ProbeConfig,
    pub mlp: MlpTrainConfig,
    pub world: WorldRun,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldRun {
    pub world: WorldConfig,
    pub n_correct: usize,
    pub n_fail: usize,
    pub source: DirectionSource,
    pub seed: u64,
}

impl Default for InterveneConfig {
    fn default() -> Self {
        InterveneConfig {
            kind: InterventionKind::Additive,
            alpha: None,
            direction: "OT".into(),
            targets: Targets::Failures,
            layer: None,
            k: None,
            gate: None,
            probe: ProbeConfig::default(),
            mlp: MlpTrainConfig::default(),
            world: WorldRun {
                world: WorldConfig::default(),
                n_correct: 1400,
                n_fail: 600,
                source: DirectionSource::Estimated,
                seed: 42,
            },
        }
    }
}

impl InterveneConfig {
    fn apply(&mut self, flags: Flags, common: &Common) {
        if flags.layer.is_some() {
            self.layer = flags.layer;
        }
        if flags.alpha.is_some() {
            self.alpha = flags.alpha;
        }
        if flags.k.is_some() {
            self.k = flags.k;
        }
        if let Some(s) = common.seed {
            self.world.seed = s;
            self.mlp.seed = s;
        }
    }

    fn spec(&self, layer: usize, alpha: f64) -> InterventionSpec {
        InterventionSpec {
            kind: self.kind,
            layers: vec![layer],
            alpha,
            direction_name: self.direction.clone(),
            k: self.k,
            gate: self.gate,
        }
    }
}

#[derive(Serialize)]
struct InterveneReport {
    source: &'static str,
    readout: &'static str,
    spec: InterventionSpec,
    targets: Targets,
    n_targets: usize,
    /// Rank-k only: fewer directions than requested were available.
    truncated: Option<bool>,
    rank: Option<usize>,
    #[serde(flatten)]
    result: ExperimentReport,
}

/// Per-trace edit: trace index and state in, edited state out.
type Edit<'a> = dyn Fn(usize, &[f64]) -> anyhow::Result<Vec<f64>> + 'a;

/// Modes whose traces the direction is about.
fn direction_modes(archive: &ActivationArchive, name: &str) -> anyhow::Result<Vec<Mode>> {
    if name.eq_ignore_ascii_case("shared") {
        let modes = failure_modes(archive);
        if modes.is_empty() {
            anyhow::bail!("archive has no failure traces");
        }
        return Ok(modes);
    }
    let mode = Mode::parse(name)
        .filter(|m| Mode::FAILURES.contains(m))
        .ok_or_else(|| UsageError(format!("direction must be KD, RCB, OT or shared, got {name:?}")))?;
    if !archive.modes_present().contains(&mode) {
        anyhow::bail!("archive has no {} traces", mode.as_str());
    }
    Ok(vec![mode])
}

fn mean_of(archive: &ActivationArchive, layer: usize, keep: impl Fn(Mode) -> bool) -> anyhow::Result<(Matrix, Vec<f64>)> {
    let (x, _) = archive.select(|r| keep(r.mode), layer)?;
    let mu = x.column_means();
    Ok((x, mu))
}

pub fn run_archive(archive_path: &Path, out: &Path, flags: Flags, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: InterveneConfig = resolve(&InterveneConfig::default(), common)?;
    cfg.apply(flags, common);
    let archive = load_archive(archive_path)?;
    let layer = cfg.layer.unwrap_or(archive.n_layers() / 2);
    if layer >= archive.n_layers() {
        anyhow::bail!("layer {layer} out of range (archive has {} layers)", archive.n_layers());
    }
    let modes = direction_modes(&archive, &cfg.direction)?;
    let (xc, mu_c) = mean_of(&archive, layer, |m| m == Mode::Correct)?;
    if xc.rows() == 0 {
        anyhow::bail!("archive has no correct traces");
    }
    let (xf, mu_f) = mean_of(&archive, layer, |m| modes.contains(&m))?;

    let contrastive = |mode: Mode| -> anyhow::Result<Vec<f64>> {
        let (_, mu) = mean_of(&archive, layer, |m| m == mode)?;
        Ok(contrastive_vector(&mu_c, &mu)?)
    };
    let direction = if modes.len() == 1 {
        contrastive(modes[0])?
    } else {
        let vs = modes.iter().map(|&m| contrastive(m)).collect::<anyhow::Result<Vec<_>>>()?;
        shared_direction(&vs)?
    };
    let gap = linalg::norm(&linalg::sub(&mu_c, &mu_f));
    let alpha = cfg.alpha.unwrap_or(gap);
    let spec = cfg.spec(layer, alpha);
    spec.validate()?;

    // the readout: P(correct) from a probe at this layer
    let x = archive.layer_matrix(layer)?;
    let y: Vec<usize> = archive.records.iter().map(|r| usize::from(r.is_correct)).collect();
    let classes = ["incorrect".to_string(), "correct".to_string()];
    let probe = fit_probe(&x, &y, &classes, &cfg.probe)?;
    let p_base = probe.positive_probability(&x)?;

    let target: Vec<bool> = archive
        .records
        .iter()
        .map(|r| match cfg.targets {
            Targets::All => true,
            Targets::Failures => modes.contains(&r.mode),
        })
        .collect();

    let mut truncated = None;
    let mut rank = None;
    let mut adapter = None;
    let edit: Box<Edit<'_>> = match cfg.kind {
        InterventionKind::Additive => Box::new(|_, h| Ok(additive_steer(h, &direction, alpha))),
        InterventionKind::MultiLayer => {
            return Err(UsageError(
                "multi_layer needs a forward pass between layers; archives only support single-layer edits".into(),
            )
            .into())
        }
        InterventionKind::RankK => {
            let all = failure_modes(&archive);
            let rows = all.iter().map(|&m| contrastive(m)).collect::<anyhow::Result<Vec<_>>>()?;
            let basis = rank_k_basis(&Matrix::from_rows(&rows)?, spec.k.expect("validated"))?;
            truncated = Some(basis.truncated);
            rank = Some(basis.basis.rows());
            let v = project_correction(&direction, &basis.basis)?;
            Box::new(move |_, h| Ok(additive_steer(h, &v, alpha)))
        }
        InterventionKind::Erase => {
            let e = Erasure::new(&direction)?;
            Box::new(move |_, h| Ok(e.apply(h)))
        }
        InterventionKind::EraseWhitened => {
            let sw = within_class_covariance(&[&xc, &xf])?;
            let w = whitened_direction(&linalg::sub(&mu_c, &mu_f), &sw, WHITEN_EPS)?;
            let e = Erasure::new(&w.direction)?;
            Box::new(move |_, h| Ok(e.apply(h)))
        }
        InterventionKind::ProbeGated => {
            let gate = spec.gate.expect("validated");
            let p = p_base.clone();
            let d = direction.clone();
            Box::new(move |i, h| Ok(additive_steer(h, &d, alpha * probe_gate(p[i], &gate)?)))
        }
        InterventionKind::Mlp => {
            let trained = mlp_train(&xf, &xc, &mu_c, &cfg.mlp)?;
            let a = trained.adapter.clone();
            adapter = Some(trained);
            Box::new(move |_, h| Ok(a.forward(h)?))
        }
    };

    let mut edited = x.clone();
    for i in (0..x.rows()).filter(|&i| target[i]) {
        let h = edit(i, x.row(i))?;
        edited.row_mut(i).copy_from_slice(&h);
    }
    let baseline: Vec<bool> = p_base.iter().map(|&p| p >= 0.5).collect();
    let treated: Vec<bool> = probe.positive_probability(&edited)?.iter().map(|&p| p >= 0.5).collect();
    let outcomes = PairedOutcomes::from_pairs(&baseline, &treated)?;
    let result = ExperimentReport::from_outcomes(outcomes);

    let dir = open_out(out, "intervene", common)?;
    dir.write_config(&cfg)?;
    if let Some(a) = &adapter {
        write_json(&dir.path("adapter.json"), a)?;
    }
    let mut t = Csv::new(&["trace_id", "mode", "targeted", "baseline_correct", "treated_correct"]);
    for (i, r) in archive.records.iter().enumerate() {
        t.push([r.trace_id.clone(), r.mode.as_str().into(), target[i].to_string(), baseline[i].to_string(), treated[i].to_string()]);
    }
    dir.write_csv("outcomes.csv", &t)?;
    let report = InterveneReport {
        source: "archive",
        readout: "correctness-probe",
        spec,
        targets: cfg.targets,
        n_targets: target.iter().filter(|&&t| t).count(),
        truncated,
        rank,
        result,
    };
    print_summary(&report);
    dir.write_report("intervene.json", &report)?;
    Ok(Outcome::Success)
}

pub fn run_world(out: &Path, flags: Flags, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: InterveneConfig = resolve(&InterveneConfig::default(), common)?;
    cfg.apply(flags, common);
    let w = &cfg.world;
    let world = testbed::build_world(&w.world)?;
    let data = testbed::sample_dataset(&world, w.n_correct, w.n_fail, w.world.sigma, w.seed)?;
    let alpha = match cfg.alpha {
        Some(a) => a,
        None => testbed::estimated_direction(&data)?.1,
    };
    let spec = cfg.spec(0, alpha);
    let result = testbed::run_experiment(&world, &data, &spec, &w.source, cfg.targets)?;
    let n_targets = match cfg.targets {
        Targets::All => data.kind.len(),
        Targets::Failures => data.failure_rows().len(),
    };

    let dir = open_out(out, "intervene", common)?;
    dir.write_config(&cfg)?;
    let report = InterveneReport {
        source: "world",
        readout: "world",
        spec,
        targets: cfg.targets,
        n_targets,
        truncated: None,
        rank: None,
        result,
    };
    print_summary(&report);
    dir.write_report("intervene.json", &report)?;
    Ok(Outcome::Success)
}

fn print_summary(r: &InterveneReport) {
    println!(
        "{:?} on {} ({} targets): delta {:+.2}pp, corrections {}, damages {}, McNemar p {:.4}{}",
        r.spec.kind,
        r.source,
        r.n_targets,
        r.result.delta_pp,
        r.result.outcomes.corrections(),
        r.result.outcomes.damages(),
        r.result.p_mcnemar,
        if r.truncated == Some(true) { " [rank truncated]" } else { "" }
    );
}
