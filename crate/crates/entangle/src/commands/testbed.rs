use std::path::Path;

use entangle_core::testbed::{build_world, export_archive, measured_specificity, sample_modes, TraceKind, WorldConfig};
use serde::{Deserialize, Serialize};

use super::{open_out, resolve};
use crate::cli::{Common, Outcome};

/// Archive directory written inside `--out`.
pub const ARCHIVE_DIR: &str = "archive";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub world: WorldConfig,
    pub n_correct: usize,
    pub n_ot: usize,
    pub n_kd: usize,
    /// Seed for the samples; the world geometry uses `world.seed`.
    pub sample_seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            world: WorldConfig::default(),
            n_correct: 2000,
            n_ot: 2000,
            n_kd: 2000,
            sample_seed: 42,
        }
    }
}

#[derive(Serialize)]
struct TestbedReport {
    rho: f64,
    measured_specificity: f64,
    n_traces: usize,
    accuracy: f64,
    archive: String,
}

pub fn run(out: &Path, rho: Option<f64>, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: TestbedConfig = resolve(&TestbedConfig::default(), common)?;
    if let Some(r) = rho {
        cfg.world.rho = r;
    }
    if let Some(s) = common.seed {
        cfg.world.seed = s;
        cfg.sample_seed = s;
    }
    let world = build_world(&cfg.world)?;
    let data = sample_modes(
        &world,
        &[
            (TraceKind::Correct, cfg.n_correct),
            (TraceKind::Ot, cfg.n_ot),
            (TraceKind::Kd, cfg.n_kd),
        ],
        cfg.world.sigma,
        cfg.sample_seed,
    )?;
    let spec = measured_specificity(&data)?;
    let archive = export_archive(&world, &data)?;

    let dir = open_out(out, "testbed", common)?;
    dir.write_config(&cfg)?;
    crate::io::write_archive(&archive, &dir.path(ARCHIVE_DIR))?;
    let report = TestbedReport {
        rho: cfg.world.rho,
        measured_specificity: spec,
        n_traces: archive.n_traces(),
        accuracy: data.accuracy(),
        archive: ARCHIVE_DIR.into(),
    };
    println!(
        "planted rho {:.3}, measured specificity {:.4}; {} traces written to {}",
        report.rho,
        spec,
        report.n_traces,
        dir.path(ARCHIVE_DIR).display()
    );
    dir.write_report("testbed.json", &report)?;
    Ok(Outcome::Success)
}
