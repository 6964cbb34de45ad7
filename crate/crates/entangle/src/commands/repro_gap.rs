use std::path::Path;

use entangle_core::testbed::GapConfig;

use super::{open_out, resolve};
use crate::cli::{Common, Outcome};
use crate::parallel;
use crate::report::Csv;

pub fn run(out: &Path, grid: Option<Vec<f64>>, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: GapConfig = resolve(&GapConfig::default(), common)?;
    if let Some(g) = grid {
        cfg.grid = g;
    }
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    let report = parallel::gap_suite(&cfg)?;

    let dir = open_out(out, "repro-gap", common)?;
    dir.write_config(&cfg)?;
    let mut cells = Csv::new(&[
        "seed",
        "rho",
        "baseline_accuracy",
        "probe_balanced_accuracy",
        "alpha",
        "targeted_delta_pp",
        "targeted_p",
        "uniform_delta_pp",
        "uniform_p",
        "erase_df_delta_pp",
        "random_damage_p95",
        "specificity",
    ]);
    for c in &report.cells {
        cells.push([
            c.seed.to_string(),
            c.rho.to_string(),
            c.baseline_accuracy.to_string(),
            c.probe_balanced_accuracy.to_string(),
            c.alpha.to_string(),
            c.targeted.delta_pp.to_string(),
            c.targeted.p_mcnemar.to_string(),
            c.uniform.delta_pp.to_string(),
            c.uniform.p_mcnemar.to_string(),
            c.erase_df.delta_pp.to_string(),
            c.random_damage_p95.to_string(),
            c.specificity.to_string(),
        ]);
    }
    dir.write_csv("gap_cells.csv", &cells)?;
    let mut inv = Csv::new(&["name", "passed", "skipped", "detail"]);
    for i in &report.invariants {
        inv.push([i.name.clone(), i.passed.to_string(), i.skipped.to_string(), i.detail.clone()]);
    }
    dir.write_csv("invariants.csv", &inv)?;
    dir.write_report("gap_report.json", &report)?;

    for i in &report.invariants {
        let tag = if i.skipped {
            "SKIP"
        } else if i.passed {
            "PASS"
        } else {
            "FAIL"
        };
        println!("{tag} {}: {}", i.name, i.detail);
        if i.skipped {
            eprintln!("notice: {} skipped: {}", i.name, i.detail);
        }
    }
    if report.passed {
        println!("gap suite passed");
        Ok(Outcome::Success)
    } else {
        eprintln!("gap suite failed: {}", report.failing().join(", "));
        Ok(Outcome::Failed)
    }
}
