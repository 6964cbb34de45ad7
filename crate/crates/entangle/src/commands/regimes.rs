use std::collections::BTreeMap;
use std::path::Path;

use entangle_core::archive::TraceRecord;
use entangle_core::regimes::{label_regimes, threshold_sweep, within_question_purity, Purity, Regime, RegimeConfig, SweepRow};
use serde::{Deserialize, Serialize};

use super::{load_archive, open_out, resolve};
use crate::cli::{Common, Outcome, UsageError};
use crate::report::Csv;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimesConfig {
    pub regime: RegimeConfig,
    pub rate_grid: Vec<f64>,
    pub length_grid: Vec<u32>,
}

impl Default for RegimesConfig {
    fn default() -> Self {
        RegimesConfig {
            regime: RegimeConfig::default(),
            rate_grid: vec![0.5, 0.6, 0.7],
            length_grid: vec![100, 200, 300],
        }
    }
}

#[derive(Serialize)]
struct RegimesReport {
    n_traces: usize,
    counts: BTreeMap<&'static str, usize>,
    ot_questions: Vec<String>,
    purity: Purity,
    sweep: Vec<SweepRow>,
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Ot => "OT",
        Regime::NonOtIncorrect => "non-OT-incorrect",
        Regime::Correct => "correct",
    }
}

pub fn run(archive: Option<&Path>, traces: Option<&Path>, out: &Path, common: &Common) -> anyhow::Result<Outcome> {
    let cfg: RegimesConfig = resolve(&RegimesConfig::default(), common)?;
    let records: Vec<TraceRecord> = match (archive, traces) {
        (Some(a), None) => load_archive(a)?.records,
        (None, Some(t)) => crate::io::read_trace_records(t)?,
        _ => return Err(UsageError("pass exactly one of --archive or --traces".into()).into()),
    };
    let labels = label_regimes(&records, &cfg.regime)?;
    let purity = within_question_purity(&labels, &records)?;
    let sweep = threshold_sweep(&records, &cfg.rate_grid, &cfg.length_grid, &cfg.regime)?;

    let dir = open_out(out, "regimes", common)?;
    dir.write_config(&cfg)?;
    let mut counts = BTreeMap::new();
    for r in [Regime::Ot, Regime::NonOtIncorrect, Regime::Correct] {
        counts.insert(regime_name(r), labels.count(r));
    }
    let report = RegimesReport {
        n_traces: records.len(),
        counts,
        ot_questions: labels.ot_questions().into_iter().collect(),
        purity,
        sweep: sweep.clone(),
    };
    dir.write_report("regimes.json", &report)?;

    let mut t = Csv::new(&["trace_id", "question_id", "mode", "regime"]);
    for (r, reg) in records.iter().zip(&labels.regimes) {
        t.push([r.trace_id.as_str(), &r.question_id, r.mode.as_str(), regime_name(*reg)]);
    }
    dir.write_csv("regimes.csv", &t)?;
    let mut s = Csv::new(&["rate", "length", "ot_count", "jaccard"]);
    for row in &sweep {
        s.push([row.rate.to_string(), row.length.to_string(), row.ot_count.to_string(), row.jaccard.to_string()]);
    }
    dir.write_csv("sweep.csv", &s)?;

    println!(
        "{} traces: {} OT, {} non-OT incorrect, {} correct; {} OT questions",
        records.len(),
        report.counts["OT"],
        report.counts["non-OT-incorrect"],
        report.counts["correct"],
        report.ot_questions.len()
    );
    Ok(Outcome::Success)
}
