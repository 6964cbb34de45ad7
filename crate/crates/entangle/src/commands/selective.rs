use std::collections::BTreeMap;
use std::path::Path;

use entangle_core::archive::{group_split, ActivationArchive};
use entangle_core::geometry::contrastive_vector;
use entangle_core::probes::{evaluate_probe, fit_probe, ProbeConfig};
use entangle_core::selective::{
    auroc, baselines, coverage_curve, default_coverage_grid, lap_a_lin, lap_top_tokens, CoveragePoint, LapProfile, ScoredTrace,
};
use entangle_core::stats::{paired_bootstrap_delta_auroc, DeltaAuroc};
use entangle_core::rng::{derive_seed, streams};
use serde::{Deserialize, Serialize};

use super::{load_archive, open_out, resolve};
use crate::cli::{Common, Outcome};
use crate::report::Csv;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectiveConfig {
    /// Layer for the probe score; the middle layer when `None`.
    pub layer: Option<usize>,
    pub folds: usize,
    pub coverage_grid: Vec<f64>,
    pub n_boot: usize,
    /// Compute the linear accessibility profile over every layer.
    pub lap: bool,
    pub top_k_tokens: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for SelectiveConfig {
    fn default() -> Self {
        SelectiveConfig {
            layer: None,
            folds: 5,
            coverage_grid: default_coverage_grid(),
            n_boot: 1000,
            lap: true,
            top_k_tokens: 10,
            probe: ProbeConfig::default(),
            seed: 42,
        }
    }
}

#[derive(Serialize)]
struct ScoreSummary {
    auroc: f64,
    coverage: Vec<CoveragePoint>,
}

#[derive(Serialize)]
struct SelectiveReport {
    layer: usize,
    n: usize,
    base_accuracy: f64,
    scores: BTreeMap<String, ScoreSummary>,
    /// Baselines some trace could not provide; they are not scored.
    missing_baselines: Vec<String>,
    /// Probe AUROC minus each baseline's, paired bootstrap.
    probe_vs_baseline: BTreeMap<String, DeltaAuroc>,
    lap: Option<LapProfile>,
}

/// Out-of-fold probability of correctness, folds grouped by question.
pub fn cross_fitted_probe_scores(archive: &ActivationArchive, layer: usize, folds: usize, seed: u64, cfg: &ProbeConfig) -> anyhow::Result<Vec<f64>> {
    let x = archive.layer_matrix(layer)?;
    let y: Vec<usize> = archive.records.iter().map(|r| usize::from(r.is_correct)).collect();
    let classes = ["incorrect".to_string(), "correct".to_string()];
    let mut scores = vec![f64::NAN; y.len()];
    for test in group_split(&archive.records, folds, seed)? {
        let mut in_test = vec![false; y.len()];
        for &i in &test {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..y.len()).filter(|&i| !in_test[i]).collect();
        let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let model = fit_probe(&x.select_rows(&train), &ytr, &classes, cfg)?;
        for (&i, p) in test.iter().zip(model.positive_probability(&x.select_rows(&test))?) {
            scores[i] = p;
        }
    }
    Ok(scores)
}

fn scored(archive: &ActivationArchive, scores: &[f64]) -> Vec<ScoredTrace> {
    archive
        .records
        .iter()
        .zip(scores)
        .map(|(r, &s)| ScoredTrace {
            trace_id: r.trace_id.clone(),
            score: s,
            is_correct: r.is_correct,
        })
        .collect()
}

pub fn run(archive_path: &Path, out: &Path, layer: Option<usize>, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: SelectiveConfig = resolve(&SelectiveConfig::default(), common)?;
    if layer.is_some() {
        cfg.layer = layer;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let archive = load_archive(archive_path)?;
    let layer = cfg.layer.unwrap_or(archive.n_layers() / 2);
    if layer >= archive.n_layers() {
        anyhow::bail!("layer {layer} out of range (archive has {} layers)", archive.n_layers());
    }
    let labels: Vec<bool> = archive.records.iter().map(|r| r.is_correct).collect();
    let n = labels.len();

    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    columns.insert("probe".into(), cross_fitted_probe_scores(&archive, layer, cfg.folds, cfg.seed, &cfg.probe)?);
    let mut base_cols: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    for (i, r) in archive.records.iter().enumerate() {
        let h: Vec<f64> = archive.state(i, layer).iter().map(|&v| f64::from(v)).collect();
        let b = baselines(r.aux.as_ref(), Some(&h))?;
        for (name, v) in [
            ("neg_entropy", b.neg_entropy),
            ("max_prob", b.max_prob),
            ("logit_margin", b.logit_margin),
            ("hidden_norm", b.hidden_norm),
        ] {
            base_cols.entry(name).or_default().push(v);
        }
    }
    let mut missing = Vec::new();
    for (name, col) in base_cols {
        match col.into_iter().collect::<Option<Vec<f64>>>() {
            Some(v) => {
                columns.insert(name.into(), v);
            }
            None => missing.push(name.to_string()),
        }
    }

    let mut summaries = BTreeMap::new();
    for (name, s) in &columns {
        summaries.insert(
            name.clone(),
            ScoreSummary {
                auroc: auroc(s, &labels)?,
                coverage: coverage_curve(&scored(&archive, s), &cfg.coverage_grid)?,
            },
        );
    }
    let mut deltas = BTreeMap::new();
    for (name, s) in columns.iter().filter(|(k, _)| k.as_str() != "probe") {
        let seed = derive_seed(cfg.seed, streams::BOOTSTRAP, deltas.len() as u64);
        deltas.insert(name.clone(), paired_bootstrap_delta_auroc(&columns["probe"], s, &labels, cfg.n_boot, seed)?);
    }

    let lap = if cfg.lap {
        let mut profile = LapProfile::default();
        let w = archive.unembedding_matrix();
        let y: Vec<usize> = labels.iter().map(|&c| usize::from(c)).collect();
        let classes = ["incorrect".to_string(), "correct".to_string()];
        for l in 0..archive.n_layers() {
            let x = archive.layer_matrix(l)?;
            let (xc, _) = archive.select(|r| r.is_correct, l)?;
            let (xi, _) = archive.select(|r| !r.is_correct, l)?;
            let dir = contrastive_vector(&xc.column_means(), &xi.column_means())?;
            let a_lin = lap_a_lin(&x, &labels, &dir)?;
            let model = fit_probe(&x, &y, &classes, &cfg.probe)?;
            let a_mlp = evaluate_probe(&model, &x, &y)?.accuracy;
            let tokens = match (&w, &archive.vocab) {
                (Some(w), Some(v)) => lap_top_tokens(&dir, Some(w), v, cfg.top_k_tokens.min(v.len()))?,
                _ => Vec::new(),
            };
            profile.push(l, a_lin, a_mlp, tokens);
        }
        Some(profile)
    } else {
        None
    };

    let dir = open_out(out, "selective", common)?;
    dir.write_config(&cfg)?;
    for (name, s) in &summaries {
        let mut t = Csv::new(&["coverage", "accuracy", "delta_pp"]);
        for p in &s.coverage {
            t.push([p.coverage, p.accuracy, p.delta_pp]);
        }
        dir.write_csv(&format!("coverage_{name}.csv"), &t)?;
    }
    if let Some(p) = &lap {
        let mut t = Csv::new(&["layer", "a_lin", "a_mlp", "gap"]);
        for l in &p.layers {
            t.push([l.layer as f64, l.a_lin, l.a_mlp, l.gap]);
        }
        dir.write_csv("lap.csv", &t)?;
    }
    for (name, s) in &summaries {
        println!("{name}: AUROC {:.4}", s.auroc);
    }
    let report = SelectiveReport {
        layer,
        n,
        base_accuracy: labels.iter().filter(|&&c| c).count() as f64 / n as f64,
        scores: summaries,
        missing_baselines: missing,
        probe_vs_baseline: deltas,
        lap,
    };
    dir.write_report("selective.json", &report)?;
    Ok(Outcome::Success)
}
