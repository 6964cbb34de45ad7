use std::path::Path;

use entangle_core::archive::{ActivationArchive, Mode};
use entangle_core::probes::{cross_validate, fit_probe, CvResult, CvScheme, ProbeConfig, ProbeModel};
use entangle_core::rng::{streams, Rng};
use serde::{Deserialize, Serialize};

use super::{layer_list, load_archive, open_out, resolve};
use crate::cli::{Common, Outcome, Task};
use crate::report::{write_json, Csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvKind {
    /// Folds by question_id.
    Group,
    Stratified,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeCmdConfig {
    pub task: Task,
    pub layer: Option<usize>,
    pub cv: CvKind,
    pub folds: usize,
    /// Permute labels before fitting; the chance-level control.
    pub shuffle_labels: bool,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for ProbeCmdConfig {
    fn default() -> Self {
        ProbeCmdConfig {
            task: Task::BinaryOt,
            layer: None,
            cv: CvKind::Group,
            folds: 5,
            shuffle_labels: false,
            probe: ProbeConfig::default(),
            seed: 42,
        }
    }
}

/// Rows, labels and class names for a task.
pub struct TaskData {
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

pub fn task_data(archive: &ActivationArchive, task: Task) -> anyhow::Result<TaskData> {
    let recs = &archive.records;
    let (rows, labels, classes): (Vec<usize>, Vec<usize>, Vec<&str>) = match task {
        Task::BinaryOt => {
            let rows: Vec<usize> = (0..recs.len()).filter(|&i| !recs[i].is_correct).collect();
            let labels = rows.iter().map(|&i| usize::from(recs[i].mode == Mode::Ot)).collect();
            (rows, labels, vec!["non-OT", "OT"])
        }
        Task::ThreeWay => {
            let order = [Mode::Kd, Mode::Rcb, Mode::Ot];
            let rows: Vec<usize> = (0..recs.len()).filter(|&i| order.contains(&recs[i].mode)).collect();
            let labels = rows
                .iter()
                .map(|&i| order.iter().position(|m| *m == recs[i].mode).expect("filtered"))
                .collect();
            (rows, labels, vec!["KD", "RCB", "OT"])
        }
        Task::Correctness => {
            let rows: Vec<usize> = (0..recs.len()).collect();
            let labels = rows.iter().map(|&i| usize::from(recs[i].is_correct)).collect();
            (rows, labels, vec!["incorrect", "correct"])
        }
    };
    let missing: Vec<&str> = classes
        .iter()
        .enumerate()
        .filter(|(c, _)| !labels.contains(c))
        .map(|(_, n)| *n)
        .collect();
    if !missing.is_empty() {
        anyhow::bail!("missing modes for task {task:?}: no traces labelled {missing:?}");
    }
    Ok(TaskData {
        rows,
        labels,
        classes: classes.into_iter().map(String::from).collect(),
    })
}

#[derive(Serialize)]
struct LayerResult {
    layer: usize,
    cv: CvResult,
}

#[derive(Serialize)]
struct ProbeReport {
    task: Task,
    n: usize,
    classes: Vec<String>,
    class_counts: Vec<usize>,
    /// Balanced accuracy of a label-blind classifier, with a 95% binomial
    /// band at this sample size.
    chance: f64,
    chance_band: (f64, f64),
    layers: Vec<LayerResult>,
    best_layer: usize,
    best_balanced_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ProbeBundle {
    pub task: Task,
    pub layer: usize,
    pub model: ProbeModel,
}

pub fn run(archive_path: &Path, out: &Path, task: Option<Task>, layer: Option<usize>, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: ProbeCmdConfig = resolve(&ProbeCmdConfig::default(), common)?;
    if let Some(t) = task {
        cfg.task = t;
    }
    if layer.is_some() {
        cfg.layer = layer;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let archive = load_archive(archive_path)?;
    let layers = layer_list(&archive, cfg.layer)?;
    let mut data = task_data(&archive, cfg.task)?;
    if cfg.shuffle_labels {
        Rng::derived(cfg.seed, streams::PERMUTATION, 0).shuffle(&mut data.labels);
    }
    let scheme = match cfg.cv {
        CvKind::Stratified => CvScheme::Stratified,
        CvKind::Group => CvScheme::Group(data.rows.iter().map(|&i| archive.records[i].question_id.clone()).collect()),
    };

    let mut results = Vec::with_capacity(layers.len());
    for &l in &layers {
        let x = archive.rows_at(&data.rows, l)?;
        let cv = cross_validate(&x, &data.labels, &data.classes, cfg.folds, &scheme, cfg.seed, &cfg.probe)?;
        results.push(LayerResult { layer: l, cv });
    }
    let best = results
        .iter()
        .fold(&results[0], |b, r| if r.cv.mean_balanced_accuracy > b.cv.mean_balanced_accuracy { r } else { b });
    let best_layer = best.layer;
    let best_ba = best.cv.mean_balanced_accuracy;

    let x = archive.rows_at(&data.rows, best_layer)?;
    let model = fit_probe(&x, &data.labels, &data.classes, &cfg.probe)?;

    let n = data.labels.len();
    let k = data.classes.len();
    let chance = 1.0 / k as f64;
    let half = 1.96 * (chance * (1.0 - chance) / n as f64).sqrt();
    let class_counts = (0..k).map(|c| data.labels.iter().filter(|&&l| l == c).count()).collect();

    let dir = open_out(out, "probe", common)?;
    dir.write_config(&cfg)?;
    let mut t = Csv::new(&["layer", "accuracy", "sd_accuracy", "balanced_accuracy", "sd_balanced_accuracy"]);
    for r in &results {
        t.push([r.layer as f64, r.cv.mean_accuracy, r.cv.sd_accuracy, r.cv.mean_balanced_accuracy, r.cv.sd_balanced_accuracy]);
    }
    dir.write_csv("probe_layers.csv", &t)?;
    write_json(
        &dir.path("probe_bundle.json"),
        &ProbeBundle {
            task: cfg.task,
            layer: best_layer,
            model,
        },
    )?;
    let report = ProbeReport {
        task: cfg.task,
        n,
        classes: data.classes,
        class_counts,
        chance,
        chance_band: (chance - half, chance + half),
        layers: results,
        best_layer,
        best_balanced_accuracy: best_ba,
    };
    dir.write_report("probe.json", &report)?;
    println!(
        "{:?}: best layer {best_layer}, balanced accuracy {best_ba:.4} (chance {chance:.3})",
        cfg.task
    );
    Ok(Outcome::Success)
}
