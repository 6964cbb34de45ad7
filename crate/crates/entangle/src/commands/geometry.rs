use std::collections::BTreeMap;
use std::path::Path;

use entangle_core::archive::Mode;
use entangle_core::geometry::{contrastive_vector, mean_off_diagonal, pairwise_cosine, shared_direction, specificity_ratio, spread_ratio};
use entangle_core::rng::{derive_seed, streams};
use entangle_core::Matrix;
use serde::{Deserialize, Serialize};

use super::{failure_modes, layer_list, layer_means, load_archive, open_out, resolve};
use crate::cli::{Common, Outcome};
use crate::parallel;
use crate::report::Csv;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub layer: Option<usize>,
    /// Label permutations per layer; 0 skips the null.
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            layer: None,
            n_perm: 0,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub n_perm: usize,
    pub observed: f64,
    pub null_mean: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub layer: usize,
    pub modes: Vec<String>,
    pub n_correct: usize,
    pub n_per_mode: BTreeMap<String, usize>,
    /// Row/column order follows `modes`.
    pub cosine: Vec<Vec<f64>>,
    pub avg_pairwise_cosine: f64,
    pub specificity: BTreeMap<String, f64>,
    pub mean_specificity: f64,
    /// `None` for modes with fewer than two traces.
    pub spread_ratio: BTreeMap<String, Option<f64>>,
    pub centroid_gap: BTreeMap<String, f64>,
    pub permutation: Option<PermutationSummary>,
}

#[derive(Serialize)]
struct GeometryReport {
    layers: Vec<LayerGeometry>,
}

pub fn analyse_layer(archive: &entangle_core::archive::ActivationArchive, modes: &[Mode], layer: usize, cfg: &GeometryConfig) -> anyhow::Result<LayerGeometry> {
    let means = layer_means(archive, modes, layer)?;
    let names: Vec<String> = modes.iter().map(|m| m.as_str().to_owned()).collect();
    let vectors = means
        .modes
        .iter()
        .map(|(_, _, mu)| contrastive_vector(&means.correct, mu))
        .collect::<entangle_core::Result<Vec<_>>>()?;
    let shared = shared_direction(&vectors)?;
    let cos = pairwise_cosine(&vectors)?;
    let mut specificity = BTreeMap::new();
    let mut spread = BTreeMap::new();
    let mut n_per_mode = BTreeMap::new();
    let mut gap = BTreeMap::new();
    for ((name, v), (_, x, mu)) in names.iter().zip(&vectors).zip(&means.modes) {
        specificity.insert(name.clone(), specificity_ratio(v, &shared));
        spread.insert(name.clone(), spread_ratio(x, &means.correct, mu).ok());
        n_per_mode.insert(name.clone(), x.rows());
        gap.insert(name.clone(), entangle_core::linalg::norm(&entangle_core::linalg::sub(&means.correct, mu)));
    }
    let mean_specificity = specificity.values().sum::<f64>() / specificity.len() as f64;

    let permutation = if cfg.n_perm > 0 {
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut labels = Vec::new();
        for (i, (_, x, _)) in means.modes.iter().enumerate() {
            for r in x.iter_rows() {
                rows.push(r);
                labels.push(i);
            }
        }
        let states = Matrix::from_rows(&rows)?;
        let seed = derive_seed(cfg.seed, streams::PERMUTATION, layer as u64);
        let null = parallel::specificity_permutation_null(&states, &labels, &means.correct, cfg.n_perm, seed)?;
        Some(PermutationSummary {
            n_perm: cfg.n_perm,
            observed: null.observed,
            null_mean: null.null.iter().sum::<f64>() / null.null.len() as f64,
            p_value: null.p_value,
        })
    } else {
        None
    };
    let n_correct = archive.records.iter().filter(|r| r.mode == Mode::Correct).count();
    Ok(LayerGeometry {
        layer,
        modes: names,
        n_correct,
        n_per_mode,
        cosine: cos.iter_rows().map(<[f64]>::to_vec).collect(),
        avg_pairwise_cosine: mean_off_diagonal(&cos),
        specificity,
        mean_specificity,
        spread_ratio: spread,
        centroid_gap: gap,
        permutation,
    })
}

pub fn run(archive_path: &Path, out: &Path, layer: Option<usize>, common: &Common) -> anyhow::Result<Outcome> {
    let mut cfg: GeometryConfig = resolve(&GeometryConfig::default(), common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if layer.is_some() {
        cfg.layer = layer;
    }
    let archive = load_archive(archive_path)?;
    let modes = failure_modes(&archive);
    if modes.len() < 2 {
        let found: Vec<&str> = modes.iter().map(|m| m.as_str()).collect();
        anyhow::bail!("insufficient modes: geometry needs at least two failure modes among KD/RCB/OT, found {found:?}");
    }
    let layers = layer_list(&archive, cfg.layer)?;
    let mut out_layers = Vec::with_capacity(layers.len());
    for &l in &layers {
        out_layers.push(analyse_layer(&archive, &modes, l, &cfg)?);
    }

    let dir = open_out(out, "geometry", common)?;
    dir.write_config(&cfg)?;
    let mut summary = Csv::new(&["layer", "mode", "n", "specificity", "spread_ratio", "centroid_gap"]);
    for g in &out_layers {
        let mut header = vec!["mode"];
        header.extend(g.modes.iter().map(String::as_str));
        let mut m = Csv::new(&header);
        for (name, row) in g.modes.iter().zip(&g.cosine) {
            let mut cells = vec![name.clone()];
            cells.extend(row.iter().map(f64::to_string));
            m.push(cells);
        }
        dir.write_csv(&format!("cosine_L{}.csv", g.layer), &m)?;
        for name in &g.modes {
            summary.push([
                g.layer.to_string(),
                name.clone(),
                g.n_per_mode[name].to_string(),
                g.specificity[name].to_string(),
                g.spread_ratio[name].map_or(String::new(), |s| s.to_string()),
                g.centroid_gap[name].to_string(),
            ]);
        }
    }
    dir.write_csv("geometry.csv", &summary)?;
    for g in &out_layers {
        let spec: Vec<String> = g.specificity.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
        println!(
            "layer {}: avg pairwise cosine {:.3}, specificity {}",
            g.layer,
            g.avg_pairwise_cosine,
            spec.join(" ")
        );
    }
    dir.write_report("geometry.json", &GeometryReport { layers: out_layers })?;
    Ok(Outcome::Success)
}
