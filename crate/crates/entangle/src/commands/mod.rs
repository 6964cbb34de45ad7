//! One module per subcommand. Each `run` resolves its config, writes
//! `config.resolved.json` plus its reports into `--out`, and prints a short
//! summary to stdout.

pub mod geometry;
pub mod intervene;
pub mod probe;
pub mod regimes;
pub mod repro_gap;
pub mod selective;
pub mod testbed;
pub mod validate;

use std::path::Path;

use anyhow::Context;
use entangle_core::archive::{ActivationArchive, Mode};
use entangle_core::linalg::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cli::Common;
use crate::config;
use crate::report::OutputDir;

pub(crate) fn load_archive(path: &Path) -> anyhow::Result<ActivationArchive> {
    crate::io::read_archive(path).with_context(|| format!("reading archive {}", path.display()))
}

pub(crate) fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, common: &Common) -> anyhow::Result<T> {
    Ok(config::resolve(defaults, common.config.as_deref())?)
}

pub(crate) fn open_out(out: &Path, command: &str, common: &Common) -> anyhow::Result<OutputDir> {
    OutputDir::create(out, command, !common.no_timestamp).with_context(|| format!("creating {}", out.display()))
}

/// Layers to analyse: the requested one, or all of them.
pub(crate) fn layer_list(archive: &ActivationArchive, layer: Option<usize>) -> anyhow::Result<Vec<usize>> {
    match layer {
        Some(l) if l >= archive.n_layers() => {
            anyhow::bail!("layer {l} out of range (archive has {} layers)", archive.n_layers())
        }
        Some(l) => Ok(vec![l]),
        None => Ok((0..archive.n_layers()).collect()),
    }
}

/// Failure modes (KD, RCB, OT) with at least one trace, in that order.
pub(crate) fn failure_modes(archive: &ActivationArchive) -> Vec<Mode> {
    let present = archive.modes_present();
    Mode::FAILURES.into_iter().filter(|m| present.contains(m)).collect()
}

/// Class means at one layer: the correct centroid and one per listed mode.
pub(crate) struct LayerMeans {
    pub correct: Vec<f64>,
    pub modes: Vec<(Mode, Matrix, Vec<f64>)>,
}

pub(crate) fn layer_means(archive: &ActivationArchive, modes: &[Mode], layer: usize) -> anyhow::Result<LayerMeans> {
    let (c, _) = archive.select(|r| r.mode == Mode::Correct, layer)?;
    if c.rows() == 0 {
        anyhow::bail!("archive has no correct traces");
    }
    let mut out = Vec::with_capacity(modes.len());
    for &m in modes {
        let (x, _) = archive.select(|r| r.mode == m, layer)?;
        let mean = x.column_means();
        out.push((m, x, mean));
    }
    Ok(LayerMeans {
        correct: c.column_means(),
        modes: out,
    })
}
