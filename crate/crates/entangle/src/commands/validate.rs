use std::path::Path;

use serde::Serialize;

use super::open_out;
use crate::cli::{Common, Outcome};
use crate::io::read_archive;

#[derive(Serialize)]
struct ValidateConfig<'a> {
    archive: &'a Path,
}

#[derive(Serialize)]
struct ValidateReport {
    valid: bool,
    error: Option<String>,
    n_traces: Option<usize>,
    n_layers: Option<usize>,
    hidden_dim: Option<usize>,
    has_unembedding: bool,
}

pub fn run(archive: &Path, out: Option<&Path>, common: &Common) -> anyhow::Result<Outcome> {
    let result = read_archive(archive);
    let report = match &result {
        Ok(a) => ValidateReport {
            valid: true,
            error: None,
            n_traces: Some(a.n_traces()),
            n_layers: Some(a.n_layers()),
            hidden_dim: Some(a.hidden_dim()),
            has_unembedding: a.unembedding.is_some(),
        },
        Err(e) => ValidateReport {
            valid: false,
            error: Some(e.to_string()),
            n_traces: None,
            n_layers: None,
            hidden_dim: None,
            has_unembedding: false,
        },
    };
    if let Some(out) = out {
        let dir = open_out(out, "validate", common)?;
        dir.write_config(&ValidateConfig { archive })?;
        dir.write_report("validate.json", &report)?;
    }
    match result {
        Ok(a) => {
            println!(
                "valid: {} traces × {} layers × {} dims",
                a.n_traces(),
                a.n_layers(),
                a.hidden_dim()
            );
            Ok(Outcome::Success)
        }
        Err(e) => {
            eprintln!("invalid archive {}: {e}", archive.display());
            Ok(Outcome::Failed)
        }
    }
}
