//! Output directories: JSON reports, CSV sidecars and the resolved config.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Report envelope. `timestamp` is omitted under `--no-timestamp` so that
/// reruns are byte-identical.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    report: &'a T,
}

pub struct OutputDir {
    root: PathBuf,
    command: String,
    timestamp: Option<u64>,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, with_timestamp: bool) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        let timestamp = with_timestamp.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Ok(OutputDir {
            root: root.to_path_buf(),
            command: command.into(),
            timestamp,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> std::io::Result<()> {
        write_json(&self.path(RESOLVED_CONFIG), config)
    }

    pub fn write_report<T: Serialize>(&self, name: &str, report: &T) -> std::io::Result<()> {
        let env = Envelope {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: self.timestamp,
            report,
        };
        write_json(&self.path(name), &env)
    }

    pub fn write_csv(&self, name: &str, table: &Csv) -> std::io::Result<()> {
        fs::write(self.path(name), table.render())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}

/// Minimal CSV table. Cells containing a comma, quote or newline are quoted.
pub struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_owned()
    }
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Panics if the row width differs from the header.
    pub fn push<I, D>(&mut self, row: I)
    where
        I: IntoIterator<Item = D>,
        D: Display,
    {
        let row: Vec<String> = row.into_iter().map(|d| d.to_string()).collect();
        assert_eq!(row.len(), self.header.len(), "csv row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = line.iter().map(|c| escape(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
