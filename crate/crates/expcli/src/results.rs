//! The experiment results table: a CSV file with a schema comment line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};

use crate::CliError;

pub const SCHEMA_LINE: &str = "# sensorgrade-results v1";

pub const COLUMNS: [&str; 20] = [
    "experiment",
    "row_key",
    "range",
    "fov",
    "iou",
    "rot",
    "hours_equiv",
    "n_train_scenes",
    "fine_tuned",
    "seed",
    "data_seed",
    "ade_m",
    "collision_rate",
    "n_steps",
    "n_collisions",
    "n_completed",
    "n_deviations",
    "status",
    "error",
    "wall_time_s",
];

/// Floats are written with the shortest representation that reads back
/// exactly, the same text the report shows.
fn float<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn opt_float<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&v.to_string()),
        None => s.serialize_str(""),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    /// Hash of everything needed to rerun this row; used by `--resume`.
    pub row_key: String,
    pub range: String,
    #[serde(serialize_with = "float")]
    pub fov: f64,
    #[serde(serialize_with = "float")]
    pub iou: f64,
    #[serde(serialize_with = "float")]
    pub rot: f64,
    #[serde(serialize_with = "float")]
    pub hours_equiv: f64,
    pub n_train_scenes: usize,
    pub fine_tuned: bool,
    pub seed: u64,
    pub data_seed: u64,
    #[serde(serialize_with = "opt_float")]
    pub ade_m: Option<f64>,
    #[serde(serialize_with = "opt_float")]
    pub collision_rate: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_collisions: Option<usize>,
    pub n_completed: Option<usize>,
    pub n_deviations: Option<usize>,
    pub status: RowStatus,
    pub error: String,
    #[serde(serialize_with = "float")]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Results(format!("{}: {e}", path.display()))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Reads a results file, checking the schema line and naming any missing
/// column.
pub fn read_table(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| io_error(path, e))?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(CliError::Results(format!(
            "{}: expected schema line `{SCHEMA_LINE}`, found `{}`",
            path.display(),
            first.trim_end()
        )));
    }
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers().map_err(|e| csv_error(path, e))?.clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(CliError::Results(format!("{}: missing column `{col}`", path.display())));
        }
    }
    csv.deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Appends rows one at a time, flushing after each so that an interrupted
/// run leaves a valid, resumable file.
pub struct TableWriter {
    path: PathBuf,
    file: File,
}

impl TableWriter {
    /// Starts a new table, or with `resume` continues an existing one and
    /// returns the keys of its successful rows.
    pub fn open(path: &Path, resume: bool) -> Result<(Self, HashSet<String>), CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        if resume && path.exists() {
            let done = read_table(path)?
                .into_iter()
                .filter(|r| r.status == RowStatus::Ok)
                .map(|r| r.row_key)
                .collect();
            let file = OpenOptions::new().append(true).open(path).map_err(|e| io_error(path, e))?;
            return Ok((
                Self {
                    path: path.to_path_buf(),
                    file,
                },
                done,
            ));
        }
        let mut file = File::create(path).map_err(|e| io_error(path, e))?;
        writeln!(file, "{SCHEMA_LINE}\n{}", COLUMNS.join(",")).map_err(|e| io_error(path, e))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            HashSet::new(),
        ))
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(row).map_err(|e| csv_error(&self.path, e))?;
        let bytes = w.into_inner().map_err(|e| CliError::Results(e.to_string()))?;
        self.file.write_all(&bytes).map_err(|e| io_error(&self.path, e))?;
        self.file.flush().map_err(|e| io_error(&self.path, e))
    }
}
