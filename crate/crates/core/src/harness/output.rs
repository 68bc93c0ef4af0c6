//! Writing result sets to disk and reading them back.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CellSummary, ResultSet, TrialReport, TrialTiming};
use crate::error::{Error, Result};

/// Layout of the data files.
///
/// `Csv` writes `trials.csv` and `summary.csv`; `Json` writes `trials.jsonl`
/// and `summary.json`. Timings always go to `timings.json`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WrittenFiles {
    pub trials: PathBuf,
    pub summary: PathBuf,
    pub timings: PathBuf,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes the result set into `dir`, creating it if needed.
pub fn write_results(dir: &Path, results: &ResultSet, format: Format) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir)?;
    let files = match format {
        Format::Csv => {
            let files = WrittenFiles {
                trials: dir.join("trials.csv"),
                summary: dir.join("summary.csv"),
                timings: dir.join("timings.json"),
            };
            write_csv(&files.trials, &results.reports)?;
            write_csv(&files.summary, &results.summaries)?;
            files
        }
        Format::Json => {
            let files = WrittenFiles {
                trials: dir.join("trials.jsonl"),
                summary: dir.join("summary.json"),
                timings: dir.join("timings.json"),
            };
            let mut w = BufWriter::new(File::create(&files.trials)?);
            for r in &results.reports {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            write_json(&files.summary, &results.summaries)?;
            files
        }
    };
    write_json(&files.timings, &results.timings)?;
    Ok(files)
}

pub fn load_trials_csv(path: &Path) -> Result<Vec<TrialReport>> {
    read_csv(path)
}

pub fn load_trials_jsonl(path: &Path) -> Result<Vec<TrialReport>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn load_summary_csv(path: &Path) -> Result<Vec<CellSummary>> {
    read_csv(path)
}

pub fn load_summary_json(path: &Path) -> Result<Vec<CellSummary>> {
    read_json(path)
}

pub fn load_timings(path: &Path) -> Result<Vec<TrialTiming>> {
    read_json(path)
}
