//! Report lines, summary table and data files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use renv_core::stationarity::ComparisonReport;
use renv_core::Normalizer;

/// One line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Entry {
    Check(ComparisonReport),
    Normalizer {
        model: String,
        status: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error_bound: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        pass: bool,
    },
    Note {
        model: String,
        message: String,
    },
}

impl Entry {
    pub fn normalizer(model: &str, n: &Normalizer, pass: bool) -> Self {
        match n {
            Normalizer::Finite { value, error_bound } => Entry::Normalizer {
                model: model.to_string(),
                status: "finite",
                value: Some(*value),
                error_bound: Some(*error_bound),
                reason: None,
                pass,
            },
            Normalizer::Divergent { reason } => Entry::Normalizer {
                model: model.to_string(),
                status: "divergent",
                value: None,
                error_bound: None,
                reason: Some(reason.to_string()),
                pass,
            },
        }
    }

    pub fn note(model: &str, message: impl Into<String>) -> Self {
        Entry::Note { model: model.to_string(), message: message.into() }
    }

    /// Notes carry no verdict.
    pub fn pass(&self) -> Option<bool> {
        match self {
            Entry::Check(c) => Some(c.pass),
            Entry::Normalizer { pass, .. } => Some(*pass),
            Entry::Note { .. } => None,
        }
    }
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self { file: file.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Plain `Display` of floats is shortest round-trip, so files are stable.
pub fn num(v: f64) -> String {
    v.to_string()
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub entries: Vec<Entry>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass() != Some(false))
    }

    pub fn extend(&mut self, other: Outcome) {
        self.entries.extend(other.entries);
        self.tables.extend(other.tables);
    }
}

/// Writes `report.jsonl`, `summary.csv` and every table into `dir`.
pub fn write_outcome(dir: &Path, outcome: &Outcome) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let report = dir.join("report.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&report)?);
    for e in &outcome.entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    written.push(report);

    let summary = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["model", "test", "statistic", "value", "threshold", "pass"])?;
    for e in &outcome.entries {
        match e {
            Entry::Check(c) => {
                let stat = serde_json::to_value(c.statistic)?;
                let stat = stat.as_str().unwrap_or_default().to_string();
                w.write_record([c.model.clone(), c.test.clone(), stat, num(c.value), num(c.threshold), c.pass.to_string()])?;
            }
            Entry::Normalizer { model, status, value, pass, .. } => {
                let v = value.map(num).unwrap_or_else(|| String::from("inf"));
                w.write_record([model.clone(), format!("xi_{status}"), String::from("normalizer"), v, String::new(), pass.to_string()])?;
            }
            Entry::Note { .. } => {}
        }
    }
    w.flush()?;
    written.push(summary);

    for t in &outcome.tables {
        let path = dir.join(&t.file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
