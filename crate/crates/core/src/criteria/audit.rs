use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the run audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditRecord {
    /// A criterion evaluation during optimization.
    Candidate {
        strategy: String,
        addition: usize,
        candidate: Vec<f64>,
        score: f64,
        accepted: bool,
    },
    /// A point added to the design and evaluated on the true model.
    Addition {
        strategy: String,
        addition: usize,
        point: Vec<f64>,
        evaluation: Vec<f64>,
        score: f64,
        design_size: usize,
        forward_runs: usize,
        q2: Option<f64>,
    },
    /// True-model runs of the initial design.
    InitialDesign { size: usize, forward_runs: usize },
}

/// Append-only JSONL writer.
pub struct AuditLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl AuditLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(AuditLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &AuditRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::parse(&self.path, e))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<AuditRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", k + 1))))
            .collect()
    }
}
