//! Structured per-stage audit log: `<audit dir>/<stage>.jsonl`, one terminal
//! record per triplet. Each run of a stage replaces its log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Kept,
    Rejected,
    Indeterminate,
    Grounded,
    Generated,
    Scored,
    Prepared,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub stage: String,
    /// Absent for input rows that never became a triplet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet_id: Option<String>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AuditRecord {
    pub fn new(stage: &str, triplet_id: impl Into<String>, status: Status) -> Self {
        Self {
            stage: stage.to_string(),
            triplet_id: Some(triplet_id.into()),
            status,
            detail: Value::Null,
            error: None,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn with_error(mut self, error: impl ToString) -> Self {
        self.error = Some(error.to_string());
        self
    }
}

pub struct AuditLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl AuditLog {
    /// Truncates and opens the log of `stage`.
    pub fn create(dir: &Path, stage: &str) -> CliResult<Self> {
        crate::config::ensure_dir(dir)?;
        let path = dir.join(format!("{stage}.jsonl"));
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &AuditRecord) -> CliResult<()> {
        let line = serde_json::to_string(record).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn append_all<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a AuditRecord>,
    ) -> CliResult<()> {
        for r in records {
            self.append(r)?;
        }
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_log(path: &Path) -> CliResult<Vec<AuditRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerun_truncates() {
        let dir = tempfile::tempdir().unwrap();
        for _ in 0..2 {
            let mut log = AuditLog::create(dir.path(), "filter").unwrap();
            let recs = [
                AuditRecord::new("filter", "a", Status::Kept),
                AuditRecord::new("filter", "b", Status::Rejected).with_error("x"),
            ];
            log.append_all(&recs).unwrap();
        }
        let back = read_log(&dir.path().join("filter.jsonl")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].error.as_deref(), Some("x"));
    }
}
