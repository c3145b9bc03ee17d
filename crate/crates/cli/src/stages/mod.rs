//! One module per subcommand, plus what they share.

pub mod curate;
pub mod curation;
pub mod evaluate;
pub mod filter;
pub mod finetune;
pub mod generate;
pub mod ground;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use stepframe::backends::Backends;
use stepframe::manifest::{read_manifest, ManifestRecord};

use crate::audit::{AuditLog, AuditRecord};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub struct Context {
    pub config: PipelineConfig,
    pub backends: Backends,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(config: PipelineConfig, workers: Option<usize>) -> CliResult<Self> {
        if workers == Some(0) {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        let backends = crate::backends::build(&config)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        Ok(Self {
            config,
            backends,
            pool,
        })
    }

    /// Maps `f` over `items` on the worker pool; results keep input order.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    /// `<audit_dir>/<stage>.jsonl`, with the audit directory defaulting to a
    /// sibling of the stage's output.
    pub fn audit(&self, stage: &str, out: &Path) -> CliResult<AuditLog> {
        let dir = match &self.config.audit_dir {
            Some(d) => d.clone(),
            None => parent_dir(out).join("audit"),
        };
        AuditLog::create(&dir, stage)
    }
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Reads a manifest that must hold at least one record.
pub fn read_records(path: &Path) -> CliResult<Vec<ManifestRecord>> {
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let records = read_manifest(path)?;
    if records.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{} holds no triplets",
            path.display()
        )));
    }
    Ok(records)
}

/// Records still in play after filtering; at least one.
pub fn read_kept(path: &Path) -> CliResult<Vec<ManifestRecord>> {
    let kept: Vec<ManifestRecord> = read_records(path)?
        .into_iter()
        .filter(|r| r.is_kept())
        .collect();
    if kept.is_empty() {
        return Err(CliError::MissingInput(format!(
            "{} has no kept triplets",
            path.display()
        )));
    }
    Ok(kept)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    crate::config::ensure_dir(&parent_dir(path))?;
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Writes the audit records, then turns per-triplet failures into the
/// stage's error: the first failure's class, with a count.
pub fn finish(mut log: AuditLog, outcomes: Vec<(AuditRecord, Option<CliError>)>) -> CliResult<()> {
    let total = outcomes.len();
    let mut failures = Vec::new();
    let mut records = Vec::with_capacity(total);
    for (record, err) in outcomes {
        records.push(record);
        failures.extend(err);
    }
    log.append_all(&records)?;
    let n = failures.len();
    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(first.context(&format!("{n} of {total} triplets failed; first"))),
    }
}
