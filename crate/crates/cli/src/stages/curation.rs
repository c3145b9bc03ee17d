use serde_json::json;
use stepframe::filter::{align, score_curation};
use stepframe::ingest::ActionTriplet;

use super::{read_kept, read_records, write_json, Context};
use crate::args::ScoreCurationArgs;
use crate::audit::{AuditRecord, Status};
use crate::error::{CliError, CliResult};

const STAGE: &str = "score-curation";

pub fn run(ctx: &Context, args: &ScoreCurationArgs) -> CliResult<()> {
    let auto: Vec<ActionTriplet> = read_kept(&args.auto)?
        .into_iter()
        .map(|r| r.triplet)
        .collect();
    let manual: Vec<ActionTriplet> = read_records(&args.manual)?
        .into_iter()
        .map(|r| r.triplet)
        .collect();
    let cutoff = args.cutoff.unwrap_or(ctx.config.similarity_threshold);
    if !(0.0..=100.0).contains(&cutoff) {
        return Err(CliError::Config(format!(
            "cutoff {cutoff} outside [0, 100]"
        )));
    }
    let audit_anchor = args.out.clone().unwrap_or_else(|| args.auto.clone());
    let mut log = ctx.audit(STAGE, &audit_anchor)?;
    let pairs = align(&auto, &manual)?;
    let scores = score_curation(&auto, &manual, &*ctx.backends.embedder, cutoff)?;
    let records: Vec<AuditRecord> = pairs
        .iter()
        .map(|(a, m)| {
            AuditRecord::new(STAGE, a.id(), Status::Scored)
                .with_detail(json!({ "benchmark_id": m.id() }))
        })
        .collect();
    log.append_all(&records)?;
    match &args.out {
        Some(path) => write_json(path, &scores),
        None => {
            let text = serde_json::to_string_pretty(&scores)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}
