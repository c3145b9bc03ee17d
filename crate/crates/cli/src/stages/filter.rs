use serde_json::json;
use stepframe::filter::{
    filter_triplet, FilterConfig, FilterDecision, RejectionCode, TripletFrames,
};
use stepframe::ingest::FrameKind;
use stepframe::manifest::{load_frame, write_manifest, ManifestRecord};
use stepframe::prompts::Prompts;

use super::{finish, parent_dir, read_records, Context};
use crate::args::FilterArgs;
use crate::audit::{AuditRecord, Status};
use crate::config::ensure_dir;
use crate::error::{CliError, CliResult};

const STAGE: &str = "filter";

pub fn run(ctx: &Context, args: &FilterArgs) -> CliResult<()> {
    let records = read_records(&args.manifest)?;
    let config =
        FilterConfig::with_threshold(args.threshold.unwrap_or(ctx.config.detection_threshold));
    config.validate()?;
    let prompts = Prompts::default();
    let log = ctx.audit(STAGE, &args.out)?;

    let decisions = ctx.par_map(&records, |r| -> CliResult<FilterDecision> {
        let t = &r.triplet;
        let frames = TripletFrames {
            initial: load_frame(t, FrameKind::Initial)?,
            action: load_frame(t, FrameKind::Action)?,
        };
        Ok(filter_triplet(
            t,
            &frames,
            &*ctx.backends.vlm,
            &*ctx.backends.detector,
            &prompts,
            &config,
        ))
    });

    let mut out = Vec::with_capacity(records.len());
    let mut outcomes = Vec::with_capacity(records.len());
    for (r, d) in records.iter().zip(decisions) {
        let id = r.triplet.id();
        match d {
            Ok(d) => {
                let status = if d.is_indeterminate() {
                    Status::Indeterminate
                } else if d.kept {
                    Status::Kept
                } else {
                    Status::Rejected
                };
                let mut record = AuditRecord::new(STAGE, &id, status).with_detail(json!({
                    "reasons": d.reasons,
                    "relevant_objects": d.relevant_objects,
                }));
                let err = d.error.clone().map(|e| {
                    record.error = Some(e.clone());
                    CliError::Backend(format!("{id}: {e}"))
                });
                outcomes.push((record, err));
                out.push(ManifestRecord::from(d));
            }
            Err(e) => {
                let record = AuditRecord::new(STAGE, &id, Status::Failed).with_error(&e);
                let mut failed = r.clone();
                failed.kept = Some(false);
                failed.reasons = vec![RejectionCode::Indeterminate];
                failed.error = Some(e.to_string());
                out.push(failed);
                outcomes.push((record, Some(e.context(&id))));
            }
        }
    }
    ensure_dir(&parent_dir(&args.out))?;
    write_manifest(&args.out, &out)?;
    finish(log, outcomes)
}
