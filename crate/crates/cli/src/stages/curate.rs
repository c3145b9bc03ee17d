use serde_json::json;
use stepframe::ingest::{
    extract_frames, open_video, parse_annotations, ActionAnnotation, ActionTriplet,
    SelectionStrategy,
};
use stepframe::manifest::{write_manifest, ManifestRecord};

use super::{parent_dir, Context};
use crate::args::CurateArgs;
use crate::audit::{AuditRecord, Status};
use crate::config::ensure_dir;
use crate::error::{CliError, CliResult};

const STAGE: &str = "curate";

fn curate_one(
    annotation: &ActionAnnotation,
    strategy: SelectionStrategy,
    args: &CurateArgs,
    frames_dir: &std::path::Path,
) -> CliResult<ActionTriplet> {
    let triplet = ActionTriplet::select(annotation.clone(), strategy)?;
    let video = open_video(&args.videos, &annotation.video_id)?;
    Ok(extract_frames(&triplet, video.as_ref(), frames_dir)?)
}

pub fn run(ctx: &Context, args: &CurateArgs) -> CliResult<()> {
    if !args.annotations.is_file() {
        return Err(CliError::MissingInput(format!(
            "{} does not exist",
            args.annotations.display()
        )));
    }
    if !args.videos.is_dir() {
        return Err(CliError::MissingInput(format!(
            "video directory {} does not exist",
            args.videos.display()
        )));
    }
    let parsed = parse_annotations(&args.annotations, args.dataset)?;
    let strategy = args
        .strategy
        .or(ctx.config.selection_strategy)
        .unwrap_or_else(|| SelectionStrategy::default_for(args.dataset));
    let frames_dir = args
        .frames
        .clone()
        .or_else(|| ctx.config.frames_dir.clone())
        .unwrap_or_else(|| parent_dir(&args.out).join("frames"));
    ensure_dir(&frames_dir)?;
    let mut log = ctx.audit(STAGE, &args.out)?;

    let results = ctx.par_map(&parsed.annotations, |a| {
        curate_one(a, strategy, args, &frames_dir)
    });

    let mut records = Vec::new();
    let mut audit = Vec::new();
    for (row, reason) in &parsed.skipped_reasons {
        audit.push(AuditRecord {
            stage: STAGE.into(),
            triplet_id: None,
            status: Status::Rejected,
            detail: json!({ "record": row }),
            error: Some(reason.clone()),
        });
    }
    for (a, result) in parsed.annotations.iter().zip(results) {
        match result {
            Ok(t) => {
                audit.push(
                    AuditRecord::new(STAGE, t.id(), Status::Kept).with_detail(json!({
                        "t_initial": t.t_initial,
                        "t_action": t.t_action,
                        "t_final": t.t_final,
                        "selection_strategy": t.selection_strategy,
                    })),
                );
                records.push(ManifestRecord::new(t));
            }
            Err(e) => {
                log::warn!("{} {:?}: {e}", a.video_id, a.action_text);
                audit.push(AuditRecord {
                    stage: STAGE.into(),
                    triplet_id: None,
                    status: Status::Rejected,
                    detail: json!({
                        "video_id": a.video_id,
                        "action_text": a.action_text,
                        "t_start": a.t_start,
                    }),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    log.append_all(&audit)?;
    if records.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no triplet could be built from {}",
            args.annotations.display()
        )));
    }
    ensure_dir(&parent_dir(&args.out))?;
    write_manifest(&args.out, &records)?;
    Ok(())
}
