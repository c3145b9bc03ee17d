use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;
use stepframe::generation::{finetune_prepare, PlanRef};
use stepframe::grounding::{PLAN_FILE, RELOCATED_FILE};
use stepframe::ingest::{split_dataset, ActionTriplet};
use stepframe::manifest::{normalize_path, relative_to};

use super::{parent_dir, read_kept, write_json, Context};
use crate::args::FinetuneArgs;
use crate::audit::{AuditRecord, Status};
use crate::error::{CliError, CliResult};

const STAGE: &str = "finetune-prep";

fn relative(path: &str, base: &Path) -> String {
    relative_to(Path::new(path), base)
        .to_string_lossy()
        .into_owned()
}

pub fn run(ctx: &Context, args: &FinetuneArgs) -> CliResult<()> {
    let triplets: Vec<ActionTriplet> = read_kept(&args.manifest)?
        .into_iter()
        .map(|r| r.triplet)
        .collect();
    if !args.masks.is_dir() {
        return Err(CliError::MissingInput(format!(
            "mask directory {} does not exist",
            args.masks.display()
        )));
    }
    let epochs = args.epochs.unwrap_or(ctx.config.epochs);
    let split = split_dataset(&triplets, ctx.config.split_ratio, ctx.config.split_seed)?;
    let plans: BTreeMap<String, PlanRef> = triplets
        .iter()
        .filter_map(|t| {
            let dir = normalize_path(&args.masks.join(t.id()));
            dir.join(PLAN_FILE).is_file().then(|| {
                let relocated = dir.join(RELOCATED_FILE).is_file();
                (t.id(), PlanRef { dir, relocated })
            })
        })
        .collect();
    let tags: std::collections::BTreeSet<String> = triplets
        .iter()
        .map(|t| t.annotation.dataset_tag.to_string())
        .collect();
    let dataset = if tags.len() == 1 {
        tags.into_iter().next().unwrap_or_default()
    } else {
        "mixed".to_string()
    };
    let mut log = ctx.audit(STAGE, &args.out)?;
    let mut spec = finetune_prepare(&split, &plans, args.target, &dataset, epochs)?;

    // paths relative to the job file, so the job moves with its inputs
    let base = normalize_path(&parent_dir(&args.out));
    for pair in &mut spec.pairs {
        pair.frame_in = relative(&pair.frame_in, &base);
        pair.target_frame = relative(&pair.target_frame, &base);
        for m in &mut pair.masks {
            *m = relative(m, &base);
        }
    }
    write_json(&args.out, &spec)?;

    let records: Vec<AuditRecord> = split
        .train
        .iter()
        .map(|t| (t, "train"))
        .chain(split.test.iter().map(|t| (t, "test")))
        .map(|(t, side)| {
            AuditRecord::new(STAGE, t.id(), Status::Prepared).with_detail(json!({ "split": side }))
        })
        .collect();
    log.append_all(&records)
}
