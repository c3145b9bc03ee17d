use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{Map, Value};
use stepframe::generation::Target;
use stepframe::grounding::load_plan;
use stepframe::ingest::FrameKind;
use stepframe::manifest::{load_frame, load_image, ManifestRecord};
use stepframe::metrics::{
    clip_score, d_clip, fid, m_clip, psnr, render_table, report, ssim, MClipOptions, MetricReport,
    PairScore,
};

use super::{finish, read_kept, write_json, Context};
use crate::args::EvaluateArgs;
use crate::audit::{AuditRecord, Status};
use crate::error::{CliError, CliResult};

const STAGE: &str = "evaluate";

fn frame_kind(target: Target) -> FrameKind {
    match target {
        Target::Action => FrameKind::Action,
        Target::Final => FrameKind::Final,
    }
}

fn generated_ids(dir: &Path) -> CliResult<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem() {
                ids.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(ids)
}

/// Pairs each generated frame with its ground truth by triplet id.
fn check_alignment(dir: &Path, records: &[ManifestRecord]) -> CliResult<()> {
    let generated = generated_ids(dir)?;
    let expected: BTreeSet<String> = records.iter().map(|r| r.triplet.id()).collect();
    if generated != expected {
        let missing = expected.difference(&generated).count();
        let extra = generated.difference(&expected).count();
        return Err(CliError::AlignmentMismatch(format!(
            "{} holds {} generated frames for {} ground-truth triplets ({missing} missing, {extra} unmatched)",
            dir.display(),
            generated.len(),
            expected.len()
        )));
    }
    Ok(())
}

struct Pair {
    score: PairScore,
    hat: stepframe::RgbImage,
    gt: stepframe::RgbImage,
}

fn score_pair(
    ctx: &Context,
    r: &ManifestRecord,
    target: Target,
    args: &EvaluateArgs,
) -> CliResult<Pair> {
    let t = &r.triplet;
    let id = t.id();
    let f_in = load_frame(t, FrameKind::Initial)?.image;
    let gt = load_frame(t, frame_kind(target))?.image;
    let hat = load_image(
        &args
            .generated
            .join(target.as_str())
            .join(format!("{id}.png")),
    )?;
    let (plan, _) = load_plan(&args.masks.join(&id))?;
    let mask = match target {
        Target::Action => plan.action_stage1.union(&plan.action_stage2),
        Target::Final => plan.final_stage.clone(),
    };
    let embedder = &*ctx.backends.embedder;
    let options = MClipOptions {
        crop: ctx.config.flags.mclip_crop,
        empty_fallback: true,
    };
    let mc = m_clip(&hat, &gt, &mask, embedder, options)?;
    let mut flags = Vec::new();
    if mc.fell_back {
        flags.push("m_clip_empty_mask".to_string());
    }
    let score = PairScore {
        clip: clip_score(&hat, &gt, embedder)?,
        m_clip: mc.value,
        d_clip: d_clip(&f_in, &gt, &hat, embedder)?,
        psnr: psnr(&hat, &gt)?,
        ssim: ssim(&hat, &gt)?,
        flags,
    };
    Ok(Pair { score, hat, gt })
}

fn dataset_name(records: &[ManifestRecord]) -> String {
    let tags: BTreeSet<String> = records
        .iter()
        .map(|r| r.triplet.annotation.dataset_tag.to_string())
        .collect();
    if tags.len() == 1 {
        tags.into_iter().next().unwrap_or_default()
    } else {
        "mixed".to_string()
    }
}

pub fn run(ctx: &Context, args: &EvaluateArgs) -> CliResult<()> {
    let records = read_kept(&args.gt)?;
    let requested = args.target.targets();
    let targets: Vec<Target> = requested
        .iter()
        .copied()
        .filter(|t| args.generated.join(t.as_str()).is_dir())
        .collect();
    if targets.is_empty() || (requested.len() == 1 && targets.len() != 1) {
        return Err(CliError::MissingInput(format!(
            "no generated frames under {}",
            args.generated.display()
        )));
    }
    for t in &targets {
        check_alignment(&args.generated.join(t.as_str()), &records)?;
    }
    let log = ctx.audit(STAGE, &args.out)?;
    let dataset = args
        .dataset
        .clone()
        .unwrap_or_else(|| dataset_name(&records));
    let method = args
        .method
        .clone()
        .unwrap_or_else(|| ctx.config.method.clone());

    let mut per_target = Vec::new();
    for &target in &targets {
        per_target.push(ctx.par_map(&records, |r| score_pair(ctx, r, target, args)));
    }

    let mut reports: Vec<MetricReport> = Vec::new();
    let mut details = vec![Map::new(); records.len()];
    let mut errors: Vec<Option<CliError>> = (0..records.len()).map(|_| None).collect();
    for (target, results) in targets.iter().zip(per_target) {
        let mut pairs = Vec::new();
        for (i, result) in results.into_iter().enumerate() {
            match result {
                Ok(p) => {
                    let value = serde_json::to_value(&p.score)
                        .map_err(|e| CliError::Internal(e.to_string()))?;
                    details[i].insert(target.to_string(), value);
                    pairs.push(p);
                }
                Err(e) => {
                    if errors[i].is_none() {
                        errors[i] = Some(e);
                    }
                }
            }
        }
        if pairs.len() != records.len() {
            continue;
        }
        let hats: Vec<_> = pairs.iter().map(|p| p.hat.clone()).collect();
        let gts: Vec<_> = pairs.iter().map(|p| p.gt.clone()).collect();
        let fid = fid(&hats, &gts, &*ctx.backends.features)?;
        let scores: Vec<PairScore> = pairs.into_iter().map(|p| p.score).collect();
        reports.push(report(&dataset, *target, &method, &scores, fid)?);
    }

    let outcomes = records
        .iter()
        .zip(details.into_iter().zip(errors))
        .map(|(r, (detail, err))| {
            let id = r.triplet.id();
            match err {
                None => (
                    AuditRecord::new(STAGE, &id, Status::Scored).with_detail(Value::Object(detail)),
                    None,
                ),
                Some(e) => (
                    AuditRecord::new(STAGE, &id, Status::Failed).with_error(&e),
                    Some(e.context(&id)),
                ),
            }
        })
        .collect();
    finish(log, outcomes)?;

    write_json(&args.out, &reports)?;
    let table = render_table(&reports);
    if let Some(path) = &args.table {
        crate::config::ensure_dir(&super::parent_dir(path))?;
        std::fs::write(path, &table).map_err(|e| CliError::io(path, e))?;
    }
    print!("{table}");
    Ok(())
}
