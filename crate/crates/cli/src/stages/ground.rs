use serde_json::json;
use stepframe::grounding::{
    build_mask_plan, categorize_objects, ground_masks, refine_location, save_plan, GroundedMask,
    GroundingConfig, GroundingError, InpaintMaskPlan, ObjectCategory, RelevantObjectSet,
};
use stepframe::ingest::FrameKind;
use stepframe::manifest::load_frame;
use stepframe::prompts::Prompts;
use stepframe::Frame;

use super::{finish, read_kept, Context};
use crate::args::GroundArgs;
use crate::audit::{AuditRecord, Status};
use crate::config::ensure_dir;
use crate::error::{CliError, CliResult};

const STAGE: &str = "ground";

struct Grounded {
    objects: RelevantObjectSet,
    masks: Vec<GroundedMask>,
    plan: InpaintMaskPlan,
}

fn ground_one(
    ctx: &Context,
    action: &str,
    frame: &Frame,
    prompts: &Prompts,
    config: &GroundingConfig,
) -> Result<Grounded, GroundingError> {
    let vlm = &*ctx.backends.vlm;
    let objects = match categorize_objects(action, frame, vlm, prompts, config) {
        Ok(o) => o,
        Err(GroundingError::EmptyRelevantSet(_)) => {
            let mut o = RelevantObjectSet::new(action);
            o.flags.push("empty_relevant_set".to_string());
            o
        }
        Err(e) => return Err(e),
    };
    let mut masks = if objects.is_empty() {
        Vec::new()
    } else {
        ground_masks(&objects, frame, &*ctx.backends.detector, config.threshold)?
    };
    let location_scores: Vec<(String, f64)> = masks
        .iter()
        .filter(|m| m.category == ObjectCategory::Location)
        .map(|m| (m.name.clone(), m.score))
        .collect();
    let objects = refine_location(&objects, frame, vlm, prompts, &location_scores);
    masks.retain(|m| objects.category_of(&m.name) == Some(m.category));
    let plan = build_mask_plan(&objects, &masks, &frame.image, config);
    Ok(Grounded {
        objects,
        masks,
        plan,
    })
}

pub fn run(ctx: &Context, args: &GroundArgs) -> CliResult<()> {
    let records = read_kept(&args.manifest)?;
    let prompts = match &args.prompts {
        Some(dir) => Prompts::load(dir)
            .map_err(|e| CliError::MissingInput(format!("prompts in {}: {e}", dir.display())))?,
        None => Prompts::default(),
    };
    let config = GroundingConfig {
        threshold: ctx.config.detection_threshold,
        auto_append_hands: ctx.config.flags.auto_append_hands,
        full_frame_fallback: ctx.config.flags.full_frame_fallback,
    };
    ensure_dir(&args.out)?;
    let log = ctx.audit(STAGE, &args.out)?;

    let results = ctx.par_map(&records, |r| -> CliResult<Grounded> {
        let t = &r.triplet;
        let frame = load_frame(t, FrameKind::Initial)?;
        let g = ground_one(ctx, &t.annotation.action_text, &frame, &prompts, &config)?;
        save_plan(&args.out.join(t.id()), &g.plan, &g.objects, &g.masks)?;
        Ok(g)
    });

    let outcomes = records
        .iter()
        .zip(results)
        .map(|(r, result)| {
            let id = r.triplet.id();
            match result {
                Ok(g) => {
                    let record = AuditRecord::new(STAGE, &id, Status::Grounded).with_detail(json!({
                        "core": g.objects.core,
                        "location": g.objects.location,
                        "functional": g.objects.functional,
                        "grounded": g.masks.iter().map(|m| &m.name).collect::<Vec<_>>(),
                        "relocated": g.plan.relocated_frame.is_some(),
                        "flags": g.objects.flags.iter().chain(&g.plan.flags).collect::<Vec<_>>(),
                    }));
                    (record, None)
                }
                Err(e) => {
                    let record = AuditRecord::new(STAGE, &id, Status::Failed).with_error(&e);
                    (record, Some(e.context(&id)))
                }
            }
        })
        .collect();
    finish(log, outcomes)
}
