use std::path::Path;

use serde_json::{json, Map, Value};
use stepframe::generation::{generate, GenerationRequest, GenerationSidecar, Target};
use stepframe::grounding::load_plan;
use stepframe::ingest::{ActionTriplet, FrameKind};
use stepframe::manifest::{load_frame, save_png};

use super::{finish, read_kept, write_json, Context};
use crate::args::GenerateArgs;
use crate::audit::{AuditRecord, Status};
use crate::backends::inpainter_tag;
use crate::config::ensure_dir;
use crate::error::CliResult;

const STAGE: &str = "generate";

fn generate_one(
    ctx: &Context,
    t: &ActionTriplet,
    targets: &[Target],
    seed: u64,
    args: &GenerateArgs,
) -> CliResult<Vec<GenerationSidecar>> {
    let id = t.id();
    let (plan, _) = load_plan(&args.masks.join(&id))?;
    let frame_in = load_frame(t, FrameKind::Initial)?.image;
    let mut sidecars = Vec::with_capacity(targets.len());
    for &target in targets {
        let request = GenerationRequest {
            frame_in: frame_in.clone(),
            action: t.annotation.action_text.clone(),
            plan: plan.clone(),
            target,
            seed,
            backend_tag: inpainter_tag(&ctx.config),
            full_frame_fallback: ctx.config.flags.full_frame_fallback,
        };
        let result = generate(&request, &*ctx.backends.inpainter)?;
        let dir = args.out.join(target.as_str());
        save_png(&dir.join(format!("{id}.png")), &result.frame_out)?;
        let sidecar = GenerationSidecar {
            triplet_id: id.clone(),
            target,
            prompt: request.action.clone(),
            seed,
            backend_tag: request.backend_tag.clone(),
            stages: result.stages_run,
            input_was_relocated: result.input_was_relocated,
            flags: result.flags,
        };
        write_json(&dir.join(format!("{id}.json")), &sidecar)?;
        sidecars.push(sidecar);
    }
    Ok(sidecars)
}

pub fn run(ctx: &Context, args: &GenerateArgs) -> CliResult<()> {
    let records = read_kept(&args.manifest)?;
    if !args.masks.is_dir() {
        return Err(crate::error::CliError::MissingInput(format!(
            "mask directory {} does not exist",
            args.masks.display()
        )));
    }
    let targets = args.target.targets();
    let seed = args.seed.unwrap_or(ctx.config.seed);
    for t in &targets {
        ensure_dir(&args.out.join(t.as_str()))?;
    }
    let log = ctx.audit(STAGE, Path::new(&args.out))?;

    let results = ctx.par_map(&records, |r| {
        generate_one(ctx, &r.triplet, &targets, seed, args)
    });

    let outcomes = records
        .iter()
        .zip(results)
        .map(|(r, result)| {
            let id = r.triplet.id();
            match result {
                Ok(sidecars) => {
                    let mut detail = Map::new();
                    for s in sidecars {
                        let stages: Vec<Value> = s
                            .stages
                            .iter()
                            .map(|st| json!({ "stage": st.stage, "mask_pixels": st.mask_pixels }))
                            .collect();
                        detail.insert(
                            s.target.to_string(),
                            json!({ "stages": stages, "flags": s.flags }),
                        );
                    }
                    detail.insert("seed".into(), json!(seed));
                    (
                        AuditRecord::new(STAGE, &id, Status::Generated)
                            .with_detail(Value::Object(detail)),
                        None,
                    )
                }
                Err(e) => (
                    AuditRecord::new(STAGE, &id, Status::Failed).with_error(&e),
                    Some(e.context(&id)),
                ),
            }
        })
        .collect();
    finish(log, outcomes)
}
