use std::collections::BTreeMap;
use std::sync::Mutex;

use image::{Rgb, RgbImage};
use proptest::prelude::*;

use super::*;
use crate::backends::{BackendResult, CheckerboardInpainter, IdentityInpainter, MockEmbedder};
use crate::ingest::{
    split_dataset, ActionAnnotation, ActionTriplet, DatasetTag, FramePaths, SelectionStrategy,
};
use crate::raster::PixelRect;

fn gradient(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            (x * 7 % 256) as u8,
            (y * 5 % 256) as u8,
            ((x + y) % 256) as u8,
        ])
    })
}

fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> PixelRect {
    PixelRect { x0, y0, x1, y1 }
}

fn plan(w: u32, h: u32, stage1: Option<PixelRect>, stage2: Option<PixelRect>) -> InpaintMaskPlan {
    let mut p = InpaintMaskPlan::empty(w, h);
    if let Some(r) = stage1 {
        p.action_stage1 = Mask::from_rect(w, h, r);
    }
    if let Some(r) = stage2 {
        p.action_stage2 = Mask::from_rect(w, h, r);
        p.final_stage = Mask::from_rect(w, h, r);
    }
    p
}

fn request(p: InpaintMaskPlan, target: Target) -> GenerationRequest {
    GenerationRequest {
        frame_in: gradient(p.width, p.height),
        action: "put pan on stove".into(),
        plan: p,
        target,
        seed: 7,
        backend_tag: "mock".into(),
        full_frame_fallback: true,
    }
}

/// Fills masked pixels with the mean colour of the whole input plus one, so
/// the result depends on the order stages run in.
struct MeanFill;

impl Inpainter for MeanFill {
    fn inpaint(&self, image: &RgbImage, mask: &Mask, _: &str, _: u64) -> BackendResult<RgbImage> {
        let n = image.pixels().len() as u64;
        let mut sum = [0u64; 3];
        for p in image.pixels() {
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
        }
        let fill = Rgb([0, 1, 2].map(|c| ((sum[c] / n + 1) % 256) as u8));
        let mut out = image.clone();
        for (x, y) in mask.pixels() {
            out.put_pixel(x, y, fill);
        }
        Ok(out)
    }
}

struct Spy {
    masks: Mutex<Vec<u64>>,
}

impl Inpainter for Spy {
    fn inpaint(&self, image: &RgbImage, mask: &Mask, _: &str, _: u64) -> BackendResult<RgbImage> {
        self.masks.lock().unwrap().push(mask.count());
        Ok(image.clone())
    }
}

fn outside_identical(a: &RgbImage, b: &RgbImage, mask: &Mask) -> bool {
    a.enumerate_pixels()
        .all(|(x, y, p)| mask.get(x, y) || b.get_pixel(x, y) == p)
}

#[test]
fn final_target_runs_one_stage() {
    let req = request(
        plan(48, 32, Some(rect(0, 0, 10, 10)), Some(rect(20, 8, 40, 24))),
        Target::Final,
    );
    let out = generate(&req, &CheckerboardInpainter::default()).unwrap();
    assert_eq!(out.stages_run.len(), 1);
    assert_eq!(out.stages_run[0].stage, StageName::FinalStage);
    assert!(outside_identical(
        &req.frame_in,
        &out.frame_out,
        &req.plan.final_stage
    ));
    assert_ne!(out.frame_out, req.frame_in);
}

#[test]
fn action_target_runs_both_stages_in_order() {
    let req = request(
        plan(40, 40, Some(rect(0, 0, 10, 10)), Some(rect(20, 20, 40, 30))),
        Target::Action,
    );
    let spy = Spy {
        masks: Mutex::new(vec![]),
    };
    let out = generate(&req, &spy).unwrap();
    assert_eq!(*spy.masks.lock().unwrap(), [100, 200]);
    let stages: Vec<_> = out.stages_run.iter().map(|s| s.stage).collect();
    assert_eq!(stages, [StageName::ActionStage1, StageName::ActionStage2]);

    // hand-computed expectation for the order-sensitive mock
    let mean_plus_one = |img: &RgbImage| {
        let n = (img.width() * img.height()) as u64;
        Rgb([0, 1, 2].map(|c| {
            let s: u64 = img.pixels().map(|p| p[c] as u64).sum();
            ((s / n + 1) % 256) as u8
        }))
    };
    let mut expected = req.frame_in.clone();
    let f1 = mean_plus_one(&expected);
    for (x, y) in req.plan.action_stage1.pixels() {
        expected.put_pixel(x, y, f1);
    }
    let f2 = mean_plus_one(&expected);
    for (x, y) in req.plan.action_stage2.pixels() {
        expected.put_pixel(x, y, f2);
    }
    assert_eq!(generate(&req, &MeanFill).unwrap().frame_out, expected);
}

#[test]
fn identity_backend_returns_input() {
    for target in Target::ALL {
        let req = request(
            plan(30, 20, Some(rect(2, 2, 8, 8)), Some(rect(10, 5, 20, 15))),
            target,
        );
        let out = generate(&req, &IdentityInpainter).unwrap();
        assert_eq!(out.frame_out, req.frame_in);
    }
}

#[test]
fn empty_first_stage_runs_single_stage() {
    let req = request(
        plan(30, 20, None, Some(rect(10, 5, 20, 15))),
        Target::Action,
    );
    let out = generate(&req, &CheckerboardInpainter::default()).unwrap();
    assert_eq!(out.stages_run.len(), 1);
    assert_eq!(out.stages_run[0].stage, StageName::ActionStage2);
    assert!(out
        .flags
        .contains(&"action_stage1_empty_single_stage".to_string()));
}

#[test]
fn empty_stage_mask_uses_full_frame() {
    let req = request(plan(30, 20, Some(rect(0, 0, 5, 5)), None), Target::Final);
    let out = generate(&req, &CheckerboardInpainter::default()).unwrap();
    assert!(out.stages_run[0].full_frame_fallback);
    assert_eq!(out.stages_run[0].mask_pixels, 600);
    assert!(out
        .frame_out
        .enumerate_pixels()
        .all(|(x, y, p)| p != req.frame_in.get_pixel(x, y)));

    let mut strict = req.clone();
    strict.full_frame_fallback = false;
    assert!(matches!(
        generate(&strict, &CheckerboardInpainter::default()),
        Err(GenerationError::EmptyStageMask(StageName::FinalStage))
    ));
}

#[test]
fn relocated_frame_is_the_input() {
    let mut p = plan(20, 20, None, Some(rect(5, 5, 10, 10)));
    let relocated = RgbImage::from_pixel(20, 20, Rgb([9, 9, 9]));
    p.relocated_frame = Some(relocated.clone());
    let req = request(p, Target::Final);
    let out = generate(&req, &IdentityInpainter).unwrap();
    assert!(out.input_was_relocated);
    assert_eq!(out.frame_out, relocated);
}

struct Native(CheckerboardInpainter);

impl Inpainter for Native {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        prompt: &str,
        seed: u64,
    ) -> BackendResult<RgbImage> {
        assert_eq!(image.dimensions(), (32, 32));
        self.0.inpaint(image, mask, prompt, seed)
    }

    fn native_resolution(&self) -> Option<(u32, u32)> {
        Some((32, 32))
    }
}

#[test]
fn native_resolution_keeps_unmasked_pixels() {
    let req = request(
        plan(50, 30, Some(rect(3, 3, 17, 12)), Some(rect(20, 10, 45, 28))),
        Target::Action,
    );
    let out = generate(&req, &Native(CheckerboardInpainter::default())).unwrap();
    assert_eq!(out.frame_out.dimensions(), (50, 30));
    let union = req.plan.action_stage1.union(&req.plan.action_stage2);
    assert!(outside_identical(&req.frame_in, &out.frame_out, &union));
}

#[test]
fn mismatched_plan_is_rejected() {
    let mut req = request(plan(30, 20, None, Some(rect(1, 1, 4, 4))), Target::Final);
    req.frame_in = gradient(31, 20);
    assert!(matches!(
        generate(&req, &IdentityInpainter),
        Err(GenerationError::DimensionMismatch { .. })
    ));
}

#[test]
fn same_seed_same_output() {
    let req = request(
        plan(40, 30, Some(rect(0, 0, 10, 10)), Some(rect(15, 5, 35, 25))),
        Target::Action,
    );
    let inp = CheckerboardInpainter::default();
    let a = generate(&req, &inp).unwrap();
    let b = generate(&req, &inp).unwrap();
    assert_eq!(a.frame_out, b.frame_out);
    let mut other = req.clone();
    other.seed = 8;
    assert_ne!(generate(&other, &inp).unwrap().frame_out, a.frame_out);
}

#[test]
fn loss_values() {
    assert_eq!(
        loss_from_cosine(1.0, DEFAULT_LOSS_PENALTY),
        TrainingLoss {
            value: 0.0,
            penalized: false
        }
    );
    assert!(
        (loss_from_cosine(0.5, DEFAULT_LOSS_PENALTY).value - std::f64::consts::LN_2).abs() < 1e-12
    );
    let zero = loss_from_cosine(0.0, DEFAULT_LOSS_PENALTY);
    assert!(zero.penalized);
    assert_eq!(zero.value, 1e3);
    assert!(loss_from_cosine(-0.2, 5.0).penalized);

    let img = gradient(24, 24);
    let l = training_loss(&img, &img, &MockEmbedder::default(), DEFAULT_LOSS_PENALTY).unwrap();
    assert_eq!(l.value, 0.0);
}

fn triplets(n: usize) -> Vec<ActionTriplet> {
    (0..n)
        .map(|i| {
            let a =
                ActionAnnotation::new(format!("v{i}"), "open drawer", 1.0, 3.0, DatasetTag::Custom);
            let mut t = ActionTriplet::select(a, SelectionStrategy::Midpoint).unwrap();
            t.frame_paths = Some(FramePaths {
                initial: format!("/f/{i}_initial.png"),
                action: format!("/f/{i}_action.png"),
                final_: format!("/f/{i}_final.png"),
            });
            t
        })
        .collect()
}

#[test]
fn finetune_spec_for_split() {
    let all = triplets(3000);
    let split = split_dataset(&all, 0.8, 42).unwrap();
    let plans: BTreeMap<String, PlanRef> = all
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let dir = std::path::PathBuf::from(format!("/plans/{}", t.id()));
            (
                t.id(),
                PlanRef {
                    dir,
                    relocated: i % 2 == 0,
                },
            )
        })
        .collect();
    let spec = finetune_prepare(&split, &plans, Target::Action, "custom", DEFAULT_EPOCHS).unwrap();
    assert_eq!(spec.pairs.len(), 2400);
    assert_eq!(spec.epochs, 5);
    assert_eq!(spec.loss.weight, None);
    for pair in &spec.pairs {
        assert_eq!(pair.masks.len(), 2);
        assert!(pair.target_frame.ends_with("_action.png"));
        assert_eq!(pair.prompt, "open drawer");
        let relocated = plans[&pair.triplet_id].relocated;
        assert_eq!(pair.frame_in.ends_with("relocated.png"), relocated);
    }
    let fin = finetune_prepare(&split, &plans, Target::Final, "custom", 1).unwrap();
    assert!(fin
        .pairs
        .iter()
        .all(|p| p.masks.len() == 1 && p.target_frame.ends_with("_final.png")));
}

#[test]
fn finetune_needs_plans_and_epochs() {
    let all = triplets(10);
    let split = split_dataset(&all, 0.5, 1).unwrap();
    assert!(matches!(
        finetune_prepare(&split, &BTreeMap::new(), Target::Final, "custom", 5),
        Err(GenerationError::MissingPlan(_))
    ));
    assert!(matches!(
        finetune_prepare(&split, &BTreeMap::new(), Target::Final, "custom", 0),
        Err(GenerationError::InvalidEpochs)
    ));
}

proptest! {
    #[test]
    fn unmasked_pixels_survive(
        seed in any::<u64>(),
        x0 in 0u32..20, y0 in 0u32..20, w in 1u32..12, h in 1u32..12,
        target in prop::sample::select(Target::ALL.to_vec()),
    ) {
        let r = rect(x0, y0, x0 + w, y0 + h);
        let mut req = request(plan(32, 32, Some(rect(0, 0, 4, 4)), Some(r)), target);
        req.seed = seed;
        let out = generate(&req, &CheckerboardInpainter::default()).unwrap();
        let union = req.plan.action_stage1.union(&req.plan.action_stage2);
        let active = if target == Target::Final { &req.plan.final_stage } else { &union };
        prop_assert!(outside_identical(&req.frame_in, &out.frame_out, active));
    }

    #[test]
    fn loss_is_non_negative(cos in -1.0f64..=1.0) {
        let l = loss_from_cosine(cos, DEFAULT_LOSS_PENALTY);
        prop_assert!(l.value >= 0.0);
        prop_assert_eq!(l.penalized, cos <= 0.0);
    }
}
