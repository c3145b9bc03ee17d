//! Grounded masks, core-object relocation and per-stage inpaint masks.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{GroundingConfig, GroundingError, GroundingResult, ObjectCategory, RelevantObjectSet};
use crate::backends::Detector;
use crate::manifest::{load_image, save_png, ManifestError};
use crate::raster::{BBox, Frame, Mask};

/// One detected relevant object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedMask {
    pub name: String,
    pub category: ObjectCategory,
    pub bbox: BBox,
    pub score: f64,
    /// Tight object mask, always inside `bbox`. Core objects always carry one.
    #[serde(skip)]
    pub pixel_mask: Option<Mask>,
    /// The detector gave no pixel mask and the box was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pixel_mask_from_bbox: bool,
}

/// Detects every object of the set and keeps the best-scoring hit per name at
/// or above `threshold`. Objects without such a hit are dropped.
pub fn ground_masks(
    objects: &RelevantObjectSet,
    frame: &Frame,
    detector: &dyn Detector,
    threshold: f64,
) -> GroundingResult<Vec<GroundedMask>> {
    let entries = objects.entries();
    if entries.is_empty() {
        return Err(GroundingError::EmptyRelevantSet(objects.action.clone()));
    }
    let labels: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
    let detections = detector.detect_segment(frame, &labels)?;
    let (w, h) = frame.dimensions();
    let mut out = Vec::new();
    for (name, category) in entries {
        let best = detections
            .iter()
            .filter(|d| d.label == name && d.score >= threshold)
            .fold(
                None,
                |best: Option<&crate::backends::Detection>, d| match best {
                    Some(b) if b.score >= d.score => Some(b),
                    _ => Some(d),
                },
            );
        let Some(det) = best else {
            log::info!(
                "{:?}: {name:?} not detected at {threshold}, dropped",
                objects.action
            );
            continue;
        };
        let mut pixel_mask = det
            .pixel_mask
            .clone()
            .filter(|m| m.dimensions() == (w, h) && !m.is_empty());
        let mut from_bbox = false;
        if category == ObjectCategory::Core && pixel_mask.is_none() {
            pixel_mask = Some(Mask::from_bbox(w, h, &det.bbox));
            from_bbox = true;
        }
        out.push(GroundedMask {
            name,
            category,
            bbox: det.bbox,
            score: det.score,
            pixel_mask,
            pixel_mask_from_bbox: from_bbox,
        });
    }
    Ok(out)
}

/// Result of moving one core object.
#[derive(Debug, Clone)]
pub struct Relocation {
    pub image: RgbImage,
    /// Where the object's pixels now are.
    pub moved: Mask,
    /// Source pixels no longer covered by the object.
    pub vacated: Mask,
    pub offset: (i64, i64),
    /// The offset was shortened to keep the object inside the frame.
    pub clamped: bool,
}

fn relocate_onto(
    base: &RgbImage,
    source: &RgbImage,
    core: &GroundedMask,
    location: &GroundedMask,
) -> GroundingResult<Relocation> {
    let mask = core
        .pixel_mask
        .as_ref()
        .ok_or_else(|| GroundingError::MissingPixelMask(core.name.clone()))?;
    let (w, h) = source.dimensions();
    if mask.dimensions() != (w, h) {
        return Err(GroundingError::DimensionMismatch {
            expected: (w, h),
            actual: mask.dimensions(),
        });
    }
    let rect = mask
        .bounding_rect()
        .ok_or_else(|| GroundingError::DegenerateMask(core.name.clone()))?;
    if !(location.bbox.is_valid() && location.bbox.within(w, h)) {
        return Err(GroundingError::LocationOutOfFrame(location.name.clone()));
    }
    let (cx, cy) = mask.centroid().expect("non-empty mask");
    let (lx, ly) = location.bbox.centroid();
    let want = ((lx - cx).round() as i64, (ly - cy).round() as i64);
    let dx = want.0.clamp(-(rect.x0 as i64), w as i64 - rect.x1 as i64);
    let dy = want.1.clamp(-(rect.y0 as i64), h as i64 - rect.y1 as i64);

    let mut image = base.clone();
    for (x, y) in mask.pixels() {
        let (nx, ny) = ((x as i64 + dx) as u32, (y as i64 + dy) as u32);
        image.put_pixel(nx, ny, *source.get_pixel(x, y));
    }
    let moved = mask.translate(dx, dy);
    let vacated = Mask::from_fn(w, h, |x, y| mask.get(x, y) && !moved.get(x, y));
    Ok(Relocation {
        image,
        moved,
        vacated,
        offset: (dx, dy),
        clamped: (dx, dy) != want,
    })
}

/// Copies the core object's pixels so that its mask centroid lands on the
/// centre of the location box. The offset is rounded to whole pixels and
/// clamped so the moved mask stays inside the frame.
pub fn relocate_core(
    frame: &RgbImage,
    core: &GroundedMask,
    location: &GroundedMask,
) -> GroundingResult<Relocation> {
    relocate_onto(frame, frame, core, location)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocationRecord {
    pub name: String,
    pub offset: [i64; 2],
    pub moved_pixels: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

/// Masks for each inpainting stage, all the size of the initial frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintMaskPlan {
    pub width: u32,
    pub height: u32,
    /// Functional-object boxes; first stage of the action frame.
    pub action_stage1: Mask,
    /// Core-object boxes at their original and relocated positions plus the
    /// vacated regions; second stage of the action frame.
    pub action_stage2: Mask,
    /// Same region as `action_stage2`; the only stage of the final frame.
    pub final_stage: Mask,
    /// The initial frame with core objects moved to the location, present
    /// when a location object was grounded.
    pub relocated_frame: Option<RgbImage>,
    pub relocations: Vec<RelocationRecord>,
    pub flags: Vec<String>,
}

impl InpaintMaskPlan {
    /// A plan with no masks at all.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            action_stage1: Mask::empty(width, height),
            action_stage2: Mask::empty(width, height),
            final_stage: Mask::empty(width, height),
            relocated_frame: None,
            relocations: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_all_empty(&self) -> bool {
        self.action_stage1.is_empty()
            && self.action_stage2.is_empty()
            && self.final_stage.is_empty()
    }

    /// Replaces every raster with a full-frame mask when all are empty.
    pub fn apply_full_frame_fallback(&mut self) {
        if self.is_all_empty() {
            let full = Mask::full(self.width, self.height);
            self.action_stage1 = full.clone();
            self.action_stage2 = full.clone();
            self.final_stage = full;
            self.flags.push("empty_masks_full_frame".to_string());
        }
    }

    pub fn validate(&self) -> GroundingResult<()> {
        let dims = self.dimensions();
        let check = |actual: (u32, u32)| {
            if actual != dims {
                Err(GroundingError::DimensionMismatch {
                    expected: dims,
                    actual,
                })
            } else {
                Ok(())
            }
        };
        check(self.action_stage1.dimensions())?;
        check(self.action_stage2.dimensions())?;
        check(self.final_stage.dimensions())?;
        if let Some(r) = &self.relocated_frame {
            check(r.dimensions())?;
        }
        Ok(())
    }
}

/// Builds the per-stage masks from grounded objects, relocating each core
/// object onto the location object when one survived grounding.
pub fn build_mask_plan(
    objects: &RelevantObjectSet,
    masks: &[GroundedMask],
    frame: &RgbImage,
    config: &GroundingConfig,
) -> InpaintMaskPlan {
    let (w, h) = frame.dimensions();
    let mut plan = InpaintMaskPlan::empty(w, h);
    let in_set = |m: &&GroundedMask| objects.category_of(&m.name) == Some(m.category);

    for m in masks
        .iter()
        .filter(in_set)
        .filter(|m| m.category == ObjectCategory::Functional)
    {
        plan.action_stage1
            .union_with(&Mask::from_bbox(w, h, &m.bbox));
    }

    let locations: Vec<&GroundedMask> = masks
        .iter()
        .filter(in_set)
        .filter(|m| m.category == ObjectCategory::Location)
        .collect();
    if locations.len() > 1 {
        plan.flags
            .push("multiple_locations_best_score_used".to_string());
    }
    let location =
        locations
            .iter()
            .copied()
            .fold(None, |best: Option<&GroundedMask>, m| match best {
                Some(b) if b.score >= m.score => Some(b),
                _ => Some(m),
            });

    let cores: Vec<&GroundedMask> = masks
        .iter()
        .filter(in_set)
        .filter(|m| m.category == ObjectCategory::Core)
        .collect();
    if location.is_some() && cores.len() > 1 {
        plan.flags
            .push("multiple_core_objects_relocated".to_string());
    }
    let mut relocated = frame.clone();
    for core in &cores {
        plan.action_stage2
            .union_with(&Mask::from_bbox(w, h, &core.bbox));
        let Some(loc) = location else { continue };
        let mut core = (*core).clone();
        if core
            .pixel_mask
            .as_ref()
            .is_none_or(|m| m.dimensions() != (w, h))
        {
            core.pixel_mask = Some(Mask::from_bbox(w, h, &core.bbox));
            plan.flags
                .push(format!("pixel_mask_from_bbox:{}", core.name));
        }
        match relocate_onto(&relocated, frame, &core, loc) {
            Ok(r) => {
                let (dx, dy) = r.offset;
                let moved_box = core.bbox.translate(dx as f64, dy as f64);
                plan.action_stage2
                    .union_with(&Mask::from_bbox(w, h, &moved_box));
                plan.action_stage2.union_with(&r.vacated);
                plan.relocations.push(RelocationRecord {
                    name: core.name.clone(),
                    offset: [dx, dy],
                    moved_pixels: r.moved.count(),
                    clamped: r.clamped,
                });
                relocated = r.image;
            }
            Err(e) => {
                log::warn!("{:?}: {e}; {} left in place", objects.action, core.name);
                plan.flags.push(format!("relocation_skipped:{}", core.name));
            }
        }
    }
    if let Some(loc) = location {
        if cores.is_empty() {
            plan.flags
                .push(format!("no_core_to_relocate_onto:{}", loc.name));
        }
        plan.relocated_frame = Some(relocated);
    }
    plan.final_stage = plan.action_stage2.clone();
    if config.full_frame_fallback {
        plan.apply_full_frame_fallback();
    }
    plan
}

pub const PLAN_VERSION: u32 = 1;

/// `plan.json`, written next to the mask PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSidecar {
    pub version: u32,
    pub action: String,
    pub width: u32,
    pub height: u32,
    pub objects: RelevantObjectSet,
    pub masks: Vec<GroundedMask>,
    pub relocations: Vec<RelocationRecord>,
    pub relocated_frame: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub const ACTION_STAGE1_FILE: &str = "action_stage1.png";
pub const ACTION_STAGE2_FILE: &str = "action_stage2.png";
pub const FINAL_STAGE_FILE: &str = "final_stage.png";
pub const RELOCATED_FILE: &str = "relocated.png";
pub const PLAN_FILE: &str = "plan.json";

fn save_mask(path: &Path, mask: &Mask) -> GroundingResult<()> {
    mask.to_gray()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| GroundingError::Plan(format!("{}: {e}", path.display())))
}

fn load_mask(path: &Path) -> GroundingResult<Mask> {
    let img =
        image::open(path).map_err(|e| GroundingError::Plan(format!("{}: {e}", path.display())))?;
    Ok(Mask::from_gray(&img.to_luma8()))
}

/// Writes the three stage masks (0 = keep, 255 = inpaint), the relocated
/// frame if any, and `plan.json`.
pub fn save_plan(
    dir: &Path,
    plan: &InpaintMaskPlan,
    objects: &RelevantObjectSet,
    masks: &[GroundedMask],
) -> GroundingResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    save_mask(&dir.join(ACTION_STAGE1_FILE), &plan.action_stage1)?;
    save_mask(&dir.join(ACTION_STAGE2_FILE), &plan.action_stage2)?;
    save_mask(&dir.join(FINAL_STAGE_FILE), &plan.final_stage)?;
    let relocated_path = dir.join(RELOCATED_FILE);
    match &plan.relocated_frame {
        Some(img) => save_png(&relocated_path, img)?,
        None => {
            if relocated_path.exists() {
                std::fs::remove_file(&relocated_path).map_err(|source| ManifestError::Io {
                    path: relocated_path.clone(),
                    source,
                })?;
            }
        }
    }
    let sidecar = PlanSidecar {
        version: PLAN_VERSION,
        action: objects.action.clone(),
        width: plan.width,
        height: plan.height,
        objects: objects.clone(),
        masks: masks.to_vec(),
        relocations: plan.relocations.clone(),
        relocated_frame: plan.relocated_frame.is_some(),
        flags: plan.flags.clone(),
    };
    let json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| GroundingError::Plan(e.to_string()))?;
    std::fs::write(dir.join(PLAN_FILE), json + "\n").map_err(|source| {
        ManifestError::Io {
            path: dir.join(PLAN_FILE),
            source,
        }
        .into()
    })
}

/// Reads a plan written by [`save_plan`].
pub fn load_plan(dir: &Path) -> GroundingResult<(InpaintMaskPlan, PlanSidecar)> {
    let sidecar_path = dir.join(PLAN_FILE);
    let text = std::fs::read_to_string(&sidecar_path).map_err(|source| ManifestError::Io {
        path: sidecar_path.clone(),
        source,
    })?;
    let sidecar: PlanSidecar = serde_json::from_str(&text)
        .map_err(|e| GroundingError::Plan(format!("{}: {e}", sidecar_path.display())))?;
    if sidecar.version != PLAN_VERSION {
        return Err(GroundingError::Plan(format!(
            "unsupported plan version {}",
            sidecar.version
        )));
    }
    let relocated_frame = if sidecar.relocated_frame {
        Some(load_image(&dir.join(RELOCATED_FILE))?)
    } else {
        None
    };
    let plan = InpaintMaskPlan {
        width: sidecar.width,
        height: sidecar.height,
        action_stage1: load_mask(&dir.join(ACTION_STAGE1_FILE))?,
        action_stage2: load_mask(&dir.join(ACTION_STAGE2_FILE))?,
        final_stage: load_mask(&dir.join(FINAL_STAGE_FILE))?,
        relocated_frame,
        relocations: sidecar.relocations.clone(),
        flags: sidecar.flags.clone(),
    };
    plan.validate()?;
    Ok((plan, sidecar))
}
