//! Masked-inpainting orchestration and fine-tuning job preparation.
//!
//! The action frame is produced in two passes, functional-object masks first
//! and core-object masks second; the final frame takes a single pass over the
//! core-object masks. After every pass the pixels outside the active mask are
//! copied back from the pass input, so the backend can only ever change
//! masked pixels.

mod finetune;

use std::str::FromStr;
use std::time::Instant;

use image::imageops::FilterType;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Inpainter};
use crate::grounding::InpaintMaskPlan;
use crate::raster::{composite, Mask};

pub use finetune::{
    finetune_prepare, loss_from_cosine, training_loss, FinetuneSpec, LossSpec, PlanRef,
    TrainingLoss, TrainingPair, DEFAULT_EPOCHS, DEFAULT_LOSS_PENALTY,
};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("image is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("mask for stage {0} is empty and full-frame fallback is disabled")]
    EmptyStageMask(StageName),
    #[error("no mask plan for triplet {0}")]
    MissingPlan(String),
    #[error("triplet {0} has no extracted frames")]
    MissingFrames(String),
    #[error("epochs must be at least 1")]
    InvalidEpochs,
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

pub type GenResult<T> = Result<T, GenerationError>;

/// Which frame to synthesise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Action,
    Final,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Action, Target::Final];

    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Action => "action",
            Target::Final => "final",
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "action" => Ok(Target::Action),
            "final" => Ok(Target::Final),
            other => Err(format!(
                "unknown target {other:?} (expected action or final)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    ActionStage1,
    ActionStage2,
    FinalStage,
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageName::ActionStage1 => "action_stage1",
            StageName::ActionStage2 => "action_stage2",
            StageName::FinalStage => "final_stage",
        })
    }
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub frame_in: RgbImage,
    pub action: String,
    pub plan: InpaintMaskPlan,
    pub target: Target,
    pub seed: u64,
    pub backend_tag: String,
    /// Use a full-frame mask for a stage whose mask is empty.
    pub full_frame_fallback: bool,
}

impl GenerationRequest {
    pub fn validate(&self) -> GenResult<()> {
        if self.plan.dimensions() != self.frame_in.dimensions() {
            return Err(GenerationError::DimensionMismatch {
                expected: self.frame_in.dimensions(),
                actual: self.plan.dimensions(),
            });
        }
        self.plan
            .validate()
            .map_err(|_| GenerationError::DimensionMismatch {
                expected: self.frame_in.dimensions(),
                actual: self.plan.dimensions(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub mask_pixels: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full_frame_fallback: bool,
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub frame_out: RgbImage,
    pub stages_run: Vec<StageRecord>,
    pub seed: u64,
    /// Seconds spent in the backend and compositing.
    pub wall_time: f64,
    pub input_was_relocated: bool,
    pub flags: Vec<String>,
}

/// One inpainting pass. The image is resized to the backend's native
/// resolution when it has one; unmasked pixels are restored from `input`
/// afterwards in every case.
pub fn run_stage(
    input: &RgbImage,
    mask: &Mask,
    prompt: &str,
    seed: u64,
    inpainter: &dyn Inpainter,
) -> GenResult<RgbImage> {
    let dims = input.dimensions();
    if mask.dimensions() != dims {
        return Err(GenerationError::DimensionMismatch {
            expected: dims,
            actual: mask.dimensions(),
        });
    }
    let raw = match inpainter.native_resolution() {
        Some((w, h)) if (w, h) != dims => {
            let small = image::imageops::resize(input, w, h, FilterType::Triangle);
            let out = inpainter.inpaint(&small, &mask.resize(w, h), prompt, seed)?;
            if out.dimensions() != (w, h) {
                return Err(GenerationError::DimensionMismatch {
                    expected: (w, h),
                    actual: out.dimensions(),
                });
            }
            image::imageops::resize(&out, dims.0, dims.1, FilterType::Triangle)
        }
        _ => inpainter.inpaint(input, mask, prompt, seed)?,
    };
    if raw.dimensions() != dims {
        return Err(GenerationError::DimensionMismatch {
            expected: dims,
            actual: raw.dimensions(),
        });
    }
    Ok(composite(input, &raw, mask))
}

/// The stages a request will run, in order.
pub fn planned_stages(plan: &InpaintMaskPlan, target: Target) -> Vec<StageName> {
    match target {
        Target::Final => vec![StageName::FinalStage],
        Target::Action if plan.action_stage1.is_empty() => vec![StageName::ActionStage2],
        Target::Action => vec![StageName::ActionStage1, StageName::ActionStage2],
    }
}

fn stage_mask(plan: &InpaintMaskPlan, stage: StageName) -> &Mask {
    match stage {
        StageName::ActionStage1 => &plan.action_stage1,
        StageName::ActionStage2 => &plan.action_stage2,
        StageName::FinalStage => &plan.final_stage,
    }
}

/// Runs the inpainting stages for one target. The relocated frame is the
/// input when the plan has one; the prompt is the action text as-is.
pub fn generate(
    request: &GenerationRequest,
    inpainter: &dyn Inpainter,
) -> GenResult<GenerationResult> {
    request.validate()?;
    let started = Instant::now();
    let plan = &request.plan;
    let (w, h) = request.frame_in.dimensions();
    let mut flags = Vec::new();
    let stages = planned_stages(plan, request.target);
    if request.target == Target::Action && stages.len() == 1 {
        flags.push("action_stage1_empty_single_stage".to_string());
    }
    let input_was_relocated = plan.relocated_frame.is_some();
    let mut current = plan
        .relocated_frame
        .clone()
        .unwrap_or_else(|| request.frame_in.clone());
    let mut records = Vec::with_capacity(stages.len());
    for stage in stages {
        let raster = stage_mask(plan, stage);
        let (mask, fallback) = if raster.is_empty() {
            if !request.full_frame_fallback {
                return Err(GenerationError::EmptyStageMask(stage));
            }
            flags.push(format!("{stage}_full_frame_fallback"));
            (Mask::full(w, h), true)
        } else {
            (raster.clone(), false)
        };
        current = run_stage(&current, &mask, &request.action, request.seed, inpainter)?;
        records.push(StageRecord {
            stage,
            mask_pixels: mask.count(),
            full_frame_fallback: fallback,
        });
    }
    Ok(GenerationResult {
        frame_out: current,
        stages_run: records,
        seed: request.seed,
        wall_time: started.elapsed().as_secs_f64(),
        input_was_relocated,
        flags,
    })
}

/// JSON written next to each generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSidecar {
    pub triplet_id: String,
    pub target: Target,
    pub prompt: String,
    pub seed: u64,
    pub backend_tag: String,
    pub stages: Vec<StageRecord>,
    pub input_was_relocated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[cfg(test)]
mod tests;
