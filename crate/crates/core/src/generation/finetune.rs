//! Training-job description for fine-tuning the inpainting model, and the
//! embedding-similarity loss it optimises.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{GenResult, GenerationError, Target};
use crate::backends::Embedder;
use crate::grounding::{ACTION_STAGE1_FILE, ACTION_STAGE2_FILE, FINAL_STAGE_FILE, RELOCATED_FILE};
use crate::ingest::{ActionTriplet, DatasetSplit, FrameKind};
use crate::metrics::image_cosine;

pub const DEFAULT_EPOCHS: u32 = 5;
/// Loss charged when the similarity is zero or negative and the log is undefined.
pub const DEFAULT_LOSS_PENALTY: f64 = 1e3;
pub const FINETUNE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: String,
    /// Relative weight against the model's own objective. `None` means the
    /// trainer picks it.
    pub weight: Option<f64>,
    pub penalty: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            kind: "neg_log_clip".to_string(),
            weight: None,
            penalty: DEFAULT_LOSS_PENALTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub triplet_id: String,
    /// Model input: the relocated frame when the plan has one, else the initial frame.
    pub frame_in: String,
    /// Masks to union for this pair.
    pub masks: Vec<String>,
    pub prompt: String,
    pub target_frame: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    pub version: u32,
    pub target: Target,
    pub dataset_tag: String,
    pub epochs: u32,
    pub loss: LossSpec,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub pairs: Vec<TrainingPair>,
}

/// Where a triplet's saved mask plan lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRef {
    pub dir: PathBuf,
    pub relocated: bool,
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// One training pair per triplet of the training split. Every triplet needs
/// extracted frames and a saved plan.
pub fn finetune_prepare(
    split: &DatasetSplit<ActionTriplet>,
    plans: &BTreeMap<String, PlanRef>,
    target: Target,
    dataset_tag: &str,
    epochs: u32,
) -> GenResult<FinetuneSpec> {
    if epochs == 0 {
        return Err(GenerationError::InvalidEpochs);
    }
    let mut pairs = Vec::with_capacity(split.train.len());
    for t in &split.train {
        let id = t.id();
        let frames = t
            .frame_paths
            .as_ref()
            .ok_or_else(|| GenerationError::MissingFrames(id.clone()))?;
        let plan = plans
            .get(&id)
            .ok_or_else(|| GenerationError::MissingPlan(id.clone()))?;
        let frame_in = if plan.relocated {
            path_str(&plan.dir.join(RELOCATED_FILE))
        } else {
            frames.get(FrameKind::Initial).to_string()
        };
        let (masks, target_kind) = match target {
            Target::Action => (
                vec![ACTION_STAGE1_FILE, ACTION_STAGE2_FILE],
                FrameKind::Action,
            ),
            Target::Final => (vec![FINAL_STAGE_FILE], FrameKind::Final),
        };
        pairs.push(TrainingPair {
            triplet_id: id,
            frame_in,
            masks: masks.iter().map(|m| path_str(&plan.dir.join(m))).collect(),
            prompt: t.annotation.action_text.clone(),
            target_frame: frames.get(target_kind).to_string(),
        });
    }
    Ok(FinetuneSpec {
        version: FINETUNE_VERSION,
        target,
        dataset_tag: dataset_tag.to_string(),
        epochs,
        loss: LossSpec::default(),
        split_seed: split.seed,
        split_ratio: split.ratio,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLoss {
    pub value: f64,
    /// The similarity was not positive and `penalty` was charged instead.
    pub penalized: bool,
}

/// `-ln(cos)`, floored at zero; non-positive similarities cost `penalty`.
pub fn loss_from_cosine(cos: f64, penalty: f64) -> TrainingLoss {
    if cos.is_nan() || cos <= 0.0 {
        return TrainingLoss {
            value: penalty,
            penalized: true,
        };
    }
    TrainingLoss {
        value: (-cos.ln()).max(0.0),
        penalized: false,
    }
}

/// Loss between a generated frame and its ground truth.
pub fn training_loss(
    generated: &RgbImage,
    truth: &RgbImage,
    embedder: &dyn Embedder,
    penalty: f64,
) -> GenResult<TrainingLoss> {
    let cos = image_cosine(generated, truth, embedder)?;
    Ok(loss_from_cosine(cos, penalty))
}
