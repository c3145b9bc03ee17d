//! Triplet filtering and curation scoring.
//!
//! A triplet is kept when its initial frame shows hands or at least one of the
//! action-relevant objects named by the vision-language model, and its action
//! frame shows hands. The final frame is never sent to the detector.

mod parse;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatRequest, ChatTurn, Detector, Embedder, VisionLanguage};
use crate::ingest::{ActionTriplet, FrameKind};
use crate::manifest::{load_image, ManifestError};
use crate::metrics::{cosine, MetricsError};
use crate::prompts::Prompts;
use crate::raster::{BBox, Frame};

pub use parse::{is_hand_label, parse_object_list};

/// Detections scoring below this are discarded.
pub const DEFAULT_THRESHOLD: f64 = 0.3;
/// Label used to query the detector for hands.
pub const HAND_LABEL: &str = "hand";
/// Curation similarity (×100) counted as a match.
pub const CURATION_CUTOFF: f64 = 80.0;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed backend reply: {0}")]
    MalformedBackendReply(String),
    #[error("detection requested with an empty label list")]
    EmptyLabels,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("no triplets align between the automatic and manual sets")]
    AlignmentMismatch,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type FilterResult<T> = Result<T, FilterError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub label: String,
    pub score: f64,
    pub bbox: BBox,
    pub frame_ref: FrameKind,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionCode {
    NoObjectsOrHandsInInitial,
    NoHandsInAction,
    /// A backend failed; the triplet was neither kept nor judged.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub triplet: ActionTriplet,
    pub kept: bool,
    pub reasons: Vec<RejectionCode>,
    pub relevant_objects: Vec<String>,
    pub detections: Vec<DetectionResult>,
    pub error: Option<String>,
}

impl FilterDecision {
    fn indeterminate(triplet: &ActionTriplet, objects: Vec<String>, error: FilterError) -> Self {
        Self {
            triplet: triplet.clone(),
            kept: false,
            reasons: vec![RejectionCode::Indeterminate],
            relevant_objects: objects,
            detections: Vec::new(),
            error: Some(error.to_string()),
        }
    }

    pub fn is_indeterminate(&self) -> bool {
        self.reasons.contains(&RejectionCode::Indeterminate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum score for object detections.
    pub threshold: f64,
    /// Minimum score for hand detections; `None` reuses `threshold`.
    pub hand_threshold: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            hand_threshold: None,
        }
    }
}

impl FilterConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            hand_threshold: None,
        }
    }

    pub fn hand_threshold(&self) -> f64 {
        self.hand_threshold.unwrap_or(self.threshold)
    }

    pub fn validate(&self) -> FilterResult<()> {
        for t in [self.threshold, self.hand_threshold()] {
            if !(0.0..=1.0).contains(&t) {
                return Err(FilterError::InvalidThreshold(t));
            }
        }
        Ok(())
    }

    fn threshold_for(&self, label: &str) -> f64 {
        if is_hand_label(label) {
            self.hand_threshold()
        } else {
            self.threshold
        }
    }
}

/// The two frames the filter looks at.
#[derive(Debug, Clone)]
pub struct TripletFrames {
    pub initial: Frame,
    pub action: Frame,
}

/// Asks the vision-language model which visible objects matter for the
/// action. Returns lowercase, deduplicated names in reply order.
pub fn identify_objects(
    action: &str,
    frame: &Frame,
    vlm: &dyn VisionLanguage,
    prompts: &Prompts,
) -> FilterResult<Vec<String>> {
    let request = ChatRequest {
        action: action.to_string(),
        turns: vec![ChatTurn::user_with_image(
            prompts.relevant(action),
            frame.image.clone(),
        )],
    };
    let reply = vlm.chat(&request)?;
    parse_object_list(&reply)
}

fn detect_with(
    frame: &Frame,
    frame_ref: FrameKind,
    labels: &[String],
    detector: &dyn Detector,
    threshold: impl Fn(&str) -> f64,
) -> FilterResult<Vec<DetectionResult>> {
    if labels.is_empty() {
        return Err(FilterError::EmptyLabels);
    }
    Ok(detector
        .detect_segment(frame, labels)?
        .into_iter()
        .filter(|d| d.score >= threshold(&d.label))
        .map(|d| DetectionResult {
            label: d.label,
            score: d.score,
            bbox: d.bbox,
            frame_ref,
            clamped: d.clamped,
        })
        .collect())
}

/// Runs the detector and drops every result scoring below `threshold`.
pub fn detect(
    frame: &Frame,
    frame_ref: FrameKind,
    labels: &[String],
    detector: &dyn Detector,
    threshold: f64,
) -> FilterResult<Vec<DetectionResult>> {
    detect_with(frame, frame_ref, labels, detector, |_| threshold)
}

/// The keep rule on presence flags; returns the rejection reasons (empty when
/// kept).
pub fn rule(initial_hands: bool, initial_objects: bool, action_hands: bool) -> Vec<RejectionCode> {
    let mut reasons = Vec::new();
    if !(initial_hands || initial_objects) {
        reasons.push(RejectionCode::NoObjectsOrHandsInInitial);
    }
    if !action_hands {
        reasons.push(RejectionCode::NoHandsInAction);
    }
    reasons
}

/// Applies the filter to one triplet. Backend failures produce an
/// indeterminate decision instead of an error.
pub fn filter_triplet(
    triplet: &ActionTriplet,
    frames: &TripletFrames,
    vlm: &dyn VisionLanguage,
    detector: &dyn Detector,
    prompts: &Prompts,
    config: &FilterConfig,
) -> FilterDecision {
    let action = &triplet.annotation.action_text;
    let objects = match identify_objects(action, &frames.initial, vlm, prompts) {
        Ok(o) => o,
        Err(e) => return FilterDecision::indeterminate(triplet, Vec::new(), e),
    };
    let mut labels: Vec<String> = objects
        .iter()
        .filter(|o| !is_hand_label(o))
        .cloned()
        .collect();
    labels.push(HAND_LABEL.to_string());
    let threshold = |label: &str| config.threshold_for(label);

    let initial = match detect_with(
        &frames.initial,
        FrameKind::Initial,
        &labels,
        detector,
        threshold,
    ) {
        Ok(d) => d,
        Err(e) => return FilterDecision::indeterminate(triplet, objects, e),
    };
    let hand = [HAND_LABEL.to_string()];
    let action_dets = match detect_with(
        &frames.action,
        FrameKind::Action,
        &hand,
        detector,
        threshold,
    ) {
        Ok(d) => d,
        Err(e) => return FilterDecision::indeterminate(triplet, objects, e),
    };

    let initial_hands = initial.iter().any(|d| is_hand_label(&d.label));
    let initial_objects = initial
        .iter()
        .any(|d| !is_hand_label(&d.label) && labels.contains(&d.label));
    let action_hands = action_dets.iter().any(|d| is_hand_label(&d.label));
    let reasons = rule(initial_hands, initial_objects, action_hands);

    let mut detections = initial;
    detections.extend(action_dets);
    FilterDecision {
        triplet: triplet.clone(),
        kept: reasons.is_empty(),
        reasons,
        relevant_objects: objects,
        detections,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationScore {
    pub frame_kind: FrameKind,
    /// Mean similarity ×100, each pair clamped to `[0, 100]`.
    pub mean_clip: f64,
    /// Fraction of pairs at or above the cutoff.
    pub quantile_ge_80: f64,
    pub n_pairs: usize,
}

/// Summarises per-pair raw cosines for one frame kind.
pub fn curation_score(frame_kind: FrameKind, cosines: &[f64], cutoff: f64) -> CurationScore {
    let scores: Vec<f64> = cosines
        .iter()
        .map(|c| (100.0 * c).clamp(0.0, 100.0))
        .collect();
    let n = scores.len();
    let mean = crate::metrics::stable_mean(&scores).unwrap_or(0.0);
    let hits = scores.iter().filter(|s| **s >= cutoff).count();
    CurationScore {
        frame_kind,
        mean_clip: mean,
        quantile_ge_80: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        n_pairs: n,
    }
}

/// Pairs automatic and manual triplets by `(video_id, action_text, t_start)`,
/// in the order of `auto`.
pub fn align<'a>(
    auto: &'a [ActionTriplet],
    manual: &'a [ActionTriplet],
) -> FilterResult<Vec<(&'a ActionTriplet, &'a ActionTriplet)>> {
    let mut index = BTreeMap::new();
    for m in manual {
        index.entry(m.alignment_key()).or_insert(m);
    }
    let pairs: Vec<_> = auto
        .iter()
        .filter_map(|a| index.get(&a.alignment_key()).map(|m| (a, *m)))
        .collect();
    if pairs.is_empty() {
        return Err(FilterError::AlignmentMismatch);
    }
    Ok(pairs)
}

/// Compares automatically selected frames with a hand-picked benchmark, one
/// score per frame kind.
pub fn score_curation(
    auto: &[ActionTriplet],
    manual: &[ActionTriplet],
    embedder: &dyn Embedder,
    cutoff: f64,
) -> FilterResult<Vec<CurationScore>> {
    let pairs = align(auto, manual)?;
    let embed = |t: &ActionTriplet, kind: FrameKind| -> FilterResult<Vec<f64>> {
        let paths = t
            .frame_paths
            .as_ref()
            .ok_or_else(|| ManifestError::MissingFrames(t.id()))?;
        let img = load_image(Path::new(paths.get(kind)))?;
        Ok(embedder.embed(&img)?)
    };
    FrameKind::ALL
        .iter()
        .map(|&kind| {
            let cosines = pairs
                .iter()
                .map(|(a, m)| Ok(cosine(&embed(a, kind)?, &embed(m, kind)?)?))
                .collect::<FilterResult<Vec<f64>>>()?;
            Ok(curation_score(kind, &cosines, cutoff))
        })
        .collect()
}

#[cfg(test)]
mod tests;
