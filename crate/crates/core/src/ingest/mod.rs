//! Dataset ingest: annotations in, timestamped triplets out.

mod annotations;
mod video;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{parse_annotations, ParsedAnnotations};
pub use video::{
    extract_frames, nearest_frame_index, open_video, FrameDirectory, SyntheticVideo, VideoSource,
};

/// How far before the annotated start the comparison strategy looks.
pub const LEGO_LEAD_SECS: f64 = 0.25;
/// Fraction of the action duration at which the comparison strategy samples
/// the action frame.
pub const LEGO_ACTION_FRACTION: f64 = 0.6;
/// Fraction of the duration at which the final frame is taken.
pub const FINAL_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("action ends at {t_end}s but starts at {t_start}s")]
    NegativeDuration { t_start: f64, t_end: f64 },
    #[error("action text is empty")]
    EmptyAction,
    #[error("annotated keyframes requested but {video_id} has none")]
    MissingKeyframes { video_id: String },
    #[error("invalid triplet: {0}")]
    InvalidTriplet(String),
    #[error("timestamp {t}s outside video of {duration}s")]
    TimestampOutOfRange { t: f64, duration: f64 },
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("{path}: no record matches the {tag} schema ({reason})")]
    SchemaMismatch {
        path: PathBuf,
        tag: DatasetTag,
        reason: String,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type IngestResult<T> = Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    Ego4D,
    #[serde(rename = "EGTEA")]
    Egtea,
    #[serde(rename = "EK100")]
    Ek100,
    Custom,
}

impl std::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetTag::Ego4D => "Ego4D",
            DatasetTag::Egtea => "EGTEA",
            DatasetTag::Ek100 => "EK100",
            DatasetTag::Custom => "Custom",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "ego4d" => Ok(DatasetTag::Ego4D),
            "egtea" | "egteagaze" | "egteagaze+" => Ok(DatasetTag::Egtea),
            "ek100" | "epickitchens" | "epickitchens100" => Ok(DatasetTag::Ek100),
            "custom" => Ok(DatasetTag::Custom),
            other => Err(format!("unknown dataset tag {other:?}")),
        }
    }
}

/// Dataset-provided pre-condition / point-of-no-return / post-condition times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframes {
    pub pre: f64,
    pub pnr: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAnnotation {
    pub video_id: String,
    pub action_text: String,
    pub t_start: f64,
    pub t_end: f64,
    pub dataset_tag: DatasetTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Keyframes>,
    /// Dataset-specific fields carried through untouched.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ActionAnnotation {
    pub fn new(
        video_id: impl Into<String>,
        action_text: impl Into<String>,
        t_start: f64,
        t_end: f64,
        dataset_tag: DatasetTag,
    ) -> Self {
        Self {
            video_id: video_id.into(),
            action_text: action_text.into(),
            t_start,
            t_end,
            dataset_tag,
            keyframes: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> IngestResult<()> {
        if self.action_text.trim().is_empty() {
            return Err(IngestError::EmptyAction);
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite())
            || self.t_start < 0.0
            || self.t_end <= self.t_start
        {
            return Err(IngestError::NegativeDuration {
                t_start: self.t_start,
                t_end: self.t_end,
            });
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Midpoint,
    LegoStyle,
    AnnotatedKeyframes,
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "midpoint" | "default" => Ok(SelectionStrategy::Midpoint),
            "lego" | "lego_style" => Ok(SelectionStrategy::LegoStyle),
            "keyframes" | "annotated_keyframes" => Ok(SelectionStrategy::AnnotatedKeyframes),
            other => Err(format!("unknown selection strategy {other:?}")),
        }
    }
}

impl SelectionStrategy {
    /// Annotated keyframes for Ego4D, the midpoint/90% formulas elsewhere.
    pub fn default_for(tag: DatasetTag) -> Self {
        match tag {
            DatasetTag::Ego4D => SelectionStrategy::AnnotatedKeyframes,
            _ => SelectionStrategy::Midpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedTimes {
    pub t_initial: f64,
    pub t_action: f64,
    pub t_final: f64,
    /// The strategy does not define a final frame; `t_final` was borrowed from
    /// the default rule.
    pub final_borrowed: bool,
}

/// Picks the initial, action and final timestamps of one action.
///
/// The default rule takes the start, the midpoint and the 90% point of the
/// interval. The comparison rule starts 0.25 s early (never before the video
/// start) and samples the action at 60% of the duration.
pub fn select_timestamps(
    annotation: &ActionAnnotation,
    strategy: SelectionStrategy,
) -> IngestResult<SelectedTimes> {
    annotation.validate()?;
    let (ts, tf) = (annotation.t_start, annotation.t_end);
    let default_final = (1.0 - FINAL_FRACTION) * ts + FINAL_FRACTION * tf;
    Ok(match strategy {
        SelectionStrategy::Midpoint => SelectedTimes {
            t_initial: ts,
            t_action: 0.5 * (ts + tf),
            t_final: default_final,
            final_borrowed: false,
        },
        SelectionStrategy::LegoStyle => SelectedTimes {
            t_initial: (ts - LEGO_LEAD_SECS).max(0.0),
            t_action: ts + LEGO_ACTION_FRACTION * (tf - ts),
            t_final: default_final,
            final_borrowed: true,
        },
        SelectionStrategy::AnnotatedKeyframes => {
            let k = annotation
                .keyframes
                .ok_or_else(|| IngestError::MissingKeyframes {
                    video_id: annotation.video_id.clone(),
                })?;
            SelectedTimes {
                t_initial: k.pre,
                t_action: k.pnr,
                t_final: k.post,
                final_borrowed: false,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePaths {
    pub initial: String,
    pub action: String,
    #[serde(rename = "final")]
    pub final_: String,
}

/// Timestamps of the decoded frames actually written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTimes {
    pub initial: f64,
    pub action: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Initial,
    Action,
    Final,
}

impl FrameKind {
    pub const ALL: [FrameKind; 3] = [FrameKind::Initial, FrameKind::Action, FrameKind::Final];

    pub fn as_str(&self) -> &'static str {
        match self {
            FrameKind::Initial => "initial",
            FrameKind::Action => "action",
            FrameKind::Final => "final",
        }
    }
}

impl FramePaths {
    pub fn get(&self, kind: FrameKind) -> &str {
        match kind {
            FrameKind::Initial => &self.initial,
            FrameKind::Action => &self.action,
            FrameKind::Final => &self.final_,
        }
    }
}

/// One action with its three selected timestamps, as written to the triplet
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTriplet {
    #[serde(flatten)]
    pub annotation: ActionAnnotation,
    pub t_initial: f64,
    pub t_action: f64,
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_paths: Option<FramePaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_times: Option<FrameTimes>,
    pub selection_strategy: SelectionStrategy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ActionTriplet {
    /// Selects timestamps and checks the triplet invariants.
    pub fn select(annotation: ActionAnnotation, strategy: SelectionStrategy) -> IngestResult<Self> {
        let times = select_timestamps(&annotation, strategy)?;
        let mut flags = Vec::new();
        if times.final_borrowed {
            flags.push("final_frame_borrowed".to_string());
        }
        let triplet = Self {
            annotation,
            t_initial: times.t_initial,
            t_action: times.t_action,
            t_final: times.t_final,
            frame_paths: None,
            frame_times: None,
            selection_strategy: strategy,
            flags,
        };
        triplet.validate()?;
        Ok(triplet)
    }

    pub fn validate(&self) -> IngestResult<()> {
        self.annotation.validate()?;
        if !(self.t_initial <= self.t_action && self.t_action <= self.t_final) {
            return Err(IngestError::InvalidTriplet(format!(
                "timestamps out of order: {} / {} / {}",
                self.t_initial, self.t_action, self.t_final
            )));
        }
        let lo = self.annotation.t_start - LEGO_LEAD_SECS - 1e-9;
        let hi = self.annotation.t_end + 1e-9;
        for t in [self.t_initial, self.t_action, self.t_final] {
            if t < lo || t > hi {
                return Err(IngestError::InvalidTriplet(format!(
                    "timestamp {t} outside [{}, {}]",
                    self.annotation.t_start - LEGO_LEAD_SECS,
                    self.annotation.t_end
                )));
            }
        }
        Ok(())
    }

    pub fn time(&self, kind: FrameKind) -> f64 {
        match kind {
            FrameKind::Initial => self.t_initial,
            FrameKind::Action => self.t_action,
            FrameKind::Final => self.t_final,
        }
    }

    /// Identifier used for file names and frame keys, e.g.
    /// `P01-R01_0012340_cut-tomato`.
    pub fn id(&self) -> String {
        let video = sanitize(&self.annotation.video_id);
        let ms = (self.annotation.t_start * 1000.0).round() as u64;
        let mut slug = sanitize(&self.annotation.action_text.to_lowercase());
        slug.truncate(32);
        format!("{video}_{ms:07}_{slug}")
    }

    /// Key under which the frame of the given kind is presented to backends.
    pub fn frame_key(&self, kind: FrameKind) -> String {
        format!("{}:{}", self.id(), kind.as_str())
    }

    /// Key used to align automatic triplets with a hand-picked benchmark.
    pub fn alignment_key(&self) -> AlignmentKey {
        AlignmentKey::new(
            &self.annotation.video_id,
            &self.annotation.action_text,
            self.annotation.t_start,
        )
    }
}

/// `(video_id, action_text, t_start)` with the start rounded to milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentKey {
    pub video_id: String,
    pub action_text: String,
    pub t_start_ms: i64,
}

impl AlignmentKey {
    pub fn new(video_id: &str, action_text: &str, t_start: f64) -> Self {
        Self {
            video_id: video_id.to_string(),
            action_text: action_text.trim().to_lowercase(),
            t_start_ms: (t_start * 1000.0).round() as i64,
        }
    }
}

fn sanitize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_dash = false;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
            last_dash = false;
        } else if !last_dash && !out.is_empty() {
            out.push('-');
            last_dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push('x');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub ratio: f64,
    pub seed: u64,
}

/// Seeded train/test partition. The training side gets `round(ratio * n)`
/// items; both sides keep the input order.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratio: f64,
    seed: u64,
) -> IngestResult<DatasetSplit<T>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IngestError::InvalidRatio(ratio));
    }
    if items.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let n = items.len();
    let n_train = ((ratio * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (item, train_side) in items.iter().zip(in_train) {
        if train_side {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        ratio,
        seed,
    })
}
