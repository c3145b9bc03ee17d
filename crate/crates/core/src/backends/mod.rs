//! Model-service contracts.
//!
//! Four kinds of backend sit behind the pipeline: a vision-language model for
//! object reasoning, an open-vocabulary detector/segmenter, a masked
//! inpainting model and an image embedder (which doubles as the FID feature
//! extractor). Each kind has a trait, a deterministic in-process mock and an
//! HTTP/JSON client; see `protocol/backends.md` at the repository root for the
//! wire format.

mod mock;
mod remote;
pub mod wire;

use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BBox, Frame, Mask};

pub use mock::{
    CheckerboardInpainter, DetectorFixture, FixtureDetection, IdentityInpainter, MaskShape,
    MockDetector, MockEmbedder, MockVlm, VlmFixture, FIXTURE_VERSION,
};
pub use remote::{RemoteDetector, RemoteEmbedder, RemoteInpainter, RemoteVlm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Vlm,
    Detector,
    Inpainter,
    Embedder,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Vlm => "vlm",
            BackendKind::Detector => "detector",
            BackendKind::Inpainter => "inpainter",
            BackendKind::Embedder => "embedder",
        })
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{kind} backend timed out after {after:?}")]
    Timeout { kind: BackendKind, after: Duration },
    #[error("{kind} backend unavailable: {message}")]
    Unavailable { kind: BackendKind, message: String },
    #[error("no fixture reply for action {action:?} at turn {turn}")]
    MalformedFixtureKey { action: String, turn: usize },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("image is {actual:?} but mask is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("{kind} backend protocol error: {message}")]
    Protocol { kind: BackendKind, message: String },
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub type BackendResult<T> = Result<T, BackendError>;

/// Where a backend lives and how hard it may be driven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Base URL of the service, or `"mock"`.
    pub endpoint: String,
    #[serde(default)]
    pub model_tag: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_concurrency() -> usize {
    4
}

impl BackendDescriptor {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint: "mock".into(),
            model_tag: "mock".into(),
            timeout_secs: default_timeout_secs(),
            max_concurrency: default_max_concurrency(),
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> BackendResult<()> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(BackendError::InvalidDescriptor(format!(
                "{}: timeout must be positive, got {}",
                self.kind, self.timeout_secs
            )));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::InvalidDescriptor(format!(
                "{}: max_concurrency must be at least 1",
                self.kind
            )));
        }
        if !self.is_mock()
            && !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://"))
        {
            return Err(BackendError::InvalidDescriptor(format!(
                "{}: endpoint must be \"mock\" or an http(s) URL, got {:?}",
                self.kind, self.endpoint
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub image: Option<RgbImage>,
}

impl ChatTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn user_with_image(text: impl Into<String>, image: RgbImage) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image: Some(image),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            image: None,
        }
    }
}

/// A multi-turn conversation about one action. The last turn is the pending
/// user question.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub action: String,
    pub turns: Vec<ChatTurn>,
}

impl ChatRequest {
    /// 1-based index of the pending user turn.
    pub fn turn_index(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    pub fn validate(&self) -> BackendResult<()> {
        match self.turns.first() {
            Some(t) if t.image.is_some() => {}
            _ => {
                return Err(BackendError::InvalidRequest(
                    "first chat turn must carry the frame".into(),
                ))
            }
        }
        match self.turns.last() {
            Some(t) if t.role == Role::User => Ok(()),
            _ => Err(BackendError::InvalidRequest(
                "last chat turn must be a user turn".into(),
            )),
        }
    }
}

/// One detector hit. `clamped` records that the box or score had to be pulled
/// back into range.
#[derive(Debug, Clone)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub bbox: BBox,
    pub pixel_mask: Option<Mask>,
    pub clamped: bool,
}

impl Detection {
    /// Clamps the box to the frame, the score to `[0, 1]` and the pixel mask to
    /// the box. Returns `None` when nothing of the box is left inside the frame.
    pub fn sanitized(mut self, width: u32, height: u32) -> Option<Detection> {
        let (bbox, moved) = self.bbox.clamp_to(width, height);
        if !bbox.is_valid() {
            return None;
        }
        self.clamped |= moved;
        self.bbox = bbox;
        let score = if self.score.is_nan() { 0.0 } else { self.score };
        let clamped_score = score.clamp(0.0, 1.0);
        self.clamped |= clamped_score != self.score;
        self.score = clamped_score;
        if let Some(mask) = self.pixel_mask.take() {
            if mask.dimensions() == (width, height) {
                let inside = mask.intersect(&Mask::from_bbox(width, height, &bbox));
                self.pixel_mask = Some(inside);
            }
        }
        Some(self)
    }
}

pub trait VisionLanguage: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> BackendResult<String>;
}

pub trait Detector: Send + Sync {
    fn detect_segment(&self, frame: &Frame, labels: &[String]) -> BackendResult<Vec<Detection>>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        prompt: &str,
        seed: u64,
    ) -> BackendResult<RgbImage>;

    /// Resolution the model works at, when it has a fixed one.
    fn native_resolution(&self) -> Option<(u32, u32)> {
        None
    }
}

pub trait Embedder: Send + Sync {
    /// Unit-length embedding.
    fn embed(&self, image: &RgbImage) -> BackendResult<Vec<f64>>;
}

/// Deep features for distribution metrics such as FID.
pub trait FeatureBackend: Send + Sync {
    fn features(&self, image: &RgbImage) -> BackendResult<Vec<f64>>;
}

/// Scales a vector to unit length. Zero vectors are rejected.
pub fn normalize(mut v: Vec<f64>) -> BackendResult<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(BackendError::Fixture(format!(
            "cannot normalise embedding with norm {norm}"
        )));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// The four backends a pipeline run needs.
#[derive(Clone)]
pub struct Backends {
    pub vlm: Arc<dyn VisionLanguage>,
    pub detector: Arc<dyn Detector>,
    pub inpainter: Arc<dyn Inpainter>,
    pub embedder: Arc<dyn Embedder>,
    pub features: Arc<dyn FeatureBackend>,
}

/// Counting semaphore bounding in-flight requests of one client.
pub(crate) struct Limiter {
    slots: std::sync::Mutex<usize>,
    freed: std::sync::Condvar,
}

pub(crate) struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub(crate) fn new(max: usize) -> Self {
        Self {
            slots: std::sync::Mutex::new(max.max(1)),
            freed: std::sync::Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap_or_else(|e| e.into_inner());
        }
        *slots -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut slots = self.0.slots.lock().unwrap_or_else(|e| e.into_inner());
        *slots += 1;
        self.0.freed.notify_one();
    }
}
