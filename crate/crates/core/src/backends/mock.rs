//! Deterministic in-process backends for desk-scale runs and tests.
//!
//! Every mock is a pure function of its inputs, its seed and its fixture table.
//! Fixtures are versioned JSON documents.

use std::collections::BTreeMap;
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    normalize, BackendError, BackendResult, ChatRequest, Detection, Detector, Embedder,
    FeatureBackend, Inpainter, VisionLanguage,
};
use crate::raster::{BBox, Frame, Mask};

pub const FIXTURE_VERSION: u32 = 1;

fn read_fixture<T: for<'de> Deserialize<'de>>(path: &Path) -> BackendResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
}

fn check_version(version: u32) -> BackendResult<()> {
    if version != FIXTURE_VERSION {
        return Err(BackendError::Fixture(format!(
            "unsupported fixture version {version}, expected {FIXTURE_VERSION}"
        )));
    }
    Ok(())
}

fn fixture_key(action: &str) -> String {
    action.trim().to_lowercase()
}

/// Reply table for [`MockVlm`], keyed by action and 1-based user-turn index.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VlmFixture {
    pub version: u32,
    /// Unknown keys are an error in strict mode; otherwise `default` answers.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub replies: BTreeMap<String, BTreeMap<usize, String>>,
    #[serde(default)]
    pub default: BTreeMap<usize, String>,
}

#[derive(Debug, Clone)]
pub struct MockVlm {
    fixture: VlmFixture,
}

impl MockVlm {
    pub fn new(mut fixture: VlmFixture) -> BackendResult<Self> {
        check_version(fixture.version)?;
        fixture.replies = std::mem::take(&mut fixture.replies)
            .into_iter()
            .map(|(k, v)| (fixture_key(&k), v))
            .collect();
        Ok(Self { fixture })
    }

    pub fn from_file(path: &Path) -> BackendResult<Self> {
        Self::new(read_fixture(path)?)
    }
}

impl VisionLanguage for MockVlm {
    fn chat(&self, request: &ChatRequest) -> BackendResult<String> {
        request.validate()?;
        let turn = request.turn_index();
        let key = fixture_key(&request.action);
        if let Some(reply) = self.fixture.replies.get(&key).and_then(|t| t.get(&turn)) {
            return Ok(reply.clone());
        }
        if self.fixture.strict {
            return Err(BackendError::MalformedFixtureKey {
                action: request.action.clone(),
                turn,
            });
        }
        Ok(self
            .fixture
            .default
            .get(&turn)
            .cloned()
            .unwrap_or_else(|| "none".to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskShape {
    Box,
    Ellipse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureDetection {
    pub label: String,
    pub score: f64,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskShape>,
}

/// Per-frame detections for [`MockDetector`], keyed by [`Frame::key`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DetectorFixture {
    pub version: u32,
    #[serde(default)]
    pub frames: BTreeMap<String, Vec<FixtureDetection>>,
}

#[derive(Debug, Clone)]
pub struct MockDetector {
    fixture: DetectorFixture,
}

impl MockDetector {
    pub fn new(fixture: DetectorFixture) -> BackendResult<Self> {
        check_version(fixture.version)?;
        Ok(Self { fixture })
    }

    pub fn from_file(path: &Path) -> BackendResult<Self> {
        Self::new(read_fixture(path)?)
    }
}

fn shape_mask(shape: MaskShape, bbox: &BBox, width: u32, height: u32) -> Mask {
    match shape {
        MaskShape::Box => Mask::from_bbox(width, height, bbox),
        MaskShape::Ellipse => {
            let (cx, cy) = bbox.centroid();
            let (rx, ry) = (0.5 * bbox.width(), 0.5 * bbox.height());
            let rect = bbox.pixel_rect(width, height);
            Mask::from_fn(width, height, |x, y| {
                if x < rect.x0 || x >= rect.x1 || y < rect.y0 || y >= rect.y1 {
                    return false;
                }
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            })
        }
    }
}

impl Detector for MockDetector {
    fn detect_segment(&self, frame: &Frame, labels: &[String]) -> BackendResult<Vec<Detection>> {
        if labels.is_empty() {
            return Err(BackendError::InvalidRequest("empty label list".into()));
        }
        let wanted: Vec<String> = labels.iter().map(|l| l.trim().to_lowercase()).collect();
        let (w, h) = frame.dimensions();
        let Some(entries) = self.fixture.frames.get(&frame.key) else {
            return Ok(Vec::new());
        };
        Ok(entries
            .iter()
            .filter(|e| wanted.contains(&e.label.trim().to_lowercase()))
            .filter_map(|e| {
                let bbox = BBox::new(e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3]);
                let det = Detection {
                    label: e.label.trim().to_lowercase(),
                    score: e.score,
                    bbox,
                    pixel_mask: None,
                    clamped: false,
                }
                .sanitized(w, h)?;
                let pixel_mask = e.mask.map(|s| shape_mask(s, &det.bbox, w, h));
                Some(Detection { pixel_mask, ..det })
            })
            .collect())
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityInpainter;

impl Inpainter for IdentityInpainter {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        _prompt: &str,
        _seed: u64,
    ) -> BackendResult<RgbImage> {
        check_dims(image, mask)?;
        Ok(image.clone())
    }
}

/// Repaints every masked pixel with a seed-derived checkerboard. Each channel
/// is XOR-ed with a non-zero byte, so every permitted pixel changes value.
/// Pixels outside the mask are deliberately perturbed as well, which lets tests
/// prove that the orchestrator restores them.
#[derive(Debug, Clone, Copy)]
pub struct CheckerboardInpainter {
    pub cell: u32,
}

impl Default for CheckerboardInpainter {
    fn default() -> Self {
        Self { cell: 8 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl CheckerboardInpainter {
    fn keys(seed: u64) -> [[u8; 3]; 2] {
        let mut out = [[0u8; 3]; 2];
        for (i, key) in out.iter_mut().enumerate() {
            let bits = splitmix64(seed.wrapping_mul(2).wrapping_add(i as u64));
            for (c, byte) in key.iter_mut().enumerate() {
                *byte = 1 + ((bits >> (c * 8)) % 255) as u8;
            }
        }
        out
    }
}

impl Inpainter for CheckerboardInpainter {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        _prompt: &str,
        seed: u64,
    ) -> BackendResult<RgbImage> {
        check_dims(image, mask)?;
        let keys = Self::keys(seed);
        let cell = self.cell.max(1);
        let mut out = image.clone();
        for (x, y, px) in out.enumerate_pixels_mut() {
            let parity = ((x / cell + y / cell) % 2) as usize;
            let key = if mask.get(x, y) {
                keys[parity]
            } else {
                // outside the mask: a different perturbation the orchestrator must undo
                keys[1 - parity]
            };
            for c in 0..3 {
                px[c] ^= key[c];
            }
        }
        Ok(out)
    }
}

fn check_dims(image: &RgbImage, mask: &Mask) -> BackendResult<()> {
    if image.dimensions() != mask.dimensions() {
        return Err(BackendError::DimensionMismatch {
            expected: mask.dimensions(),
            actual: image.dimensions(),
        });
    }
    Ok(())
}

/// Locality-sensitive embedder: the frame is downsampled to a small grid and
/// the pixel vector is projected through a seeded Gaussian matrix, then
/// normalised. Similar images land on similar vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    grid: u32,
    dimension: usize,
    projection: Vec<f64>,
}

impl MockEmbedder {
    pub const DEFAULT_DIMENSION: usize = 64;
    pub const DEFAULT_GRID: u32 = 16;

    pub fn new(seed: u64, dimension: usize) -> Self {
        Self::with_grid(seed, dimension, Self::DEFAULT_GRID)
    }

    pub fn with_grid(seed: u64, dimension: usize, grid: u32) -> Self {
        let inputs = (grid * grid * 3) as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dimension * inputs)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            grid,
            dimension,
            projection,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn raw(&self, image: &RgbImage) -> Vec<f64> {
        let small = image::imageops::resize(image, self.grid, self.grid, FilterType::Triangle);
        let mut input: Vec<f64> = small
            .pixels()
            .flat_map(|p| p.0)
            .map(|v| v as f64 / 255.0 - 0.5)
            .collect();
        // bias term keeps mid-grey frames away from the zero vector
        input.push(1.0);
        let n = input.len();
        (0..self.dimension)
            .map(|row| {
                self.projection[row * n..(row + 1) * n]
                    .iter()
                    .zip(&input)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(0, Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, image: &RgbImage) -> BackendResult<Vec<f64>> {
        if image.width() == 0 || image.height() == 0 {
            return Err(BackendError::InvalidRequest("empty image".into()));
        }
        normalize(self.raw(image))
    }
}

impl FeatureBackend for MockEmbedder {
    fn features(&self, image: &RgbImage) -> BackendResult<Vec<f64>> {
        self.embed(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ChatTurn;
    use image::Rgb;

    fn vlm_fixture(strict: bool) -> VlmFixture {
        let mut replies = BTreeMap::new();
        replies.insert(
            "Cut Tomato".to_string(),
            BTreeMap::from([
                (1, "tomato, knife, cutting board".to_string()),
                (
                    2,
                    "Core: tomato\nLocation: cutting board\nFunctional: knife".to_string(),
                ),
            ]),
        );
        VlmFixture {
            version: 1,
            strict,
            replies,
            default: BTreeMap::new(),
        }
    }

    fn request(action: &str, turns: usize) -> ChatRequest {
        let mut t = vec![ChatTurn::user_with_image("q1", RgbImage::new(4, 4))];
        for i in 1..turns {
            t.push(ChatTurn::assistant(format!("a{i}")));
            t.push(ChatTurn::user(format!("q{}", i + 1)));
        }
        ChatRequest {
            action: action.into(),
            turns: t,
        }
    }

    #[test]
    fn vlm_fixture_lookup_by_action_and_turn() {
        let vlm = MockVlm::new(vlm_fixture(true)).unwrap();
        let reply = vlm.chat(&request("cut tomato", 2)).unwrap();
        assert!(reply.starts_with("Core: tomato"));
        assert_eq!(reply, vlm.chat(&request("cut tomato", 2)).unwrap());
    }

    #[test]
    fn vlm_strict_unknown_key_fails() {
        let vlm = MockVlm::new(vlm_fixture(true)).unwrap();
        assert!(matches!(
            vlm.chat(&request("peel garlic", 1)),
            Err(BackendError::MalformedFixtureKey { turn: 1, .. })
        ));
        let lax = MockVlm::new(vlm_fixture(false)).unwrap();
        assert_eq!(lax.chat(&request("peel garlic", 1)).unwrap(), "none");
    }

    #[test]
    fn vlm_rejects_wrong_fixture_version() {
        let mut f = vlm_fixture(true);
        f.version = 7;
        assert!(MockVlm::new(f).is_err());
    }

    fn detector() -> MockDetector {
        let mut frames = BTreeMap::new();
        frames.insert(
            "f".to_string(),
            vec![
                FixtureDetection {
                    label: "tomato".into(),
                    score: 0.9,
                    bbox: [10.0, 10.0, 50.0, 50.0],
                    mask: Some(MaskShape::Ellipse),
                },
                FixtureDetection {
                    label: "board".into(),
                    score: 0.6,
                    bbox: [60.0, 70.0, 140.0, 130.0],
                    mask: None,
                },
            ],
        );
        MockDetector::new(DetectorFixture { version: 1, frames }).unwrap()
    }

    #[test]
    fn detector_returns_fixture_hits() {
        let frame = Frame::new("f", RgbImage::new(100, 100));
        let dets = detector()
            .detect_segment(&frame, &["tomato".to_string()])
            .unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox::new(10.0, 10.0, 50.0, 50.0));
        assert_eq!(dets[0].score, 0.9);
        assert!(!dets[0].clamped);
        let pm = dets[0].pixel_mask.as_ref().unwrap();
        let r = pm.bounding_rect().unwrap();
        assert!(r.x0 >= 10 && r.x1 <= 50 && r.y0 >= 10 && r.y1 <= 50);
    }

    #[test]
    fn detector_absent_label_is_empty() {
        let frame = Frame::new("f", RgbImage::new(100, 100));
        let dets = detector()
            .detect_segment(&frame, &["knife".to_string()])
            .unwrap();
        assert!(dets.is_empty());
        let other = Frame::new("unknown", RgbImage::new(100, 100));
        assert!(detector()
            .detect_segment(&other, &["tomato".to_string()])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn detector_clamps_out_of_bounds_boxes() {
        // (60,70,140,130) on a 100x100 frame clamps to (60,70,100,100)
        let frame = Frame::new("f", RgbImage::new(100, 100));
        let dets = detector()
            .detect_segment(&frame, &["board".to_string()])
            .unwrap();
        assert!(dets[0].clamped);
        assert_eq!(dets[0].bbox, BBox::new(60.0, 70.0, 100.0, 100.0));
    }

    #[test]
    fn identity_inpainter_is_identity() {
        let img = RgbImage::from_fn(5, 5, |x, y| Rgb([x as u8, y as u8, 7]));
        let out = IdentityInpainter
            .inpaint(&img, &Mask::full(5, 5), "p", 1)
            .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn checkerboard_changes_every_pixel_and_is_deterministic() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 13) as u8, (y * 7) as u8, 200]));
        let mask = Mask::full(16, 16);
        let m = CheckerboardInpainter::default();
        let a = m.inpaint(&img, &mask, "p", 42).unwrap();
        let b = m.inpaint(&img, &mask, "p", 42).unwrap();
        assert_eq!(a, b);
        for (p, q) in a.pixels().zip(img.pixels()) {
            for c in 0..3 {
                assert_ne!(p[c], q[c]);
            }
        }
        assert_ne!(a, m.inpaint(&img, &mask, "p", 43).unwrap());
    }

    #[test]
    fn inpainter_rejects_mismatched_mask() {
        let img = RgbImage::new(4, 4);
        assert!(matches!(
            IdentityInpainter.inpaint(&img, &Mask::full(3, 4), "p", 0),
            Err(BackendError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn embedder_unit_norm_and_deterministic() {
        let e = MockEmbedder::default();
        let img = RgbImage::from_fn(32, 24, |x, y| Rgb([(x * 8) as u8, (y * 10) as u8, 90]));
        let v = e.embed(&img).unwrap();
        assert_eq!(v.len(), 64);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(v, e.embed(&img).unwrap());
    }

    #[test]
    fn embedder_is_locality_sensitive() {
        let e = MockEmbedder::default();
        let img = RgbImage::from_fn(64, 64, |x, y| Rgb([(x * 4) as u8, (y * 4) as u8, 128]));
        let mut changed = img.clone();
        changed.put_pixel(20, 20, Rgb([255, 0, 0]));
        let a = e.embed(&img).unwrap();
        let b = e.embed(&changed).unwrap();
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(cos > 0.99, "cos = {cos}");
    }
}
