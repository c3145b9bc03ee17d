//! Evaluation metrics: embedding similarity scores (CLIP, M-CLIP, D-CLIP),
//! FID, PSNR and SSIM, plus report aggregation.
//!
//! Similarity scores are reported ×100; the raw cosine is kept alongside in
//! reports.

mod fid;
mod report;
mod ssim;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::raster::{crop, Mask};

pub use fid::{fid, fid_from_features, FidResult, FID_EPSILON};
pub use report::{render_table, report, Aggregates, MetricReport, PairScore, RawAggregates};
pub use ssim::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

/// Largest 8-bit sample value.
pub const MAX_VALUE: f64 = 255.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("images differ in size: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("embedding lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("zero-length embedding")]
    ZeroNorm,
    #[error("mask is empty")]
    EmptyMask,
    #[error("reference similarity is zero")]
    ZeroReferenceSimilarity,
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("need at least 2 samples per set, got {0}")]
    TooFewSamples(usize),
    #[error("feature dimension {actual} does not match {expected}")]
    FeatureDimension { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

/// Cosine similarity of two vectors. Bitwise-equal inputs give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> MetricsResult<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(MetricsError::ZeroNorm);
    }
    if a == b {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> MetricsResult<()> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    Ok(())
}

/// Raw cosine between the embeddings of two images.
pub fn image_cosine(a: &RgbImage, b: &RgbImage, embedder: &dyn Embedder) -> MetricsResult<f64> {
    cosine(&embedder.embed(a)?, &embedder.embed(b)?)
}

/// 100 × cosine of the two embeddings.
pub fn clip_score(a: &RgbImage, b: &RgbImage, embedder: &dyn Embedder) -> MetricsResult<f64> {
    Ok(100.0 * image_cosine(a, b, embedder)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MClipOptions {
    /// Crop to the mask's bounding rectangle; otherwise black out unmasked pixels.
    pub crop: bool,
    /// Fall back to the whole-image score when the mask is empty.
    pub empty_fallback: bool,
}

impl Default for MClipOptions {
    fn default() -> Self {
        Self {
            crop: true,
            empty_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MClip {
    pub value: f64,
    /// The mask was empty and the whole-image score was used.
    pub fell_back: bool,
}

/// CLIP score restricted to the masked region of both images.
pub fn m_clip(
    a: &RgbImage,
    b: &RgbImage,
    mask: &Mask,
    embedder: &dyn Embedder,
    options: MClipOptions,
) -> MetricsResult<MClip> {
    check_dims(a, b)?;
    if mask.dimensions() != a.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            a: a.dimensions(),
            b: mask.dimensions(),
        });
    }
    let Some(rect) = mask.bounding_rect() else {
        if !options.empty_fallback {
            return Err(MetricsError::EmptyMask);
        }
        return Ok(MClip {
            value: clip_score(a, b, embedder)?,
            fell_back: true,
        });
    };
    let value = if options.crop {
        clip_score(&crop(a, rect), &crop(b, rect), embedder)?
    } else {
        let black = |img: &RgbImage| {
            let mut out = img.clone();
            for (x, y, p) in out.enumerate_pixels_mut() {
                if !mask.get(x, y) {
                    *p = Rgb([0, 0, 0]);
                }
            }
            out
        };
        clip_score(&black(a), &black(b), embedder)?
    };
    Ok(MClip {
        value,
        fell_back: false,
    })
}

/// Relative loss of similarity to the input, in percent, from raw cosines.
pub fn d_clip_from_cosines(cos_gt: f64, cos_hat: f64) -> MetricsResult<f64> {
    if cos_gt == 0.0 {
        return Err(MetricsError::ZeroReferenceSimilarity);
    }
    Ok(100.0 * (cos_gt - cos_hat) / cos_gt)
}

/// `100 · (CLIP(f_in, gt) − CLIP(f_in, hat)) / CLIP(f_in, gt)` on raw cosines.
pub fn d_clip(
    f_in: &RgbImage,
    gt: &RgbImage,
    hat: &RgbImage,
    embedder: &dyn Embedder,
) -> MetricsResult<f64> {
    let e_in = embedder.embed(f_in)?;
    let cos_gt = cosine(&e_in, &embedder.embed(gt)?)?;
    let cos_hat = cosine(&e_in, &embedder.embed(hat)?)?;
    d_clip_from_cosines(cos_gt, cos_hat)
}

/// Peak signal-to-noise ratio over all channels, in dB. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> MetricsResult<f64> {
    check_dims(a, b)?;
    let n = a.as_raw().len();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let sse: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Mean of the values, summed in sorted order so the result does not depend
/// on input order.
pub(crate) fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
}
