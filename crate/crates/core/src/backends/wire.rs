//! JSON bodies exchanged with remote backends. Images travel as base64 PNG.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::raster::Mask;

pub fn encode_png_rgb(image: &RgbImage) -> Result<String, String> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn encode_png_mask(mask: &Mask) -> Result<String, String> {
    let mut buf = Cursor::new(Vec::new());
    mask.to_gray()
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png_rgb(data: &str) -> Result<RgbImage, String> {
    let bytes = STANDARD.decode(data).map_err(|e| e.to_string())?;
    Ok(image::load_from_memory(&bytes)
        .map_err(|e| e.to_string())?
        .to_rgb8())
}

pub fn decode_png_mask(data: &str) -> Result<Mask, String> {
    let bytes = STANDARD.decode(data).map_err(|e| e.to_string())?;
    let gray: GrayImage = image::load_from_memory(&bytes)
        .map_err(|e| e.to_string())?
        .to_luma8();
    Ok(Mask::from_gray(&gray))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireTurn {
    pub role: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatBody {
    pub model: String,
    pub action: String,
    pub messages: Vec<WireTurn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatReply {
    pub reply: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectBody {
    pub model: String,
    pub image: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    pub score: f64,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectReply {
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InpaintBody {
    pub model: String,
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InpaintReply {
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedBody {
    pub model: String,
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedReply {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesReply {
    pub features: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn png_payloads_round_trip(w in 1u32..12, h in 1u32..12, seed in any::<u8>()) {
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([seed ^ x as u8, y as u8, seed]));
            prop_assert_eq!(decode_png_rgb(&encode_png_rgb(&img).unwrap()).unwrap(), img);
            let mask = Mask::from_fn(w, h, |x, y| (x as u8 ^ y as u8 ^ seed) & 1 == 1);
            prop_assert_eq!(decode_png_mask(&encode_png_mask(&mask).unwrap()).unwrap(), mask);
        }
    }
}
