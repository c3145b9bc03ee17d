//! Binary masks, pixel rectangles and frame handles shared by every stage.

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

/// An RGB frame together with a stable key.
///
/// The key identifies the frame to fixture-driven mock backends (for example
/// `"P01_0012340:initial"`); real backends ignore it.
#[derive(Debug, Clone)]
pub struct Frame {
    pub key: String,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(key: impl Into<String>, image: RgbImage) -> Self {
        Self {
            key: key.into(),
            image,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.image.dimensions()
    }
}

/// Axis-aligned box in continuous pixel coordinates, `(x_min, y_min)` inclusive
/// and `(x_max, y_max)` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Clamps the box to `[0, width] x [0, height]`. The flag reports whether any
    /// coordinate moved.
    pub fn clamp_to(&self, width: u32, height: u32) -> (BBox, bool) {
        let (w, h) = (width as f64, height as f64);
        let clamped = BBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        };
        let moved = clamped != *self;
        (clamped, moved)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Pixels touched by the box: `floor` of the minimum and `ceil` of the
    /// maximum, clipped to the frame. Returns `(x0, y0, x1, y1)` with exclusive
    /// upper bounds; the rectangle may be empty.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let clip = |v: f64, hi: u32| -> u32 { v.max(0.0).min(hi as f64) as u32 };
        PixelRect {
            x0: clip(self.x_min.floor(), width),
            y0: clip(self.y_min.floor(), height),
            x1: clip(self.x_max.ceil(), width),
            y1: clip(self.y_max.ceil(), height),
        }
    }
}

/// Integer rectangle with exclusive upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }
}

/// Frame-sized binary raster. `true` marks a pixel the generator may repaint.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_rect(width: u32, height: u32, rect: PixelRect) -> Self {
        let mut mask = Self::empty(width, height);
        mask.fill_rect(rect);
        mask
    }

    pub fn from_bbox(width: u32, height: u32, bbox: &BBox) -> Self {
        Self::from_rect(width, height, bbox.pixel_rect(width, height))
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn fill_rect(&mut self, rect: PixelRect) {
        let x1 = rect.x1.min(self.width);
        let y1 = rect.y1.min(self.height);
        for y in rect.y0..y1 {
            for x in rect.x0..x1 {
                self.set(x, y, true);
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    /// Pixels set in `self`, in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dimensions(), other.dimensions(), "mask size mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        assert_eq!(self.dimensions(), other.dimensions(), "mask size mismatch");
        Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }

    /// Tight bounding rectangle of the set pixels, or `None` for an empty mask.
    pub fn bounding_rect(&self) -> Option<PixelRect> {
        let mut rect: Option<PixelRect> = None;
        for (x, y) in self.pixels() {
            rect = Some(match rect {
                None => PixelRect {
                    x0: x,
                    y0: y,
                    x1: x + 1,
                    y1: y + 1,
                },
                Some(r) => PixelRect {
                    x0: r.x0.min(x),
                    y0: r.y0.min(y),
                    x1: r.x1.max(x + 1),
                    y1: r.y1.max(y + 1),
                },
            });
        }
        rect
    }

    /// Mean pixel coordinate of the set pixels (pixel centres at `+0.5`).
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (x, y) in self.pixels() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Shifts the mask by an integer offset; pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::empty(self.width, self.height);
        for (x, y) in self.pixels() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, width: u32, height: u32) -> Mask {
        if (width, height) == self.dimensions() {
            return self.clone();
        }
        Mask::from_fn(width, height, |x, y| {
            let sx = ((x as u64 * self.width as u64) / width as u64) as u32;
            let sy = ((y as u64 * self.height as u64) / height as u64) as u32;
            self.get(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }

    /// Single-channel image, 0 = keep and 255 = inpaint.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    /// Inverse of [`Mask::to_gray`]; any value of 128 or more counts as set.
    pub fn from_gray(image: &GrayImage) -> Mask {
        let (w, h) = image.dimensions();
        Mask::from_fn(w, h, |x, y| image.get_pixel(x, y)[0] >= 128)
    }
}

/// Takes `overlay` wherever `mask` is set and `base` everywhere else.
pub fn composite(base: &RgbImage, overlay: &RgbImage, mask: &Mask) -> RgbImage {
    assert_eq!(base.dimensions(), overlay.dimensions());
    assert_eq!(base.dimensions(), mask.dimensions());
    let mut out = base.clone();
    for (x, y) in mask.pixels() {
        out.put_pixel(x, y, *overlay.get_pixel(x, y));
    }
    out
}

/// Copies the rectangle out of an image.
pub fn crop(image: &RgbImage, rect: PixelRect) -> RgbImage {
    image::imageops::crop_imm(image, rect.x0, rect.y0, rect.width(), rect.height()).to_image()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn bbox_clamp_reports_movement() {
        let (b, moved) = BBox::new(-5.0, 10.0, 120.0, 50.0).clamp_to(100, 100);
        assert!(moved);
        assert_eq!(b, BBox::new(0.0, 10.0, 100.0, 50.0));
        let (_, moved) = BBox::new(10.0, 10.0, 50.0, 50.0).clamp_to(100, 100);
        assert!(!moved);
    }

    #[test]
    fn pixel_rect_rounds_outward() {
        let r = BBox::new(1.2, 2.7, 4.1, 5.0).pixel_rect(10, 10);
        assert_eq!(
            r,
            PixelRect {
                x0: 1,
                y0: 2,
                x1: 5,
                y1: 5
            }
        );
        assert_eq!(r.area(), 12);
    }

    #[test]
    fn mask_union_and_count() {
        let a = Mask::from_bbox(10, 10, &BBox::new(0.0, 0.0, 2.0, 2.0));
        let b = Mask::from_bbox(10, 10, &BBox::new(5.0, 5.0, 8.0, 8.0));
        assert_eq!(a.union(&b).count(), 4 + 9);
        assert_eq!(a.intersect(&b).count(), 0);
    }

    #[test]
    fn bounding_rect_and_centroid() {
        let mut m = Mask::empty(8, 8);
        assert!(m.bounding_rect().is_none());
        m.set(2, 3, true);
        m.set(5, 6, true);
        assert_eq!(
            m.bounding_rect(),
            Some(PixelRect {
                x0: 2,
                y0: 3,
                x1: 6,
                y1: 7
            })
        );
        assert_eq!(m.centroid(), Some((4.0, 5.0)));
    }

    #[test]
    fn translate_drops_out_of_frame_pixels() {
        let m = Mask::from_rect(
            4,
            4,
            PixelRect {
                x0: 0,
                y0: 0,
                x1: 2,
                y1: 2,
            },
        );
        assert_eq!(m.translate(1, 1).count(), 4);
        assert_eq!(m.translate(3, 0).count(), 2);
    }

    #[test]
    fn gray_round_trip() {
        let m = Mask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        assert_eq!(Mask::from_gray(&m.to_gray()), m);
    }

    #[test]
    fn composite_respects_mask() {
        let base = RgbImage::from_pixel(3, 1, Rgb([0, 0, 0]));
        let over = RgbImage::from_pixel(3, 1, Rgb([9, 9, 9]));
        let mut m = Mask::empty(3, 1);
        m.set(1, 0, true);
        let out = composite(&base, &over, &m);
        assert_eq!(out.get_pixel(0, 0), &Rgb([0, 0, 0]));
        assert_eq!(out.get_pixel(1, 0), &Rgb([9, 9, 9]));
    }
}
