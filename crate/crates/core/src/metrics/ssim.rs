//! Structural similarity with a Gaussian window.

use image::RgbImage;

use super::{check_dims, MetricsError, MetricsResult, MAX_VALUE};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable 'valid' filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn channel_ssim(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter_valid(a, w, h, k);
    let (mu_b, _, _) = filter_valid(b, w, h, k);
    let (aa, _, _) = filter_valid(&prod(a, a), w, h, k);
    let (bb, _, _) = filter_valid(&prod(b, b), w, h, k);
    let (ab, _, _) = filter_valid(&prod(a, b), w, h, k);
    let mut map = Vec::with_capacity(ow * oh);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        map.push(num / den);
    }
    super::stable_mean(&map).unwrap_or(1.0)
}

/// Mean local SSIM ×100 (11×11 Gaussian window, σ = 1.5, K1 = 0.01,
/// K2 = 0.03, 8-bit range), computed per channel and averaged. Images smaller
/// than the window use the largest odd window that fits.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> MetricsResult<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w == 0 || h == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let kernel = gaussian_kernel(size, SSIM_SIGMA);
    let plane =
        |img: &RgbImage, c: usize| -> Vec<f64> { img.pixels().map(|p| p[c] as f64).collect() };
    let per_channel: Vec<f64> = (0..3)
        .map(|c| channel_ssim(&plane(a, c), &plane(b, c), w, h, &kernel))
        .collect();
    Ok(100.0 * per_channel.iter().sum::<f64>() / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn kernel_sums_to_one() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn identical_is_100() {
        let a = noise(30, 20, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 100.0);
        let tiny = noise(3, 2, 2);
        assert_eq!(ssim(&tiny, &tiny).unwrap(), 100.0);
    }

    #[test]
    fn constant_shift_matches_luminance_term() {
        let (u, v) = (100.0, 130.0);
        let a = RgbImage::from_pixel(16, 16, Rgb([100, 100, 100]));
        let b = RgbImage::from_pixel(16, 16, Rgb([130, 130, 130]));
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = 100.0 * (2.0 * u * v + c1) / (u * u + v * v + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn independent_noise_is_near_zero() {
        let s = ssim(&noise(64, 64, 3), &noise(64, 64, 4)).unwrap();
        assert!(s.abs() < 5.0, "{s}");
    }

    #[test]
    fn symmetric() {
        let (a, b) = (noise(20, 17, 5), noise(20, 17, 6));
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }
}
