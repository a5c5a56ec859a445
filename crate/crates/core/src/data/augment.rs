//! Random affine and photometric augmentation on `[0, 1]` pixels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::RngStream;

/// Ranges the transform parameters are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    /// Fraction of the image extent, per axis.
    pub max_translate: f64,
    pub scale_range: (f64, f64),
    pub max_brightness: f64,
    pub max_contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { max_rotation_deg: 20.0, max_translate: 0.1, scale_range: (0.9, 1.1), max_brightness: 0.2, max_contrast: 0.2 }
    }
}

/// One draw of transform parameters. Translations are in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AffineParams {
    pub const IDENTITY: Self =
        Self { rotation_deg: 0.0, translate_x: 0.0, translate_y: 0.0, scale: 1.0, brightness: 0.0, contrast: 1.0 };

    pub fn sample(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut RngStream) -> Self {
        let sym = |rng: &mut RngStream, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let rotation_deg = sym(rng, cfg.max_rotation_deg);
        let translate_x = sym(rng, cfg.max_translate) * width as f64;
        let translate_y = sym(rng, cfg.max_translate) * height as f64;
        let (lo, hi) = cfg.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let brightness = sym(rng, cfg.max_brightness);
        let contrast = 1.0 + sym(rng, cfg.max_contrast);
        Self { rotation_deg, translate_x, translate_y, scale, brightness, contrast }
    }
}

/// Rotates/scales about the image centre, translates, resamples bilinearly
/// with zero fill, then applies `clamp(c·(p - 0.5) + 0.5 + b, 0, 1)`.
/// `image` is `[channels, height, width]`.
pub fn apply_affine(image: &[f64], channels: usize, height: usize, width: usize, p: &AffineParams) -> Vec<f64> {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let theta = p.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_s = 1.0 / p.scale;
    let mut out = vec![0.0; channels * height * width];
    for oy in 0..height {
        for ox in 0..width {
            // Inverse map: undo translation, then rotation and scale about the centre.
            let dx = ox as f64 - cx - p.translate_x;
            let dy = oy as f64 - cy - p.translate_y;
            let sx = (cos * dx + sin * dy) * inv_s + cx;
            let sy = (-sin * dx + cos * dy) * inv_s + cy;
            for c in 0..channels {
                let plane = &image[c * height * width..(c + 1) * height * width];
                out[(c * height + oy) * width + ox] = bilinear(plane, height, width, sy, sx);
            }
        }
    }
    for v in &mut out {
        *v = (p.contrast * (*v - 0.5) + 0.5 + p.brightness).clamp(0.0, 1.0);
    }
    out
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let mut v = 0.0;
    for (wy, yy) in [(1.0 - fy, y0), (fy, y0 + 1.0)] {
        if wy == 0.0 {
            continue;
        }
        for (wx, xx) in [(1.0 - fx, x0), (fx, x0 + 1.0)] {
            if wx != 0.0 {
                v += wy * wx * at(yy, xx);
            }
        }
    }
    v
}

/// Samples parameters from `cfg` and applies them; returns the image and the draw.
pub fn random_affine(
    image: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> (Vec<f64>, AffineParams) {
    let p = AffineParams::sample(cfg, height, width, rng);
    (apply_affine(image, channels, height, width, &p), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::rng_stream;

    fn ramp(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| (i % 7) as f64 / 7.0).collect()
    }

    #[test]
    fn identity_parameters_leave_image_unchanged() {
        let img = ramp(28, 28);
        assert_eq!(apply_affine(&img, 1, 28, 28, &AffineParams::IDENTITY), img);
    }

    /// Reference resampler for a pure integer shift.
    fn shift_reference(img: &[f64], h: usize, w: usize, tx: i64, ty: i64) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x - tx, y - ty);
                if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                    out[(y * w as i64 + x) as usize] = img[(sy * w as i64 + sx) as usize];
                }
            }
        }
        out
    }

    #[test]
    fn integer_translation_moves_hot_pixel() {
        let (h, w) = (9, 11);
        let mut img = vec![0.0; h * w];
        img[4 * w + 5] = 1.0;
        for (tx, ty) in [(2, -1), (-3, 3), (0, 4)] {
            let p = AffineParams { translate_x: tx as f64, translate_y: ty as f64, ..AffineParams::IDENTITY };
            let out = apply_affine(&img, 1, h, w, &p);
            assert_eq!(out, shift_reference(&img, h, w, tx, ty));
            let hot = out.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(hot, ((4 + ty) as usize) * w + (5 + tx) as usize);
        }
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = AugmentConfig::default();
        let mut rng = rng_stream(1, &[]);
        for _ in 0..10_000 {
            let p = AffineParams::sample(&cfg, 28, 28, &mut rng);
            assert!(p.rotation_deg.abs() <= 20.0);
            assert!(p.translate_x.abs() <= 2.8 + 1e-12 && p.translate_y.abs() <= 2.8 + 1e-12);
            assert!((0.9..=1.1).contains(&p.scale));
            assert!(p.brightness.abs() <= 0.2);
            assert!((0.8..=1.2).contains(&p.contrast));
        }
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let img = ramp(28, 28);
        let mut rng = rng_stream(2, &[]);
        for _ in 0..50 {
            let (out, _) = random_affine(&img, 1, 28, 28, &AugmentConfig::default(), &mut rng);
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn photometric_formula() {
        let p = AffineParams { brightness: 0.1, contrast: 1.2, ..AffineParams::IDENTITY };
        let out = apply_affine(&[0.75, 0.0, 1.0, 0.5], 1, 2, 2, &p);
        let want = [1.2 * 0.25 + 0.6, (1.2f64 * -0.5 + 0.6).max(0.0), 1.0, 0.6];
        for (a, b) in out.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
