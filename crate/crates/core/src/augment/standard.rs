//! Horizontal flip, rotation, brightness/contrast jitter and crop-and-resize.
//!
//! Geometry is one inverse mapping from output pixels to source pixels, used
//! for the image and every instance mask alike, so the two never drift apart.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardAugConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Multiplicative brightness jitter, e.g. 0.2 for a factor in [0.8, 1.2].
    pub brightness: f64,
    pub contrast: f64,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop_fraction: f64,
    /// Output side length.
    pub output_size: usize,
}

impl Default for StandardAugConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation_deg: 20.0,
            brightness: 0.2,
            contrast: 0.2,
            min_crop_fraction: 0.7,
            output_size: 448,
        }
    }
}

/// The drawn transform, recorded in provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardParams {
    pub flip: bool,
    pub angle_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
    /// Crop box in the flipped/rotated frame: x0, y0, width, height.
    pub crop: (f64, f64, f64, f64),
    pub output: (usize, usize),
}

impl StandardParams {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            flip: false,
            angle_deg: 0.0,
            brightness: 1.0,
            contrast: 1.0,
            crop: (0.0, 0.0, width as f64, height as f64),
            output: (width, height),
        }
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize, cfg: &StandardAugConfig) -> Self {
        let jitter = |rng: &mut R, amount: f64| {
            if amount > 0.0 {
                rng.gen_range(1.0 - amount..=1.0 + amount)
            } else {
                1.0
            }
        };
        let flip = rng.gen_bool(cfg.flip_prob.clamp(0.0, 1.0));
        let angle_deg = if cfg.max_rotation_deg > 0.0 {
            rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        } else {
            0.0
        };
        let brightness = jitter(rng, cfg.brightness);
        let contrast = jitter(rng, cfg.contrast);
        let frac = if cfg.min_crop_fraction < 1.0 {
            rng.gen_range(cfg.min_crop_fraction..=1.0)
        } else {
            1.0
        };
        let (cw, ch) = (width as f64 * frac, height as f64 * frac);
        let x0 = rng.gen_range(0.0..=width as f64 - cw);
        let y0 = rng.gen_range(0.0..=height as f64 - ch);
        Self {
            flip,
            angle_deg,
            brightness,
            contrast,
            crop: (x0, y0, cw, ch),
            output: (cfg.output_size, cfg.output_size),
        }
    }

    /// Source pixel feeding output pixel `(x, y)`, or `None` when the
    /// rotation pulls in a point outside the source.
    pub fn source_of(&self, x: usize, y: usize, width: usize, height: usize) -> Option<(usize, usize)> {
        let (ow, oh) = self.output;
        let (x0, y0, cw, ch) = self.crop;
        // output pixel centre -> crop frame
        let px = x0 + (x as f64 + 0.5) * cw / ow as f64;
        let py = y0 + (y as f64 + 0.5) * ch / oh as f64;
        // undo the rotation about the image centre
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
        let (dx, dy) = (px - cx, py - cy);
        let mut sx = cx + c * dx - s * dy;
        let sy = cy + s * dx + c * dy;
        if self.flip {
            sx = width as f64 - sx;
        }
        let (u, v) = (sx.floor(), sy.floor());
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            return None;
        }
        Some((u as usize, v as usize))
    }

    /// The full source coordinate map, row-major over the output.
    pub fn mapping(&self, width: usize, height: usize) -> Vec<Option<(usize, usize)>> {
        let (ow, oh) = self.output;
        (0..oh)
            .flat_map(|y| (0..ow).map(move |x| (x, y)))
            .map(|(x, y)| self.source_of(x, y, width, height))
            .collect()
    }
}

/// Brightness then contrast around the image mean, per channel.
pub fn photometric(image: &RasterImage, brightness: f64, contrast: f64) -> RasterImage {
    let n = image.pixels().len() as f64;
    let mut mean = [0.0; 3];
    for px in image.pixels() {
        for c in 0..3 {
            mean[c] += px[c] as f64 / n;
        }
    }
    let mut out = image.clone();
    for px in out.pixels_mut() {
        for c in 0..3 {
            let b = px[c] as f64 * brightness;
            let m = mean[c] * brightness;
            px[c] = ((b - m) * contrast + m).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Applies the transform to an image and its masks. Out-of-source pixels
/// become black background.
pub fn apply_standard(
    image: &RasterImage,
    masks: &[BinaryMask],
    params: &StandardParams,
) -> (RasterImage, Vec<BinaryMask>) {
    let (w, h) = image.dims();
    let (ow, oh) = params.output;
    let map = params.mapping(w, h);
    let toned = photometric(image, params.brightness, params.contrast);
    let img = RasterImage::from_fn(ow, oh, |x, y| match map[y * ow + x] {
        Some((u, v)) => toned.get(u, v),
        None => [0; 3],
    })
    .expect("positive output size");
    let out_masks = masks
        .iter()
        .map(|m| BinaryMask::from_fn(ow, oh, |x, y| map[y * ow + x].is_some_and(|(u, v)| m.get(u, v))))
        .collect();
    (img, out_masks)
}
