//! The four copy-paste modes: simple, union, exclusion and image mixing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedSample;
use crate::types::{BinaryMask, RasterImage};

use super::SuemConfig;

/// Placement attempts before a mode gives up on a placement.
pub const MAX_PLACEMENT_TRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuemMode {
    Simple,
    Union,
    Exclusion,
    Mixing,
}

impl SuemMode {
    pub const ALL: [SuemMode; 4] = [SuemMode::Simple, SuemMode::Union, SuemMode::Exclusion, SuemMode::Mixing];
}

/// An object cut out along its bounding box and rescaled with
/// nearest-neighbour sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPatch {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub mask: Vec<bool>,
}

impl ObjectPatch {
    /// Returns `None` for an empty mask.
    pub fn extract(image: &RasterImage, mask: &BinaryMask, scale: f64) -> Option<Self> {
        let (u0, v0, u1, v1) = mask.bounding_box()?;
        let (bw, bh) = (u1 - u0, v1 - v0);
        let width = ((bw as f64 * scale).round() as usize).max(1);
        let height = ((bh as f64 * scale).round() as usize).max(1);
        let mut pixels = Vec::with_capacity(width * height);
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            let sv = v0 + nearest(y, height, bh);
            for x in 0..width {
                let su = u0 + nearest(x, width, bw);
                pixels.push(image.get(su, sv));
                bits.push(mask.get(su, sv));
            }
        }
        Some(Self {
            width,
            height,
            pixels,
            mask: bits,
        })
    }

    /// Top-left offset that puts the patch's box centre on `(cx, cy)`.
    pub fn offset_for_center(&self, cx: usize, cy: usize) -> (i64, i64) {
        (
            cx as i64 - (self.width / 2) as i64,
            cy as i64 - (self.height / 2) as i64,
        )
    }

    /// Pastes masked patch pixels into `target` at `offset`, clipping at the
    /// border. Returns the pasted footprint in target coordinates.
    pub fn paste(&self, target: &mut RasterImage, offset: (i64, i64)) -> BinaryMask {
        let (tw, th) = target.dims();
        let mut footprint = BinaryMask::empty(tw, th);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if !self.mask[i] {
                    continue;
                }
                let (tx, ty) = (offset.0 + x as i64, offset.1 + y as i64);
                if tx < 0 || ty < 0 || tx >= tw as i64 || ty >= th as i64 {
                    continue;
                }
                target.set(tx as usize, ty as usize, self.pixels[i]);
                footprint.set(tx as usize, ty as usize, true);
            }
        }
        footprint
    }
}

/// Source index for destination index `i` when resampling `src_len` onto
/// `dst_len` cells.
pub(crate) fn nearest(i: usize, dst_len: usize, src_len: usize) -> usize {
    (((i as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
}

/// What a copy-paste placement did; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub scale: f64,
    pub offset: (i64, i64),
    pub patch_size: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyPasteInfo {
    /// Mode that produced the output (exclusion may fall back to simple).
    pub applied: SuemMode,
    pub fell_back: bool,
    pub paste: Option<PasteRecord>,
    pub alpha: Option<f64>,
}

fn draw_scale<R: Rng + ?Sized>(rng: &mut R, cfg: &SuemConfig) -> f64 {
    let (lo, hi) = cfg.scale_range;
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn draw_center<R: Rng + ?Sized>(rng: &mut R, width: usize, height: usize) -> (usize, usize) {
    (rng.gen_range(0..width), rng.gen_range(0..height))
}

/// Pastes the source object into the extra image; the pasted object is the
/// ground truth. Returns the source unchanged if every placement clips the
/// object away.
pub fn simple_cp<R: Rng + ?Sized>(
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    rng: &mut R,
    cfg: &SuemConfig,
) -> (AnnotatedSample, CopyPasteInfo) {
    let scale = draw_scale(rng, cfg);
    let patch = ObjectPatch::extract(&source.image, source.gt(), scale).expect("source object is nonempty");
    let (w, h) = extra.image.dims();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let (cx, cy) = draw_center(rng, w, h);
        let offset = patch.offset_for_center(cx, cy);
        let mut image = extra.image.clone();
        let gt = patch.paste(&mut image, offset);
        if !gt.is_empty() {
            let sample = AnnotatedSample::single(source.id.clone(), image, gt).expect("nonempty gt");
            return (
                sample,
                CopyPasteInfo {
                    applied: SuemMode::Simple,
                    fell_back: false,
                    paste: Some(PasteRecord {
                        scale,
                        offset,
                        patch_size: (patch.width, patch.height),
                    }),
                    alpha: None,
                },
            );
        }
    }
    (
        source.clone(),
        CopyPasteInfo {
            applied: SuemMode::Simple,
            fell_back: true,
            paste: None,
            alpha: None,
        },
    )
}

/// Pastes the extra object into the source image, returning the composite,
/// the pasted footprint and its record. A fully clipped placement after all
/// tries yields the source image and an empty footprint.
fn paste_extra<R: Rng + ?Sized>(
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    rng: &mut R,
    cfg: &SuemConfig,
    accept: impl Fn(&BinaryMask) -> bool,
) -> Option<(RasterImage, BinaryMask, PasteRecord)> {
    let scale = draw_scale(rng, cfg);
    let patch = ObjectPatch::extract(&extra.image, extra.gt(), scale)?;
    let (w, h) = source.image.dims();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let (cx, cy) = draw_center(rng, w, h);
        let offset = patch.offset_for_center(cx, cy);
        let mut image = source.image.clone();
        let footprint = patch.paste(&mut image, offset);
        if !footprint.is_empty() && accept(&footprint) {
            let rec = PasteRecord {
                scale,
                offset,
                patch_size: (patch.width, patch.height),
            };
            return Some((image, footprint, rec));
        }
    }
    None
}

/// Pastes the extra object into the source image; the ground truth is the
/// union of both masks.
pub fn union_cp<R: Rng + ?Sized>(
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    rng: &mut R,
    cfg: &SuemConfig,
) -> (AnnotatedSample, CopyPasteInfo) {
    let mut info = CopyPasteInfo {
        applied: SuemMode::Union,
        fell_back: false,
        paste: None,
        alpha: None,
    };
    let Some((image, footprint, rec)) = paste_extra(source, extra, rng, cfg, |_| true) else {
        let sample = AnnotatedSample::single(source.id.clone(), source.image.clone(), source.gt().clone())
            .expect("source gt is nonempty");
        return (sample, info);
    };
    let gt = source.gt().union(&footprint).expect("same dimensions");
    info.paste = Some(rec);
    (
        AnnotatedSample::single(source.id.clone(), image, gt).expect("nonempty gt"),
        info,
    )
}

/// Pastes the extra object into the source image as an occluder; the ground
/// truth is the source mask minus the occluder. Falls back to simple mode
/// when no placement leaves at least `min_residual_fraction` of the source.
pub fn exclusion_cp<R: Rng + ?Sized>(
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    rng: &mut R,
    cfg: &SuemConfig,
) -> (AnnotatedSample, CopyPasteInfo) {
    let src_area = source.gt().count() as f64;
    let min_keep = cfg.min_residual_fraction * src_area;
    let residual_ok = |fp: &BinaryMask| {
        let kept = source.gt().difference(fp).expect("same dimensions").count();
        kept > 0 && kept as f64 >= min_keep
    };
    match paste_extra(source, extra, rng, cfg, residual_ok) {
        Some((image, footprint, rec)) => {
            let gt = source.gt().difference(&footprint).expect("same dimensions");
            (
                AnnotatedSample::single(source.id.clone(), image, gt).expect("residual is nonempty"),
                CopyPasteInfo {
                    applied: SuemMode::Exclusion,
                    fell_back: false,
                    paste: Some(rec),
                    alpha: None,
                },
            )
        }
        None => {
            let (sample, mut info) = simple_cp(source, extra, rng, cfg);
            info.fell_back = true;
            (sample, info)
        }
    }
}

/// Nearest-neighbour resize of an RGB image.
pub fn resize_nearest(image: &RasterImage, width: usize, height: usize) -> RasterImage {
    let (sw, sh) = image.dims();
    RasterImage::from_fn(width, height, |u, v| {
        image.get(nearest(u, width, sw), nearest(v, height, sh))
    })
    .expect("positive dimensions")
}

pub fn resize_mask_nearest(mask: &BinaryMask, width: usize, height: usize) -> BinaryMask {
    let (sw, sh) = mask.dims();
    BinaryMask::from_fn(width, height, |u, v| {
        mask.get(nearest(u, width, sw), nearest(v, height, sh))
    })
}

/// Alpha-blends the extra image (resized to the source size) into the
/// source image. The ground truth is untouched.
pub fn image_mixing(
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    cfg: &SuemConfig,
) -> (AnnotatedSample, CopyPasteInfo) {
    let alpha = cfg.mixing_alpha;
    let (w, h) = source.image.dims();
    let other = resize_nearest(&extra.image, w, h);
    let mut image = source.image.clone();
    for (px, ex) in image.pixels_mut().iter_mut().zip(other.pixels()) {
        for c in 0..3 {
            let mixed = alpha * px[c] as f64 + (1.0 - alpha) * ex[c] as f64;
            px[c] = mixed.round().clamp(0.0, 255.0) as u8;
        }
    }
    let mut out = source.clone();
    out.image = image;
    (
        out,
        CopyPasteInfo {
            applied: SuemMode::Mixing,
            fell_back: false,
            paste: None,
            alpha: Some(alpha),
        },
    )
}

pub fn apply_mode<R: Rng + ?Sized>(
    mode: SuemMode,
    source: &AnnotatedSample,
    extra: &AnnotatedSample,
    rng: &mut R,
    cfg: &SuemConfig,
) -> (AnnotatedSample, CopyPasteInfo) {
    match mode {
        SuemMode::Simple => simple_cp(source, extra, rng, cfg),
        SuemMode::Union => union_cp(source, extra, rng, cfg),
        SuemMode::Exclusion => exclusion_cp(source, extra, rng, cfg),
        SuemMode::Mixing => image_mixing(source, extra, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(w: usize, h: usize, color: [u8; 3], f: impl Fn(usize, usize) -> bool) -> AnnotatedSample {
        let img =
            RasterImage::from_fn(w, h, |u, v| [color[0], color[1].wrapping_add((u + v) as u8), color[2]]).unwrap();
        AnnotatedSample::single("s", img, BinaryMask::from_fn(w, h, f)).unwrap()
    }

    fn unit_scale() -> SuemConfig {
        SuemConfig {
            scale_range: (1.0, 1.0),
            ..SuemConfig::default()
        }
    }

    #[test]
    fn unit_scale_patch_is_a_pure_copy() {
        let src = sample(10, 10, [200, 0, 0], |u, v| (2..5).contains(&u) && (3..7).contains(&v));
        let patch = ObjectPatch::extract(&src.image, src.gt(), 1.0).unwrap();
        assert_eq!((patch.width, patch.height), (3, 4));
        let mut target = RasterImage::filled(12, 12, [0; 3]).unwrap();
        let fp = patch.paste(&mut target, (5, 6));
        assert_eq!(fp.count(), src.gt().count());
        for (u, v) in src.gt().foreground() {
            assert_eq!(target.get(u + 3, v + 3), src.image.get(u, v));
            assert!(fp.get(u + 3, v + 3));
        }
    }

    #[test]
    fn simple_mode_gt_is_the_pasted_object() {
        let src = sample(16, 16, [250, 0, 0], |u, v| (4..8).contains(&u) && (4..8).contains(&v));
        let extra = sample(16, 16, [0, 0, 90], |u, v| u < 3 && v < 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (out, info) = simple_cp(&src, &extra, &mut rng, &unit_scale());
            let rec = info.paste.unwrap();
            assert!(out.gt().count() <= src.gt().count());
            for (u, v) in out.gt().foreground() {
                assert_eq!(out.image.get(u, v)[0], 250);
                let (su, sv) = (
                    (u as i64 - rec.offset.0 + 4) as usize,
                    (v as i64 - rec.offset.1 + 4) as usize,
                );
                assert!(src.gt().get(su, sv));
            }
        }
    }

    #[test]
    fn union_with_unplaceable_extra_keeps_source() {
        let src = sample(8, 8, [1, 2, 3], |u, v| u == 2 && v == 2);
        // extra object never lands on its own patch pixels: a ring whose box
        // centre is hollow, shrunk to one pixel that maps onto the hole
        let extra = sample(8, 8, [9, 9, 9], |u, v| (u == 0 || u == 2) && v == 1);
        let cfg = SuemConfig {
            scale_range: (0.34, 0.34),
            ..SuemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, info) = union_cp(&src, &extra, &mut rng, &cfg);
        assert!(info.paste.is_none());
        assert_eq!(out.gt(), src.gt());
    }

    #[test]
    fn full_occluder_forces_exclusion_fallback() {
        let src = sample(10, 10, [200, 0, 0], |u, v| (3..6).contains(&u) && (3..6).contains(&v));
        let extra = sample(10, 10, [0, 0, 200], |_, _| true);
        let cfg = SuemConfig {
            scale_range: (3.0, 3.0),
            ..SuemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, info) = exclusion_cp(&src, &extra, &mut rng, &cfg);
        assert!(info.fell_back);
        assert_eq!(info.applied, SuemMode::Simple);
    }

    #[test]
    fn mixing_arithmetic() {
        let src = AnnotatedSample::single(
            "a",
            RasterImage::filled(2, 2, [100, 0, 0]).unwrap(),
            BinaryMask::full(2, 2),
        )
        .unwrap();
        let extra = AnnotatedSample::single(
            "b",
            RasterImage::filled(3, 3, [200, 0, 0]).unwrap(),
            BinaryMask::full(3, 3),
        )
        .unwrap();
        let (out, _) = image_mixing(&src, &extra, &SuemConfig::default());
        assert!(out.image.pixels().iter().all(|&p| p == [150, 0, 0]));
        let cfg = SuemConfig {
            mixing_alpha: 1.0,
            ..SuemConfig::default()
        };
        let (out, _) = image_mixing(&src, &extra, &cfg);
        assert_eq!(out.image, src.image);
        assert_eq!(out.gt(), src.gt());
    }
}
