//! Annotated samples, the on-disk dataset layout, and a synthetic generator.
//!
//! Layout:
//!
//! ```text
//! <root>/images/<stem>.png|jpg
//! <root>/masks/<stem>.inst<N>.png     one file per instance, nonzero = foreground
//! <root>/masks/<stem>.png             allowed when an image has a single instance
//! <root>/provenance/<stem>.json       optional, written by the augmenter
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::error::{check_dims, Error, Result};
use crate::formats::{read_image, read_mask, write_image, write_mask};
use crate::seed::stream;
use crate::types::{BinaryMask, RasterImage};

/// An image with per-instance masks; `selected` names the object of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub id: String,
    pub image: RasterImage,
    pub instances: Vec<BinaryMask>,
    pub selected: usize,
}

impl AnnotatedSample {
    pub fn new(id: impl Into<String>, image: RasterImage, instances: Vec<BinaryMask>, selected: usize) -> Result<Self> {
        for m in &instances {
            check_dims(image.dims(), m.dims())?;
        }
        let Some(target) = instances.get(selected) else {
            return Err(Error::Config(format!(
                "selected instance {selected} out of range ({} instances)",
                instances.len()
            )));
        };
        if target.is_empty() {
            return Err(Error::EmptyGroundTruth);
        }
        Ok(Self {
            id: id.into(),
            image,
            instances,
            selected,
        })
    }

    pub fn single(id: impl Into<String>, image: RasterImage, gt: BinaryMask) -> Result<Self> {
        Self::new(id, image, vec![gt], 0)
    }

    /// Ground truth of the selected object.
    pub fn gt(&self) -> &BinaryMask {
        &self.instances[self.selected]
    }

    /// One sample per nonempty instance, each selecting its own object.
    pub fn per_instance(&self) -> Vec<AnnotatedSample> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(k, _)| AnnotatedSample {
                id: if self.instances.len() == 1 {
                    self.id.clone()
                } else {
                    format!("{}#{k}", self.id)
                },
                image: self.image.clone(),
                instances: self.instances.clone(),
                selected: k,
            })
            .collect()
    }
}

fn parse_mask_name(name: &str) -> Option<(String, Option<usize>)> {
    let stem = name.strip_suffix(".png")?;
    if let Some((base, idx)) = stem.rsplit_once(".inst") {
        if let Ok(k) = idx.parse() {
            return Some((base.to_string(), Some(k)));
        }
    }
    Some((stem.to_string(), None))
}

/// Loads every image under `root/images` with its instance masks, sorted by
/// stem. Images without any nonempty mask are skipped.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<AnnotatedSample>> {
    let root = root.as_ref();
    let mut images: BTreeMap<String, std::path::PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(root.join("images"))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                images.insert(stem.to_string(), path.clone());
            }
        }
    }

    let mut masks: BTreeMap<String, Vec<(usize, std::path::PathBuf)>> = BTreeMap::new();
    for entry in fs::read_dir(root.join("masks"))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some((stem, idx)) = parse_mask_name(name) {
            masks.entry(stem).or_default().push((idx.unwrap_or(0), path.clone()));
        }
    }

    let mut out = Vec::new();
    for (stem, img_path) in images {
        let Some(mut files) = masks.remove(&stem) else {
            log::warn!("{stem}: no masks, skipped");
            continue;
        };
        files.sort();
        let image = read_image(&img_path)?;
        let mut instances = Vec::with_capacity(files.len());
        for (_, p) in &files {
            let m = read_mask(p)?;
            check_dims(image.dims(), m.dims())?;
            instances.push(m);
        }
        let Some(selected) = instances.iter().position(|m| !m.is_empty()) else {
            log::warn!("{stem}: all masks empty, skipped");
            continue;
        };
        out.push(AnnotatedSample {
            id: stem,
            image,
            instances,
            selected,
        });
    }
    Ok(out)
}

/// Writes samples in the dataset layout. `provenance`, when given, is
/// written as `provenance/<id>.json` next to each sample.
pub fn write_sample<P: Serialize>(
    root: impl AsRef<Path>,
    sample: &AnnotatedSample,
    provenance: Option<&P>,
) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    write_image(&sample.image, root.join("images").join(format!("{}.png", sample.id)))?;
    for (k, m) in sample.instances.iter().enumerate() {
        write_mask(m, root.join("masks").join(format!("{}.inst{k}.png", sample.id)))?;
    }
    if let Some(p) = provenance {
        fs::create_dir_all(root.join("provenance"))?;
        let text = serde_json::to_string_pretty(p)?;
        fs::write(root.join("provenance").join(format!("{}.json", sample.id)), text)?;
    }
    Ok(())
}

pub fn write_dataset(root: impl AsRef<Path>, samples: &[AnnotatedSample]) -> Result<()> {
    for s in samples {
        write_sample::<()>(root.as_ref(), s, None)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Ellipse,
    Rectangle,
}

struct ShapeParams {
    shape: Shape,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl ShapeParams {
    fn random<R: Rng>(rng: &mut R, size: f64, min_r: f64, max_r: f64) -> Self {
        let shape = if rng.gen_bool(0.5) {
            Shape::Ellipse
        } else {
            Shape::Rectangle
        };
        let rx = rng.gen_range(min_r..max_r);
        let ry = rng.gen_range(min_r..max_r);
        let margin = 0.5 * rx.min(ry);
        Self {
            shape,
            cx: rng.gen_range(margin..size - margin),
            cy: rng.gen_range(margin..size - margin),
            rx,
            ry,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    fn contains(&self, u: usize, v: usize) -> bool {
        let (dx, dy) = (u as f64 + 0.5 - self.cx, v as f64 + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (c * dx + s * dy, -s * dx + c * dy);
        match self.shape {
            Shape::Ellipse => (x / self.rx).powi(2) + (y / self.ry).powi(2) <= 1.0,
            Shape::Rectangle => x.abs() <= self.rx && y.abs() <= self.ry,
        }
    }
}

fn tinted(rng: &mut impl Rng, level: f64) -> [f64; 3] {
    let mut c = [0.0; 3];
    for ch in &mut c {
        *ch = (level + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0) * 255.0;
    }
    c
}

/// Random ellipses and rectangles over striped, noisy backgrounds. Objects
/// are on average brighter than the background, with overlapping ranges; a
/// darker unannotated distractor appears in some images.
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Vec<AnnotatedSample> {
    (0..count).map(|i| synthetic_sample(i, size, seed)).collect()
}

pub fn synthetic_sample(index: usize, size: usize, seed: u64) -> AnnotatedSample {
    assert!(size >= 16, "synthetic images need at least 16 pixels per side");
    let mut rng = stream(seed, &[index as u64]);
    let s = size as f64;
    loop {
        let bg_level = rng.gen_range(0.10..0.45);
        let bg = tinted(&mut rng, bg_level);
        let stripe_freq = rng.gen_range(0.15..0.6);
        let stripe_angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let stripe_amp = rng.gen_range(8.0..30.0);
        let obj_level = rng.gen_range(0.50..0.90);
        let obj = tinted(&mut rng, obj_level);
        let target = ShapeParams::random(&mut rng, s, s * 0.12, s * 0.32);
        let distractor = rng.gen_bool(0.4).then(|| {
            (
                ShapeParams::random(&mut rng, s, s * 0.06, s * 0.16),
                tinted(&mut rng, bg_level + 0.15),
            )
        });
        let noise = 12.0;

        let gt = BinaryMask::from_fn(size, size, |u, v| target.contains(u, v));
        let area = gt.count();
        if area < size * size / 50 {
            continue;
        }
        let (sa, ca) = stripe_angle.sin_cos();
        let image = RasterImage::from_fn(size, size, |u, v| {
            let base = if gt.get(u, v) {
                obj
            } else if let Some((d, col)) = &distractor {
                if d.contains(u, v) {
                    *col
                } else {
                    bg
                }
            } else {
                bg
            };
            let stripe = stripe_amp * ((ca * u as f64 + sa * v as f64) * stripe_freq).sin();
            let tex = if gt.get(u, v) { 0.3 * stripe } else { stripe };
            let mut px = [0u8; 3];
            for (c, b) in px.iter_mut().zip(base) {
                let n: f64 = rng.gen_range(-noise..noise);
                *c = (b + tex + n).round().clamp(0.0, 255.0) as u8;
            }
            px
        })
        .expect("size is positive");
        return AnnotatedSample::single(format!("synth{index:05}"), image, gt).expect("ground truth is nonempty");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_dataset(3, 32, 9);
        let b = synthetic_dataset(3, 32, 9);
        assert_eq!(a, b);
        assert_ne!(a[0].image, a[1].image);
        assert!(a.iter().all(|s| !s.gt().is_empty()));
    }

    #[test]
    fn layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synthetic_dataset(2, 24, 1);
        write_dataset(dir.path(), &samples).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn single_mask_file_name_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let s = &synthetic_dataset(1, 20, 4)[0];
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        write_image(&s.image, dir.path().join("images/a.png")).unwrap();
        write_mask(s.gt(), dir.path().join("masks/a.png")).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].gt(), s.gt());
    }

    #[test]
    fn sample_validation() {
        let img = RasterImage::filled(3, 3, [0; 3]).unwrap();
        assert!(AnnotatedSample::single("x", img.clone(), BinaryMask::empty(3, 3)).is_err());
        assert!(AnnotatedSample::single("x", img.clone(), BinaryMask::full(2, 3)).is_err());
        assert!(AnnotatedSample::new("x", img, vec![BinaryMask::full(3, 3)], 1).is_err());
    }
}
