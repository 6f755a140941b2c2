//! Click sequences rendered as the two binary disk maps the segmenter reads.

use crate::error::{check_dims, Result};
use crate::types::{ClickLabel, ClickSequence, ProbabilityMap, RasterImage};

pub const DEFAULT_DISK_RADIUS: usize = 5;

/// Positive and negative disk maps; every value is 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickMaps {
    pub positive: ProbabilityMap,
    pub negative: ProbabilityMap,
}

/// Everything a segmenter call consumes: the image, the encoded clicks and
/// the previous mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub image: RasterImage,
    pub clicks: ClickSequence,
    pub click_maps: ClickMaps,
    pub previous_mask: ProbabilityMap,
    pub radius: usize,
}

impl ModelInput {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Paints a filled disk of `radius` around each click into the map matching
/// its label. Disks clip at the border and overlapping disks simply union.
pub fn encode_click_maps(clicks: &ClickSequence, width: usize, height: usize, radius: usize) -> Result<ClickMaps> {
    clicks.check_bounds(width, height)?;
    let mut pos = vec![0.0; width * height];
    let mut neg = vec![0.0; width * height];
    let r = radius as i64;
    for click in clicks {
        let target = match click.label {
            ClickLabel::Positive => &mut pos,
            ClickLabel::Negative => &mut neg,
        };
        let (cu, cv) = (click.u as i64, click.v as i64);
        for y in (cv - r).max(0)..=(cv + r).min(height as i64 - 1) {
            for x in (cu - r).max(0)..=(cu + r).min(width as i64 - 1) {
                if (x - cu).pow(2) + (y - cv).pow(2) <= r * r {
                    target[y as usize * width + x as usize] = 1.0;
                }
            }
        }
    }
    Ok(ClickMaps {
        positive: ProbabilityMap::new(width, height, pos)?,
        negative: ProbabilityMap::new(width, height, neg)?,
    })
}

pub fn assemble_model_input(
    image: &RasterImage,
    clicks: &ClickSequence,
    previous: &ProbabilityMap,
    radius: usize,
) -> Result<ModelInput> {
    check_dims(image.dims(), previous.dims())?;
    let click_maps = encode_click_maps(clicks, image.width(), image.height(), radius)?;
    Ok(ModelInput {
        image: image.clone(),
        clicks: clicks.clone(),
        click_maps,
        previous_mask: previous.clone(),
        radius,
    })
}
