//! Automatic click generation.
//!
//! Training uses random initial clicks followed by stochastic corrective
//! clicks sampled from the larger error region. Evaluation uses the
//! deterministic protocol: click the interior-most pixel (distance transform
//! argmax) of the largest erroneous 8-connected component.
//!
//! Evaluation clicks never land on an already-clicked pixel; other than
//! that, proximity to earlier clicks is not considered.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::mask_ops::{connected_components, distance_transform, Component};
use crate::types::{BinaryMask, Click, ClickLabel, ClickSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub min_positive: usize,
    pub max_positive: usize,
    pub min_negative: usize,
    pub max_negative: usize,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            min_positive: 1,
            max_positive: 5,
            min_negative: 0,
            max_negative: 5,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_positive < 1 {
            return Err(Error::Config("at least one initial positive click is required".into()));
        }
        if self.min_positive > self.max_positive || self.min_negative > self.max_negative {
            return Err(Error::Config("initial click ranges must satisfy min <= max".into()));
        }
        Ok(())
    }
}

fn draw_distinct<R: Rng + ?Sized>(
    pool: &[(usize, usize)],
    count: usize,
    taken: &mut ClickSequence,
    label: ClickLabel,
    rng: &mut R,
) {
    let mut placed = 0;
    while placed < count {
        let (u, v) = pool[rng.gen_range(0..pool.len())];
        if taken.push(Click::new(u, v, label)).is_ok() {
            placed += 1;
        }
    }
}

/// Random initial clicks: positives from the foreground, negatives from the
/// background, counts uniform in the configured ranges.
pub fn sample_initial_clicks<R: Rng + ?Sized>(
    gt: &BinaryMask,
    rng: &mut R,
    cfg: &SimulatorConfig,
) -> Result<ClickSequence> {
    cfg.validate()?;
    let fg: Vec<_> = gt.foreground().collect();
    if fg.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let bg: Vec<_> = gt.complement().foreground().collect();
    let k_pos = rng.gen_range(cfg.min_positive..=cfg.max_positive).min(fg.len());
    let k_neg = if bg.is_empty() {
        0
    } else {
        rng.gen_range(cfg.min_negative..=cfg.max_negative).min(bg.len())
    };
    let mut seq = ClickSequence::new();
    draw_distinct(&fg, k_pos, &mut seq, ClickLabel::Positive, rng);
    if k_neg > 0 {
        draw_distinct(&bg, k_neg, &mut seq, ClickLabel::Negative, rng);
    }
    Ok(seq)
}

/// False-negative and false-positive masks.
pub fn error_regions(gt: &BinaryMask, pred: &BinaryMask) -> Result<(BinaryMask, BinaryMask)> {
    check_dims(gt.dims(), pred.dims())?;
    Ok((gt.difference(pred)?, pred.difference(gt)?))
}

/// One corrective training click, or `None` when nothing is misclassified
/// (or every misclassified pixel already carries a click).
pub fn next_training_click<R: Rng + ?Sized>(
    gt: &BinaryMask,
    pred: &BinaryMask,
    existing: &ClickSequence,
    rng: &mut R,
) -> Result<Option<Click>> {
    let (fn_mask, fp_mask) = error_regions(gt, pred)?;
    let mut regions = [(fn_mask, ClickLabel::Positive), (fp_mask, ClickLabel::Negative)];
    // larger total area first; stable sort keeps false negatives first on ties
    regions.sort_by_key(|r| std::cmp::Reverse(r.0.count()));
    for (region, label) in &regions {
        let candidates: Vec<_> = region
            .foreground()
            .filter(|&(u, v)| !existing.contains_position(u, v))
            .collect();
        if let Some(&(u, v)) = candidates.choose(rng) {
            return Ok(Some(Click::new(u, v, *label)));
        }
    }
    Ok(None)
}

/// Deterministic evaluation click.
///
/// Picks the largest 8-connected error component (ties: false negatives
/// before false positives, then topmost-leftmost anchor) and clicks the
/// argmax of its distance transform (ties: topmost-leftmost pixel).
pub fn next_eval_click(gt: &BinaryMask, pred: &BinaryMask, existing: &ClickSequence) -> Result<Option<Click>> {
    let (fn_mask, fp_mask) = error_regions(gt, pred)?;
    let (w, h) = gt.dims();
    let mut comps: Vec<(Component, ClickLabel)> = connected_components(&fn_mask)
        .into_iter()
        .map(|c| (c, ClickLabel::Positive))
        .chain(
            connected_components(&fp_mask)
                .into_iter()
                .map(|c| (c, ClickLabel::Negative)),
        )
        .collect();
    comps.sort_by_key(|(c, label)| {
        let (u, v) = c.anchor();
        (std::cmp::Reverse(c.area), !label.is_positive(), v * w + u)
    });

    for (comp, label) in &comps {
        let dist = distance_transform(&comp.to_mask(w, h));
        let mut best: Option<(f64, (usize, usize))> = None;
        // pixels are in raster order, so strict > keeps the topmost-leftmost
        for &(u, v) in &comp.pixels {
            if existing.contains_position(u, v) {
                continue;
            }
            let d = dist[v * w + u];
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, (u, v)));
            }
        }
        if let Some((_, (u, v))) = best {
            return Ok(Some(Click::new(u, v, *label)));
        }
    }
    Ok(None)
}
