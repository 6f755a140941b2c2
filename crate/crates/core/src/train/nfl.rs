//! Normalized focal loss over a probability map.
//!
//! With `p_t` the probability of the true class and `a_t` the class weight
//! (`alpha` on foreground, `1 - alpha` on background):
//!
//! ```text
//! loss = -sum(a_t * (1 - p_t)^gamma * ln p_t) / sum((1 - p_t)^gamma)
//! ```
//!
//! The denominator is treated as a constant when differentiating, so the
//! gradient is the focal-weighted cross-entropy gradient rescaled by the
//! normalizer.

use crate::error::{check_dims, Result};
use crate::types::{BinaryMask, ProbabilityMap};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct NflOutput {
    pub loss: f64,
    /// d loss / d probability, per pixel.
    pub grad: Vec<f64>,
    /// The focal-weight sum used as normalizer.
    pub normalizer: f64,
}

pub fn nfl_loss_and_grad(prob: &ProbabilityMap, gt: &BinaryMask, alpha: f64, gamma: f64) -> Result<NflOutput> {
    nfl_with_normalizer(prob, gt, alpha, gamma, None)
}

/// Same as [`nfl_loss_and_grad`], optionally dividing by a caller-supplied
/// normalizer instead of the one computed from `prob`. Finite-difference
/// checks use this to hold the normalizer fixed.
pub fn nfl_with_normalizer(
    prob: &ProbabilityMap,
    gt: &BinaryMask,
    alpha: f64,
    gamma: f64,
    fixed_normalizer: Option<f64>,
) -> Result<NflOutput> {
    check_dims(prob.dims(), gt.dims())?;
    let n = prob.values().len();
    let mut terms = Vec::with_capacity(n);
    let mut normalizer = 0.0;
    let mut numerator = 0.0;
    for (&raw, &fg) in prob.values().iter().zip(gt.bits()) {
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&raw);
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let (pt, a, sign) = if fg {
            (p, alpha, 1.0)
        } else {
            (1.0 - p, 1.0 - alpha, -1.0)
        };
        let q = 1.0 - pt;
        let focal = q.powf(gamma);
        let log_pt = pt.ln();
        normalizer += focal;
        numerator += a * focal * -log_pt;
        // d/dpt of -(1-pt)^g ln pt
        let dpt = if clamped {
            0.0
        } else {
            let focal_term = if gamma == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * log_pt
            };
            focal_term - focal / pt
        };
        terms.push(a * dpt * sign);
    }
    let z = fixed_normalizer.unwrap_or(normalizer);
    if z <= 0.0 {
        return Ok(NflOutput {
            loss: 0.0,
            grad: vec![0.0; n],
            normalizer,
        });
    }
    Ok(NflOutput {
        loss: numerator / z,
        grad: terms.into_iter().map(|t| t / z).collect(),
        normalizer,
    })
}
