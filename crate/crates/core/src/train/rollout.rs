//! Iterative click rollouts and the losses built on them.

use rand::Rng;

use crate::encoding::{assemble_model_input, ModelInput};
use crate::error::{Error, Result};
use crate::mask_ops::{binarize, DEFAULT_THRESHOLD};
use crate::segmenter::{validate_output, Segmenter, ToyModel, FEATURE_COUNT};
use crate::simulator::{next_training_click, sample_initial_clicks};
use crate::types::{BinaryMask, Click, ProbabilityMap, RasterImage};

use super::nfl::{nfl_loss_and_grad, nfl_with_normalizer};
use super::IclConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    /// Frozen inputs of this forward pass: clicks and previous mask.
    pub input: ModelInput,
    pub output: ProbabilityMap,
    pub loss: f64,
    /// NFL normalizer of this step's output.
    pub normalizer: f64,
    /// Click appended before this step; `None` at step 0 and after the
    /// simulator reported convergence.
    pub new_click: Option<Click>,
    /// `false` when the step reuses the previous state without a forward.
    pub forwarded: bool,
}

/// Steps `0..=t` of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub gt: BinaryMask,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    /// Per-step losses for steps `1..=t`.
    pub fn iterative_losses(&self) -> Vec<f64> {
        self.steps.iter().skip(1).map(|s| s.loss).collect()
    }

    pub fn forward_count(&self) -> usize {
        self.steps.iter().filter(|s| s.forwarded).count()
    }
}

/// Random initial clicks, a first forward from the zero mask, then `cfg.t`
/// corrective clicks each followed by a forward on the previous output.
/// Once no misclassified pixel is left to click, the remaining steps repeat
/// the converged state.
pub fn rollout<R: Rng + ?Sized>(
    segmenter: &mut dyn Segmenter,
    image: &RasterImage,
    gt: &BinaryMask,
    rng: &mut R,
    cfg: &IclConfig,
) -> Result<Rollout> {
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let (w, h) = image.dims();
    let mut clicks = sample_initial_clicks(gt, rng, &cfg.simulator)?;
    let mut steps: Vec<RolloutStep> = Vec::with_capacity(cfg.t + 1);

    let forward = |seg: &mut dyn Segmenter, input: ModelInput, click: Option<Click>| -> Result<RolloutStep> {
        let output = seg.predict(&input)?;
        validate_output(&input, &output)?;
        let nfl = nfl_loss_and_grad(&output, gt, cfg.nfl_alpha, cfg.nfl_gamma)?;
        Ok(RolloutStep {
            input,
            output,
            loss: nfl.loss,
            normalizer: nfl.normalizer,
            new_click: click,
            forwarded: true,
        })
    };

    let first = assemble_model_input(image, &clicks, &ProbabilityMap::zeros(w, h), cfg.radius)?;
    steps.push(forward(segmenter, first, None)?);
    let mut converged = false;
    for _ in 0..cfg.t {
        let prev = steps.last().expect("step 0 exists");
        let next = if converged {
            None
        } else {
            next_training_click(gt, &binarize(&prev.output, DEFAULT_THRESHOLD), &clicks, rng)?
        };
        converged = next.is_none();
        match next {
            Some(click) => {
                clicks.push(click)?;
                let input = assemble_model_input(image, &clicks, &prev.output, cfg.radius)?;
                let step = forward(segmenter, input, Some(click))?;
                steps.push(step);
            }
            None => {
                let mut repeat = prev.clone();
                repeat.new_click = None;
                repeat.forwarded = false;
                steps.push(repeat);
            }
        }
    }
    Ok(Rollout { gt: gt.clone(), steps })
}

/// `sum_i betas[i] * losses[i]`.
pub fn icl_total_loss(losses: &[f64], betas: &[f64]) -> Result<f64> {
    if losses.len() != betas.len() {
        return Err(Error::Config(format!(
            "{} losses but {} weights",
            losses.len(),
            betas.len()
        )));
    }
    Ok(losses.iter().zip(betas).map(|(l, b)| b * l).sum())
}

/// Per-step weights over steps `0..=t`; step 0 is weighted only when the
/// config opts in.
pub fn step_weights(cfg: &IclConfig) -> Vec<f64> {
    std::iter::once(cfg.initial_beta.unwrap_or(0.0))
        .chain(cfg.betas.iter().copied())
        .collect()
}

/// The weighted iterative loss of a finished rollout.
pub fn rollout_icl_loss(rollout: &Rollout, cfg: &IclConfig) -> Result<f64> {
    let mut total = icl_total_loss(&rollout.iterative_losses(), &cfg.betas)?;
    if let Some(b0) = cfg.initial_beta {
        total += b0 * rollout.steps[0].loss;
    }
    Ok(total)
}

/// The loss of the final output only.
pub fn conventional_loss(rollout: &Rollout) -> f64 {
    rollout.steps.last().expect("rollouts have a step").loss
}

/// Gradient of the weighted iterative loss with respect to the toy model's
/// weights. Clicks and previous masks are the recorded ones, and each NFL
/// normalizer is held constant.
pub fn icl_gradient(model: &ToyModel, rollout: &Rollout, cfg: &IclConfig) -> Result<[f64; FEATURE_COUNT]> {
    let weights = step_weights(cfg);
    if weights.len() != rollout.steps.len() {
        return Err(Error::Config("rollout length does not match the weights".into()));
    }
    let gt = &rollout.gt;
    let mut grad = [0.0; FEATURE_COUNT];
    for (step, &beta) in rollout.steps.iter().zip(&weights) {
        if beta == 0.0 {
            continue;
        }
        let (out, cache) = model.forward(&step.input);
        let nfl = nfl_loss_and_grad(&out, gt, cfg.nfl_alpha, cfg.nfl_gamma)?;
        let g = ToyModel::backward(&cache, &nfl.grad);
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += beta * x;
        }
    }
    Ok(grad)
}

/// The weighted loss of the model re-run on a rollout's frozen inputs, with
/// each step's normalizer taken from `normalizers` when given.
pub fn frozen_icl_loss(
    model: &ToyModel,
    rollout: &Rollout,
    cfg: &IclConfig,
    normalizers: Option<&[f64]>,
) -> Result<f64> {
    let gt = &rollout.gt;
    let weights = step_weights(cfg);
    let mut total = 0.0;
    for (k, (step, &beta)) in rollout.steps.iter().zip(&weights).enumerate() {
        if beta == 0.0 {
            continue;
        }
        let (out, _) = model.forward(&step.input);
        let z = normalizers.map(|n| n[k]);
        total += beta * nfl_with_normalizer(&out, gt, cfg.nfl_alpha, cfg.nfl_gamma, z)?.loss;
    }
    Ok(total)
}
