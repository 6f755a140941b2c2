//! Iterative click loss training of the toy segmenter.

mod adam;
mod nfl;
mod rollout;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use nfl::{nfl_loss_and_grad, nfl_with_normalizer, NflOutput, PROB_CLAMP};
pub use rollout::{
    conventional_loss, frozen_icl_loss, icl_gradient, icl_total_loss, rollout, rollout_icl_loss, step_weights, Rollout,
    RolloutStep,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, SuemConfig};
use crate::bench::{evaluate_dataset, EvalConfig};
use crate::dataset::AnnotatedSample;
use crate::encoding::DEFAULT_DISK_RADIUS;
use crate::error::{Error, Result};
use crate::seed::stream;
use crate::segmenter::{Segmenter, SegmenterError, ToyModel, ToyModelParams, DEFAULT_SIGMA, FEATURE_COUNT};
use crate::simulator::SimulatorConfig;

/// Learning rate used for large-backbone fine-tuning; far too small for the
/// eight-weight toy model, kept as a named preset.
pub const FINE_TUNE_LR: f64 = 5e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    /// Corrective clicks per rollout.
    pub t: usize,
    pub betas: Vec<f64>,
    /// Weight of the step-0 loss; `None` leaves it out.
    pub initial_beta: Option<f64>,
    pub nfl_alpha: f64,
    pub nfl_gamma: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Samples per Adam update; their gradients are averaged.
    pub batch_size: usize,
    pub seed: u64,
    pub radius: usize,
    pub sigma: f64,
    pub simulator: SimulatorConfig,
    /// Holdout evaluation period in epochs; 0 disables it.
    pub eval_every: usize,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self {
            t: 3,
            betas: vec![1.0, 2.0, 3.0],
            initial_beta: None,
            nfl_alpha: 0.5,
            nfl_gamma: 2.0,
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 1,
            seed: 0,
            radius: DEFAULT_DISK_RADIUS,
            sigma: DEFAULT_SIGMA,
            simulator: SimulatorConfig::default(),
            eval_every: 0,
        }
    }
}

impl IclConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.t {
            return Err(Error::Config(format!(
                "{} weights given for {} iterative clicks",
                self.betas.len(),
                self.t
            )));
        }
        if self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if self.initial_beta.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::Config("the step-0 weight must be positive".into()));
        }
        if !(self.nfl_alpha > 0.0 && self.nfl_alpha < 1.0) {
            return Err(Error::Config("focal alpha must lie in (0, 1)".into()));
        }
        if !(self.nfl_gamma >= 0.0 && self.nfl_gamma.is_finite()) {
            return Err(Error::Config("focal gamma must be non-negative".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        // written so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        self.simulator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub holdout_noc90: Option<f64>,
    pub holdout_iou1: Option<f64>,
    pub holdout_iou3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ToyModelParams,
    pub metrics: Vec<EpochMetrics>,
    /// Rollouts skipped because the sample had no usable ground truth.
    pub skipped_samples: usize,
    /// Samples trained without augmentation because augmentation failed.
    pub augment_failures: usize,
    /// Adam steps dropped for a non-finite gradient.
    pub skipped_updates: u64,
}

/// Holdout NoC@90 and IoU after one and three clicks, standard inference.
pub fn holdout_metrics(
    params: ToyModelParams,
    cfg: &IclConfig,
    holdout: &[AnnotatedSample],
) -> Result<(f64, f64, f64)> {
    let sigma = cfg.sigma;
    let factory = move || -> std::result::Result<Box<dyn Segmenter>, SegmenterError> {
        Ok(Box::new(ToyModel::with_sigma(params, sigma)))
    };
    let eval = EvalConfig {
        radius: cfg.radius,
        ..EvalConfig::default()
    };
    let report = evaluate_dataset(&factory, holdout, &eval, 1)?;
    Ok((
        report.noc_at(0.90).expect("0.90 is a default threshold"),
        report.mean_iou_at(1),
        report.mean_iou_at(3),
    ))
}

enum SampleOutcome {
    Trained {
        loss: f64,
        grad: [f64; FEATURE_COUNT],
        augment_failed: bool,
    },
    Skipped,
}

fn train_sample(
    model: &ToyModel,
    dataset: &[AnnotatedSample],
    index: usize,
    epoch: usize,
    cfg: &IclConfig,
    augment: Option<&SuemConfig>,
) -> Result<SampleOutcome> {
    let mut rng = stream(cfg.seed, &[epoch as u64, index as u64]);
    let mut augment_failed = false;
    let augmented = match augment {
        Some(acfg) => match augment_sample(dataset, index, &mut rng, acfg) {
            Ok((s, _)) => Some(s),
            Err(e) => {
                log::debug!("augmentation of {} failed: {e}", dataset[index].id);
                augment_failed = true;
                None
            }
        },
        None => None,
    };
    let sample = augmented.as_ref().unwrap_or(&dataset[index]);
    let mut seg = *model;
    let ro = match rollout(&mut seg, &sample.image, sample.gt(), &mut rng, cfg) {
        Ok(r) => r,
        Err(Error::EmptyGroundTruth) => return Ok(SampleOutcome::Skipped),
        Err(e) => return Err(e),
    };
    Ok(SampleOutcome::Trained {
        loss: rollout_icl_loss(&ro, cfg)?,
        grad: icl_gradient(model, &ro, cfg)?,
        augment_failed,
    })
}

/// Trains from `init` with per-sample rollouts and Adam. Rollouts inside a
/// batch run in parallel; their gradients are reduced in sample order, so
/// the result is independent of the thread count.
pub fn train(
    init: ToyModelParams,
    dataset: &[AnnotatedSample],
    holdout: &[AnnotatedSample],
    cfg: &IclConfig,
    augment: Option<&SuemConfig>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if let Some(a) = augment {
        a.validate()?;
    }
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if dataset.iter().all(|s| s.gt().is_empty()) {
        return Err(Error::Config("every training sample is degenerate".into()));
    }
    let mut model = ToyModel::with_sigma(init, cfg.sigma);
    let mut state = AdamState::new(FEATURE_COUNT);
    let mut out = TrainOutput {
        params: init,
        metrics: Vec::with_capacity(cfg.epochs),
        skipped_samples: 0,
        augment_failures: 0,
        skipped_updates: 0,
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[epoch as u64, u64::MAX]));
        let (mut loss_sum, mut trained) = (0.0, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let outcomes: Vec<Result<SampleOutcome>> = batch
                .par_iter()
                .map(|&i| train_sample(&model, dataset, i, epoch, cfg, augment))
                .collect();
            let mut grad = [0.0; FEATURE_COUNT];
            let mut n = 0usize;
            for o in outcomes {
                match o? {
                    SampleOutcome::Trained {
                        loss,
                        grad: g,
                        augment_failed,
                    } => {
                        loss_sum += loss;
                        n += 1;
                        out.augment_failures += augment_failed as usize;
                        for (acc, x) in grad.iter_mut().zip(g) {
                            *acc += x;
                        }
                    }
                    SampleOutcome::Skipped => out.skipped_samples += 1,
                }
            }
            if n == 0 {
                continue;
            }
            trained += n;
            for g in &mut grad {
                *g /= n as f64;
            }
            adam_update(&mut model.params.weights, &grad, &mut state, &cfg.adam);
        }
        if trained == 0 {
            return Err(Error::Config("every training sample is degenerate".into()));
        }

        let mut m = EpochMetrics {
            epoch: epoch + 1,
            mean_loss: loss_sum / trained as f64,
            holdout_noc90: None,
            holdout_iou1: None,
            holdout_iou3: None,
        };
        let last = epoch + 1 == cfg.epochs;
        if !holdout.is_empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let (noc, iou1, iou3) = holdout_metrics(model.params, cfg, holdout)?;
            m.holdout_noc90 = Some(noc);
            m.holdout_iou1 = Some(iou1);
            m.holdout_iou3 = Some(iou3);
        }
        log::info!("epoch {} loss {:.5}", m.epoch, m.mean_loss);
        on_epoch(&m);
        out.metrics.push(m);
    }
    out.params = model.params;
    out.skipped_updates = state.skipped;
    Ok(out)
}

/// Metrics as CSV with one row per epoch.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut s = String::from("epoch,mean_icl_loss,holdout_noc90,holdout_iou1,holdout_iou3\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{:.6},{},{},{}\n",
            m.epoch,
            m.mean_loss,
            cell(m.holdout_noc90),
            cell(m.holdout_iou1),
            cell(m.holdout_iou3)
        ));
    }
    s
}
