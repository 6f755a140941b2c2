//! Number-of-clicks evaluation: simulated sessions through the refinement
//! engine, NoC aggregation and report rendering.

mod report;

pub use report::{render_report, Fixture, References, RenderedReport, ReportEntry, REFERENCE_FIXTURES};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cfr::{CfrConfig, SegmentationSession};
use crate::dataset::AnnotatedSample;
use crate::encoding::DEFAULT_DISK_RADIUS;
use crate::error::{Error, Result};
use crate::mask_ops::iou;
use crate::segmenter::{Segmenter, SegmenterFactory};
use crate::simulator::next_eval_click;
use crate::types::{BinaryMask, ClickSequence, RasterImage};

pub const DEFAULT_MAX_CLICKS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Ascending IoU targets.
    pub thresholds: Vec<f64>,
    pub max_clicks: usize,
    pub cfr: CfrConfig,
    pub radius: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.90, 0.95],
            max_clicks: DEFAULT_MAX_CLICKS,
            cfr: CfrConfig::STANDARD,
            radius: DEFAULT_DISK_RADIUS,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one IoU threshold is required".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1)".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("IoU thresholds must be strictly ascending".into()));
        }
        if self.max_clicks == 0 {
            return Err(Error::Config("max clicks must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    /// One entry per threshold; `max_clicks` when never reached.
    pub noc: Vec<usize>,
    pub reached: Vec<bool>,
    /// IoU after each click.
    pub iou_trace: Vec<f64>,
    pub clicks: ClickSequence,
    pub inner_steps: usize,
    pub wall_time_ms: f64,
    pub failure: Option<String>,
}

impl InstanceResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// IoU after `k` clicks. Sessions stop early once the top threshold is
    /// reached, so the last recorded value carries forward.
    pub fn iou_at(&self, k: usize) -> f64 {
        assert!(k >= 1, "click counts start at 1");
        self.iou_trace
            .get(k - 1)
            .or(self.iou_trace.last())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Runs one simulated session. Segmenter failures are recorded on the
/// result rather than returned.
pub fn evaluate_instance(
    segmenter: &mut dyn Segmenter,
    id: &str,
    image: &RasterImage,
    gt: &BinaryMask,
    cfg: &EvalConfig,
) -> Result<InstanceResult> {
    cfg.validate()?;
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let started = Instant::now();
    segmenter.begin_instance(gt);
    let mut session = SegmentationSession::with_radius(image.clone(), cfg.radius);
    let mut result = InstanceResult {
        id: id.to_string(),
        noc: vec![cfg.max_clicks; cfg.thresholds.len()],
        reached: vec![false; cfg.thresholds.len()],
        iou_trace: Vec::new(),
        clicks: ClickSequence::new(),
        inner_steps: 0,
        wall_time_ms: 0.0,
        failure: None,
    };
    for k in 1..=cfg.max_clicks {
        let Some(click) = next_eval_click(gt, &session.binary_mask(), session.clicks())? else {
            break;
        };
        match session.interact(segmenter, click, &cfg.cfr) {
            Ok(steps) => result.inner_steps += steps,
            Err(e) => {
                result.failure = Some(e.to_string());
                break;
            }
        }
        let score = iou(&session.binary_mask(), gt)?;
        result.iou_trace.push(score);
        for (j, &t) in cfg.thresholds.iter().enumerate() {
            if !result.reached[j] && score >= t {
                result.reached[j] = true;
                result.noc[j] = k;
            }
        }
        if result.reached.last() == Some(&true) {
            break;
        }
    }
    result.clicks = session.clicks().clone();
    result.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub cfr: String,
    pub thresholds: Vec<f64>,
    pub max_clicks: usize,
    /// Mean NoC per threshold over non-failed instances (NaN when none).
    pub mean_noc: Vec<f64>,
    pub evaluated: usize,
    pub failures: usize,
    pub instances: Vec<InstanceResult>,
}

impl DatasetReport {
    fn from_instances(instances: Vec<InstanceResult>, cfg: &EvalConfig) -> Self {
        let ok: Vec<_> = instances.iter().filter(|r| !r.failed()).collect();
        let mean_noc = (0..cfg.thresholds.len())
            .map(|j| ok.iter().map(|r| r.noc[j] as f64).sum::<f64>() / ok.len() as f64)
            .collect();
        Self {
            cfr: cfg.cfr.label(),
            thresholds: cfg.thresholds.clone(),
            max_clicks: cfg.max_clicks,
            mean_noc,
            evaluated: ok.len(),
            failures: instances.len() - ok.len(),
            instances,
        }
    }

    /// Mean NoC at `threshold`, if it was evaluated.
    pub fn noc_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|j| self.mean_noc[j])
    }

    /// Mean IoU after `k` clicks over non-failed instances.
    pub fn mean_iou_at(&self, k: usize) -> f64 {
        let ok: Vec<_> = self.instances.iter().filter(|r| !r.failed()).collect();
        ok.iter().map(|r| r.iou_at(k)).sum::<f64>() / ok.len() as f64
    }

    /// The report with wall times zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.instances {
            r.wall_time_ms = 0.0;
        }
        out
    }
}

/// Evaluates every instance of every sample on `jobs` worker threads, each
/// with its own segmenter. Results keep instance order regardless of `jobs`.
pub fn evaluate_dataset(
    factory: &dyn SegmenterFactory,
    samples: &[AnnotatedSample],
    cfg: &EvalConfig,
    jobs: usize,
) -> Result<DatasetReport> {
    cfg.validate()?;
    let instances: Vec<AnnotatedSample> = samples.iter().flat_map(|s| s.per_instance()).collect();
    if instances.is_empty() {
        return Err(Error::Config("dataset has no instances to evaluate".into()));
    }
    let jobs = jobs.clamp(1, instances.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<InstanceResult>>> = Mutex::new(vec![None; instances.len()]);

    std::thread::scope(|scope| -> Result<()> {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| -> Result<()> {
                    let mut seg = factory.create()?;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(s) = instances.get(i) else {
                            return Ok(());
                        };
                        let r = evaluate_instance(seg.as_mut(), &s.id, &s.image, s.gt(), cfg)?;
                        if let Some(msg) = &r.failure {
                            log::warn!("{}: {msg}", s.id);
                        }
                        slots.lock().expect("result lock")[i] = Some(r);
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().expect("evaluation worker panicked")?;
        }
        Ok(())
    })?;

    let results = slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every instance evaluated"))
        .collect();
    Ok(DatasetReport::from_instances(results, cfg))
}
