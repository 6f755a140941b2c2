//! Cascade-forward refinement.
//!
//! Each user click runs one *coarse* segmenter call fed with the previous
//! click's final mask, then an *inner* loop that re-feeds the segmenter its
//! own output with the click sequence unchanged:
//!
//! ```text
//! Y[t][0] = f(X, P[t], Y[t-1][n])
//! Y[t][i] = f(X, P[t], Y[t][i-1])      i = 1..n
//! ```
//!
//! The inner loop runs either a fixed number of steps or adaptively, stopping
//! once fewer than `pixel_threshold` pixels flip between consecutive
//! binarized outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoding::{assemble_model_input, DEFAULT_DISK_RADIUS};
use crate::error::{Error, Result};
use crate::mask_ops::{binarize, pixel_delta, DEFAULT_THRESHOLD};
use crate::segmenter::{validate_output, Segmenter};
use crate::types::{BinaryMask, Click, ClickSequence, ProbabilityMap, RasterImage};

pub const DEFAULT_PIXEL_THRESHOLD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CfrConfig {
    /// Exactly `n` inner steps; `n = 0` is standard inference.
    Fixed { n: usize },
    /// At most `n` inner steps, stopping when the binarized change drops
    /// below `threshold` pixels.
    Adaptive {
        n: usize,
        #[serde(default = "default_threshold")]
        threshold: usize,
    },
}

fn default_threshold() -> usize {
    DEFAULT_PIXEL_THRESHOLD
}

impl Default for CfrConfig {
    fn default() -> Self {
        CfrConfig::Fixed { n: 0 }
    }
}

impl CfrConfig {
    pub const STANDARD: CfrConfig = CfrConfig::Fixed { n: 0 };

    pub fn max_steps(&self) -> usize {
        match *self {
            CfrConfig::Fixed { n } | CfrConfig::Adaptive { n, .. } => n,
        }
    }

    /// Row label used in reports: `StdInfer`, `CFR-n` or `A-CFR-n`.
    pub fn label(&self) -> String {
        match *self {
            CfrConfig::Fixed { n: 0 } => "StdInfer".to_string(),
            CfrConfig::Fixed { n } => format!("CFR-{n}"),
            CfrConfig::Adaptive { n, .. } => format!("A-CFR-{n}"),
        }
    }
}

impl fmt::Display for CfrConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CfrConfig::Fixed { n } => write!(f, "fixed:{n}"),
            CfrConfig::Adaptive { n, threshold } => write!(f, "adaptive:{n}:{threshold}"),
        }
    }
}

/// Parses `fixed:N` or `adaptive:N[:THRESHOLD]`.
impl FromStr for CfrConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected fixed:N or adaptive:N[:THRESHOLD], got {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["fixed", n] => Ok(CfrConfig::Fixed { n: num(n)? }),
            ["adaptive", n] => Ok(CfrConfig::Adaptive {
                n: num(n)?,
                threshold: DEFAULT_PIXEL_THRESHOLD,
            }),
            ["adaptive", n, t] => Ok(CfrConfig::Adaptive {
                n: num(n)?,
                threshold: num(t)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// The latest mask recorded after `clicks` user clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub clicks: usize,
    pub mask: ProbabilityMap,
}

/// Mutable state of the outer interaction loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSession {
    image: RasterImage,
    clicks: ClickSequence,
    current: ProbabilityMap,
    history: Vec<Snapshot>,
    radius: usize,
}

impl SegmentationSession {
    pub fn new(image: RasterImage) -> Self {
        Self::with_radius(image, DEFAULT_DISK_RADIUS)
    }

    pub fn with_radius(image: RasterImage, radius: usize) -> Self {
        let (w, h) = image.dims();
        Self {
            image,
            clicks: ClickSequence::new(),
            current: ProbabilityMap::zeros(w, h),
            history: Vec::new(),
            radius,
        }
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn clicks(&self) -> &ClickSequence {
        &self.clicks
    }

    pub fn current_mask(&self) -> &ProbabilityMap {
        &self.current
    }

    pub fn binary_mask(&self) -> BinaryMask {
        binarize(&self.current, DEFAULT_THRESHOLD)
    }

    /// Number of user clicks applied so far.
    pub fn step(&self) -> usize {
        self.clicks.len()
    }

    pub fn history(&self) -> &[Snapshot] {
        &self.history
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn call(
        &self,
        segmenter: &mut dyn Segmenter,
        clicks: &ClickSequence,
        previous: &ProbabilityMap,
    ) -> Result<ProbabilityMap> {
        let input = assemble_model_input(&self.image, clicks, previous, self.radius)?;
        let out = segmenter.predict(&input)?;
        validate_output(&input, &out)?;
        Ok(out)
    }

    /// Appends `click` and runs the coarse call on the previous final mask.
    /// The session is untouched if anything fails.
    pub fn coarse_step(&mut self, segmenter: &mut dyn Segmenter, click: Click) -> Result<()> {
        click.check_bounds(self.image.width(), self.image.height())?;
        let mut clicks = self.clicks.clone();
        clicks.push(click)?;
        let out = self.call(segmenter, &clicks, &self.current)?;
        self.clicks = clicks;
        self.current = out;
        self.history.push(Snapshot {
            clicks: self.clicks.len(),
            mask: self.current.clone(),
        });
        Ok(())
    }

    fn commit_refined(&mut self, mask: ProbabilityMap) {
        if let Some(last) = self.history.last_mut() {
            last.mask = mask.clone();
        }
        self.current = mask;
    }

    /// Exactly `n` inner steps. Returns the number of steps taken.
    pub fn refine_fixed(&mut self, segmenter: &mut dyn Segmenter, n: usize) -> Result<usize> {
        if self.clicks.is_empty() {
            return Err(Error::NoClicks);
        }
        if n == 0 {
            return Ok(0);
        }
        let mut mask = self.current.clone();
        for _ in 0..n {
            mask = self.call(segmenter, &self.clicks, &mask)?;
        }
        self.commit_refined(mask);
        Ok(n)
    }

    /// Inner steps until fewer than `pixel_threshold` binarized pixels change
    /// or `max_n` steps ran. Returns the number of steps taken.
    pub fn refine_adaptive(
        &mut self,
        segmenter: &mut dyn Segmenter,
        max_n: usize,
        pixel_threshold: usize,
    ) -> Result<usize> {
        if self.clicks.is_empty() {
            return Err(Error::NoClicks);
        }
        let mut mask = self.current.clone();
        let mut steps = 0;
        while steps < max_n {
            let next = self.call(segmenter, &self.clicks, &mask)?;
            steps += 1;
            let delta = pixel_delta(&binarize(&next, DEFAULT_THRESHOLD), &binarize(&mask, DEFAULT_THRESHOLD))?;
            mask = next;
            if delta < pixel_threshold {
                break;
            }
        }
        if steps > 0 {
            self.commit_refined(mask);
        }
        Ok(steps)
    }

    pub fn refine(&mut self, segmenter: &mut dyn Segmenter, cfg: &CfrConfig) -> Result<usize> {
        match *cfg {
            CfrConfig::Fixed { n } => self.refine_fixed(segmenter, n),
            CfrConfig::Adaptive { n, threshold } => self.refine_adaptive(segmenter, n, threshold),
        }
    }

    /// One full user interaction: coarse step plus the configured
    /// refinement. Atomic: on error the session is left as it was. Returns
    /// the number of inner steps taken.
    pub fn interact(&mut self, segmenter: &mut dyn Segmenter, click: Click, cfg: &CfrConfig) -> Result<usize> {
        let mut next = self.clone();
        next.coarse_step(segmenter, click)?;
        let steps = next.refine(segmenter, cfg)?;
        *self = next;
        Ok(steps)
    }

    /// Drops the last click and replays the rest from the zero mask, so the
    /// result matches a session that never saw the removed click.
    pub fn undo(&mut self, segmenter: &mut dyn Segmenter, cfg: &CfrConfig) -> Result<()> {
        if self.clicks.is_empty() {
            return Err(Error::NoClicks);
        }
        let keep = self.clicks.len() - 1;
        let mut fresh = Self::with_radius(self.image.clone(), self.radius);
        for &click in &self.clicks.as_slice()[..keep] {
            fresh.interact(segmenter, click, cfg)?;
        }
        *self = fresh;
        Ok(())
    }
}
