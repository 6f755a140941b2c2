//! Training-time augmentation: copy-paste modes followed by the standard
//! geometric and photometric stack.

mod standard;
mod suem;

pub use standard::{apply_standard, photometric, StandardAugConfig, StandardParams};
pub use suem::{
    apply_mode, exclusion_cp, image_mixing, resize_mask_nearest, resize_nearest, simple_cp, union_cp, CopyPasteInfo,
    ObjectPatch, PasteRecord, SuemMode, MAX_PLACEMENT_TRIES,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedSample;
use crate::error::{Error, Result};

/// Standard-stack draws tried before falling back to a plain resize.
const STANDARD_TRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuemConfig {
    /// Simple, union, exclusion, mixing.
    pub mode_probs: [f64; 4],
    pub apply_prob: f64,
    pub scale_range: (f64, f64),
    pub mixing_alpha: f64,
    pub min_residual_fraction: f64,
    pub standard: StandardAugConfig,
    pub seed: u64,
}

impl Default for SuemConfig {
    fn default() -> Self {
        Self {
            mode_probs: [0.25; 4],
            apply_prob: 0.5,
            scale_range: (0.5, 1.5),
            mixing_alpha: 0.5,
            min_residual_fraction: 0.2,
            standard: StandardAugConfig::default(),
            seed: 0,
        }
    }
}

impl SuemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("mode probabilities must be non-negative".into()));
        }
        let sum: f64 = self.mode_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mode probabilities sum to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config("apply probability must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config("scale range must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.mixing_alpha) {
            return Err(Error::Config("mixing alpha must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_residual_fraction) {
            return Err(Error::Config("residual fraction must lie in [0, 1]".into()));
        }
        if self.standard.output_size == 0 {
            return Err(Error::Config("training size must be positive".into()));
        }
        Ok(())
    }

    fn pick_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> SuemMode {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        for (mode, p) in SuemMode::ALL.iter().zip(self.mode_probs) {
            acc += p;
            if x < acc {
                return *mode;
            }
        }
        // rounding slack: last mode with nonzero probability
        let last = self.mode_probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        SuemMode::ALL[last]
    }
}

/// Every random choice made for one augmented sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub extra_id: Option<String>,
    /// Drawn mode, `None` when copy-paste was skipped.
    pub mode: Option<SuemMode>,
    pub copy_paste: Option<CopyPasteInfo>,
    pub standard: StandardParams,
    /// The standard stack lost the object on every draw and fell back to a
    /// plain resize.
    pub standard_fallback: bool,
    pub seed: Option<u64>,
}

/// Draws an extra sample index distinct from `source` when the pool allows.
pub fn pick_extra<R: Rng + ?Sized>(pool_len: usize, source: usize, rng: &mut R) -> usize {
    if pool_len <= 1 {
        return source;
    }
    let k = rng.gen_range(0..pool_len - 1);
    if k >= source {
        k + 1
    } else {
        k
    }
}

/// Applies the standard stack, redrawing when the selected object vanishes.
pub fn standard_stack<R: Rng + ?Sized>(
    sample: &AnnotatedSample,
    rng: &mut R,
    cfg: &StandardAugConfig,
) -> Result<(AnnotatedSample, StandardParams, bool)> {
    let (w, h) = sample.image.dims();
    let rebuild = |params: &StandardParams| {
        let (image, instances) = apply_standard(&sample.image, &sample.instances, params);
        AnnotatedSample::new(sample.id.clone(), image, instances, sample.selected).ok()
    };
    for _ in 0..STANDARD_TRIES {
        let params = StandardParams::draw(rng, w, h, cfg);
        if let Some(out) = rebuild(&params) {
            return Ok((out, params, false));
        }
    }
    let params = StandardParams {
        output: (cfg.output_size, cfg.output_size),
        ..StandardParams::identity(w, h)
    };
    rebuild(&params)
        .map(|out| (out, params, true))
        .ok_or(Error::EmptyGroundTruth)
}

/// Augments `pool[source]`, drawing the extra sample from the same pool.
pub fn augment_sample<R: Rng + ?Sized>(
    pool: &[AnnotatedSample],
    source: usize,
    rng: &mut R,
    cfg: &SuemConfig,
) -> Result<(AnnotatedSample, Provenance)> {
    let src = pool
        .get(source)
        .ok_or_else(|| Error::Config(format!("source index {source} out of range")))?;
    let mut prov = Provenance {
        source_id: src.id.clone(),
        extra_id: None,
        mode: None,
        copy_paste: None,
        standard: StandardParams::identity(src.image.width(), src.image.height()),
        standard_fallback: false,
        seed: None,
    };
    let pasted;
    let base = if rng.gen_bool(cfg.apply_prob) {
        let mode = cfg.pick_mode(rng);
        let extra = &pool[pick_extra(pool.len(), source, rng)];
        let (out, info) = apply_mode(mode, src, extra, rng, cfg);
        prov.mode = Some(mode);
        prov.extra_id = Some(extra.id.clone());
        prov.copy_paste = Some(info);
        pasted = out;
        &pasted
    } else {
        src
    };
    let (out, params, fallback) = standard_stack(base, rng, &cfg.standard)?;
    prov.standard = params;
    prov.standard_fallback = fallback;
    Ok((out, prov))
}
