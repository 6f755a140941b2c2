//! A desk-scale differentiable segmenter: per-pixel logistic regression over
//! eight hand-built features.

use crate::encoding::ModelInput;
use crate::types::ProbabilityMap;

use super::{Segmenter, SegmenterError};

pub const FEATURE_COUNT: usize = 8;
pub const DEFAULT_SIGMA: f64 = 10.0;
pub const PARAMS_MAGIC: &[u8; 5] = b"CSTM1";

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "bias",
    "gray",
    "gray_blur3",
    "pos_disk",
    "neg_disk",
    "prev_mask",
    "pos_proximity",
    "neg_proximity",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ToyModelParams {
    pub weights: [f64; FEATURE_COUNT],
}

impl ToyModelParams {
    pub fn new(weights: [f64; FEATURE_COUNT]) -> Self {
        Self { weights }
    }

    /// Hand-set weights that follow the clicks and ignore the image; used
    /// when no trained parameter file is supplied.
    pub fn click_prior() -> Self {
        Self::new([-3.0, 0.0, 0.0, 4.0, -4.0, 1.0, 3.0, -3.0])
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Per-pixel features and probabilities retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub features: Vec<[f64; FEATURE_COUNT]>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModel {
    pub params: ToyModelParams,
    /// Length scale of the click proximity features, in pixels.
    pub sigma: f64,
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn gray(rgb: [u8; 3]) -> f64 {
    (rgb[0] as f64 + rgb[1] as f64 + rgb[2] as f64) / (3.0 * 255.0)
}

/// `exp(-d / sigma)` to the nearest click of each label, 0 when there is no
/// such click.
fn proximity(input: &ModelInput, sigma: f64, positive: bool) -> Vec<f64> {
    let (w, h) = input.dims();
    let pts: Vec<(f64, f64)> = input
        .clicks
        .iter()
        .filter(|c| c.label.is_positive() == positive)
        .map(|c| (c.u as f64, c.v as f64))
        .collect();
    let mut out = vec![0.0; w * h];
    if pts.is_empty() {
        return out;
    }
    for v in 0..h {
        for u in 0..w {
            let d2 = pts
                .iter()
                .map(|&(pu, pv)| (pu - u as f64).powi(2) + (pv - v as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            out[v * w + u] = (-d2.sqrt() / sigma).exp();
        }
    }
    out
}

impl ToyModel {
    pub fn new(params: ToyModelParams) -> Self {
        Self {
            params,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn with_sigma(params: ToyModelParams, sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        Self { params, sigma }
    }

    pub fn features(&self, input: &ModelInput) -> Vec<[f64; FEATURE_COUNT]> {
        let (w, h) = input.dims();
        let g: Vec<f64> = input.image.pixels().iter().map(|&p| gray(p)).collect();
        let pos_prox = proximity(input, self.sigma, true);
        let neg_prox = proximity(input, self.sigma, false);
        let pos = input.click_maps.positive.values();
        let neg = input.click_maps.negative.values();
        let prev = input.previous_mask.values();

        let mut feats = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let i = v * w + u;
                let (mut sum, mut n) = (0.0, 0usize);
                for y in v.saturating_sub(1)..=(v + 1).min(h - 1) {
                    for x in u.saturating_sub(1)..=(u + 1).min(w - 1) {
                        sum += g[y * w + x];
                        n += 1;
                    }
                }
                feats.push([
                    1.0,
                    g[i],
                    sum / n as f64,
                    pos[i],
                    neg[i],
                    prev[i],
                    pos_prox[i],
                    neg_prox[i],
                ]);
            }
        }
        feats
    }

    pub fn forward(&self, input: &ModelInput) -> (ProbabilityMap, ForwardCache) {
        let features = self.features(input);
        let probs: Vec<f64> = features
            .iter()
            .map(|f| {
                let z: f64 = f.iter().zip(&self.params.weights).map(|(x, w)| x * w).sum();
                logistic(z)
            })
            .collect();
        let (w, h) = input.dims();
        let map = ProbabilityMap::new(w, h, probs.clone()).expect("logistic output lies in [0, 1]");
        (map, ForwardCache { features, probs })
    }

    /// Gradient of `sum_px upstream[px] * p[px]` with respect to the weights.
    pub fn backward(cache: &ForwardCache, upstream: &[f64]) -> [f64; FEATURE_COUNT] {
        assert_eq!(upstream.len(), cache.probs.len(), "upstream gradient length");
        let mut grad = [0.0; FEATURE_COUNT];
        for ((f, &p), &g) in cache.features.iter().zip(&cache.probs).zip(upstream) {
            if g == 0.0 {
                continue;
            }
            let scale = g * p * (1.0 - p);
            for (acc, x) in grad.iter_mut().zip(f) {
                *acc += scale * x;
            }
        }
        grad
    }
}

impl Segmenter for ToyModel {
    fn predict(&mut self, input: &ModelInput) -> Result<ProbabilityMap, SegmenterError> {
        Ok(self.forward(input).0)
    }
}

/// Parameter file: `CSTM1`, weight count as `u32` LE, then `f64` LE weights.
pub fn persist_params(params: &ToyModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(PARAMS_MAGIC.len() + 4 + 8 * FEATURE_COUNT);
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(FEATURE_COUNT as u32).to_le_bytes());
    for w in params.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn load_params(bytes: &[u8]) -> Result<ToyModelParams, SegmenterError> {
    let bad = |m: String| SegmenterError::Params(m);
    let rest = bytes
        .strip_prefix(PARAMS_MAGIC.as_slice())
        .ok_or_else(|| bad("bad magic".into()))?;
    if rest.len() < 4 {
        return Err(bad("truncated header".into()));
    }
    let count = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
    if count != FEATURE_COUNT {
        return Err(bad(format!("expected {FEATURE_COUNT} weights, file declares {count}")));
    }
    let body = &rest[4..];
    if body.len() != 8 * count {
        return Err(bad(format!(
            "expected {} weight bytes, found {}",
            8 * count,
            body.len()
        )));
    }
    let mut weights = [0.0; FEATURE_COUNT];
    for (w, chunk) in weights.iter_mut().zip(body.chunks_exact(8)) {
        *w = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok(ToyModelParams { weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::assemble_model_input;
    use crate::types::{Click, ClickSequence, RasterImage};

    fn input(w: usize, h: usize, clicks: &[Click]) -> ModelInput {
        let img = RasterImage::from_fn(w, h, |u, v| [(u * 20) as u8, (v * 30) as u8, 7]).unwrap();
        let seq = ClickSequence::from_clicks(clicks.iter().copied()).unwrap();
        assemble_model_input(&img, &seq, &ProbabilityMap::zeros(w, h), 2).unwrap()
    }

    #[test]
    fn zero_weights_give_half() {
        let (map, _) = ToyModel::new(ToyModelParams::default()).forward(&input(5, 4, &[]));
        assert!(map.values().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn large_bias_saturates() {
        let mut w = [0.0; FEATURE_COUNT];
        w[0] = 10.0;
        let (map, _) = ToyModel::new(ToyModelParams::new(w)).forward(&input(5, 4, &[Click::negative(1, 1)]));
        assert!(map.values().iter().all(|&p| p > 0.9999));
    }

    #[test]
    fn positive_disk_weight() {
        let mut w = [0.0; FEATURE_COUNT];
        w[3] = 5.0;
        let inp = input(9, 9, &[Click::positive(4, 4)]);
        let (map, _) = ToyModel::new(ToyModelParams::new(w)).forward(&inp);
        let inside = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((inside - 0.9933).abs() < 1e-4);
        for (p, d) in map.values().iter().zip(inp.click_maps.positive.values()) {
            let expected = if *d == 1.0 { inside } else { 0.5 };
            assert!((p - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_clicks_zero_the_proximity_features() {
        let feats = ToyModel::new(ToyModelParams::default()).features(&input(4, 4, &[Click::positive(0, 0)]));
        assert!(feats.iter().all(|f| f[7] == 0.0));
        assert_eq!(feats[0][6], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let model = ToyModel::new(ToyModelParams::click_prior());
        let (_, cache) = model.forward(&input(6, 6, &[Click::positive(2, 2)]));
        assert_eq!(ToyModel::backward(&cache, &[0.0; 36]), [0.0; FEATURE_COUNT]);
    }

    #[test]
    fn single_pixel_gradient_is_exact() {
        let params = ToyModelParams::new([0.3, -1.2, 0.7, 0.0, 0.0, 2.0, 0.5, -0.4]);
        let model = ToyModel::new(params);
        let img = RasterImage::filled(1, 1, [30, 60, 90]).unwrap();
        let seq = ClickSequence::from_clicks([Click::positive(0, 0)]).unwrap();
        let prev = ProbabilityMap::new(1, 1, vec![0.25]).unwrap();
        let inp = assemble_model_input(&img, &seq, &prev, 1).unwrap();
        let (map, cache) = model.forward(&inp);
        let p = map.values()[0];
        let g = 1.7;
        let grad = ToyModel::backward(&cache, &[g]);
        let gray = 180.0 / 765.0;
        let feats = [1.0, gray, gray, 1.0, 0.0, 0.25, 1.0, 0.0];
        for k in 0..FEATURE_COUNT {
            assert_eq!(grad[k], g * p * (1.0 - p) * feats[k]);
        }
    }

    #[test]
    fn params_round_trip_and_corruption() {
        let params = ToyModelParams::new([0.1, -2.5, 3.0, f64::MIN_POSITIVE, -0.0, 1e300, 7.0, -7.0]);
        let bytes = persist_params(&params);
        assert_eq!(&bytes[..5], b"CSTM1");
        assert_eq!(&bytes[5..9], &8u32.to_le_bytes());
        let back = load_params(&bytes).unwrap();
        for (a, b) in back.weights.iter().zip(&params.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load_params(&bad).is_err());
        assert!(load_params(&bytes[..bytes.len() - 3]).is_err());
        assert!(load_params(&bytes[..7]).is_err());
    }
}
