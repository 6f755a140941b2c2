use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators and the bias-correction step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Updates dropped because the gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam step. Returns `false` (and leaves everything but
/// the skip counter untouched) when a gradient component is not finite.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> bool {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length");
    assert_eq!(params.len(), state.m.len(), "parameter/state length");
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!("skipping Adam step with non-finite gradient");
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_on_fresh_state_changes_nothing() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        assert!(adam_update(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()));
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_update(&mut p, &[0.5], &mut s, &cfg);
        let (m, v) = (s.m[0], s.v[0]);
        adam_update(&mut p, &[0.0], &mut s, &cfg);
        assert_eq!(s.m[0], 0.9 * m);
        assert_eq!(s.v[0], 0.999 * v);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_update(&mut p, &[0.1], &mut s, &AdamConfig::default());
        let expected = -0.01 * 0.1 / (0.1 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_gives_constant_steps() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_update(&mut p, &[0.1], &mut s, &cfg);
        let d1 = p[0];
        adam_update(&mut p, &[0.1], &mut s, &cfg);
        let d2 = p[0] - d1;
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(!adam_update(&mut p, &[f64::NAN], &mut s, &AdamConfig::default()));
        assert_eq!(p, vec![1.0]);
        assert_eq!((s.step, s.skipped), (0, 1));
    }
}
