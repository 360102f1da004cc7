use serde::{Deserialize, Serialize};

use super::params::ParamGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes
            .into_iter()
            .map(|n| (vec![0.0; n], vec![0.0; n]))
            .unzip();
        Self { m, v, t: 0 }
    }

    pub fn for_params(params: &ParamGraph) -> Self {
        Self::new(params.values().iter().map(|v| v.len()))
    }
}

/// One bias-corrected Adam update of `values` in place.
pub fn adam_update(
    values: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in values
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Adam step on a parameter graph using its gradient buffers.
pub fn adam_step(params: &mut ParamGraph, state: &mut AdamState, cfg: &AdamConfig) {
    let (values, grads) = params.values_and_grads();
    let mut vals: Vec<&mut [f64]> = values.iter_mut().map(|v| v.data_mut()).collect();
    let gs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    adam_update(&mut vals, &gs, state, cfg);
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamGraph, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in params.grads_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut Vec<f64>, g: &[f64], steps: usize, cfg: &AdamConfig) -> AdamState {
        let mut st = AdamState::new([p.len()]);
        for _ in 0..steps {
            adam_update(&mut [p.as_mut_slice()], &[g], &mut st, cfg);
        }
        st
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = vec![1.5, -2.0];
        run(&mut p, &[0.0, 0.0], 10, &AdamConfig::default());
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig::default();
        let g = [0.5, -2e-3];
        let mut p = vec![1.0, 1.0];
        run(&mut p, &g, 1, &cfg);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        for (pi, gi) in p.iter().zip(g) {
            let want = 1.0 - 0.001 * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15, "{pi} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_moves_at_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let g = [3.0, -1e-3];
        let mut st = AdamState::new([2]);
        let mut last = p.clone();
        for _ in 0..10_000 {
            adam_update(&mut [p.as_mut_slice()], &[&g], &mut st, &cfg);
            let step: Vec<f64> = p.iter().zip(&last).map(|(a, b)| (a - b).abs()).collect();
            last = p.clone();
            for s in step {
                assert!(s <= cfg.learning_rate * 1.0001);
            }
        }
        let mut q = p.clone();
        adam_update(&mut [q.as_mut_slice()], &[&g], &mut st, &cfg);
        for ((a, b), gi) in q.iter().zip(&p).zip(g) {
            let limit = cfg.learning_rate * gi.abs() / (gi.abs() + cfg.eps);
            assert!(((a - b).abs() - limit).abs() < 1e-9 * cfg.learning_rate);
            assert!(((a - b).abs() - cfg.learning_rate).abs() < 1e-4 * cfg.learning_rate);
        }
    }
}
