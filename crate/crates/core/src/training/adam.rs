use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract_err, dim_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return contract_err(format!("invalid adam settings {self:?}"));
        }
        Ok(())
    }
}

/// First and second moment estimates. Empty until the first step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return dim_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    if state.m.is_empty() && state.v.is_empty() {
        state.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return dim_err("optimizer state does not match the parameter list");
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape()
        {
            return dim_err(format!(
                "parameter {i}: shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_keeps_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::vector(vec![1.0]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[Tensor::vector(vec![2.0])], &mut state, &cfg).unwrap();
        let (m0, v0) = (state.m[0].data()[0], state.v[0].data()[0]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[1])], &mut state, &cfg).unwrap();
        assert_eq!(state.m[0].data()[0], 0.9 * m0);
        assert_eq!(state.v[0].data()[0], 0.999 * v0);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[Tensor::vector(vec![3.0, -0.01, 250.0])], &mut state, &cfg).unwrap();
        for (v, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 1e-3).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn step_is_pure_given_state() {
        let cfg = AdamConfig::default();
        let g = [Tensor::vector(vec![0.3, -0.7])];
        let mut state = AdamState::default();
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        adam_step(&mut [&mut p], &g, &mut state, &cfg).unwrap();
        let (mut p1, mut s1) = (p.clone(), state.clone());
        let (mut p2, mut s2) = (p.clone(), state.clone());
        adam_step(&mut [&mut p1], &g, &mut s1, &cfg).unwrap();
        adam_step(&mut [&mut p2], &g, &mut s2, &cfg).unwrap();
        assert_eq!((p1, s1), (p2, s2));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut state = AdamState::default();
        let err = adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut state, &AdamConfig::default());
        assert!(err.is_err());
    }
}
