//! Truncated Langevin sampling and the two-phase predictor.
//!
//! Every chain owns a ChaCha stream derived from `(seed, chain index)`, so a
//! chain's trajectory does not depend on which other chains share its batch.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::unpad;
use crate::error::{contract_err, DespError, Result};
use crate::nn::{EnergyKind, EnergyModel, TAU_PAD};

/// Langevin and prediction schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Total steps `T`.
    pub total_steps: usize,
    /// Noisy steps `S` used by prediction (`S <= T`).
    pub stochastic_steps: usize,
    pub step_size: f64,
    pub noise_std: f64,
    /// Cap on the L2 norm of each element's gradient.
    pub grad_clip: f64,
    /// Standard deviation of the initial draw `Y⁽⁰⁾`.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total_steps: 20,
            stochastic_steps: 16,
            step_size: 0.1,
            noise_std: 0.02,
            grad_clip: 1.0,
            init_std: 0.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Defaults for the given energy family (unit steps for set-encoder energies).
    pub fn for_kind(kind: EnergyKind) -> Self {
        match kind {
            EnergyKind::DeepSets => Self::default(),
            EnergyKind::SetEncoder => Self {
                step_size: 1.0,
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stochastic_steps > self.total_steps {
            return contract_err(format!(
                "stochastic steps {} exceed total steps {}",
                self.stochastic_steps, self.total_steps
            ));
        }
        if !(self.step_size > 0.0) {
            return contract_err("step size must be positive");
        }
        if !(self.noise_std >= 0.0) || !(self.init_std >= 0.0) {
            return contract_err("noise scales must be non-negative");
        }
        if !(self.grad_clip > 0.0) {
            return contract_err("grad clip must be positive");
        }
        Ok(())
    }

    /// Same schedule with `S = round(ratio · T)`.
    pub fn with_ratio(&self, ratio: f64) -> Self {
        let s = (ratio * self.total_steps as f64).round() as usize;
        Self {
            stochastic_steps: s.min(self.total_steps),
            ..self.clone()
        }
    }
}

/// Anything that yields per-example energies and `∂E/∂Y` for `[B, M, d]` sets.
pub trait SetEnergy {
    /// `(max_size, dim)` of the sets this energy scores.
    fn set_shape(&self) -> (usize, usize);
    fn energies(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>>;
    fn energy_grad(&self, x: &Tensor, y: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

impl SetEnergy for EnergyModel {
    fn set_shape(&self) -> (usize, usize) {
        (self.dims.max_size, self.dims.y_dim)
    }

    fn energies(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        EnergyModel::energies(self, x, y)
    }

    fn energy_grad(&self, x: &Tensor, y: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self.energy_grad_y(x, y)
    }
}

/// Columns held fixed during sampling, copied from a template.
#[derive(Clone, Debug)]
pub struct Clamp {
    /// `[B, M, d]`; values outside `free` are kept for the whole chain.
    pub template: Tensor,
    pub free: Range<usize>,
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-element clipping, step and noise settings of one transition.
#[derive(Clone, Copy, Debug)]
pub struct StepParams {
    pub step_size: f64,
    pub noise_std: f64,
    pub grad_clip: f64,
}

/// Running state of a batch of chains.
#[derive(Clone, Debug)]
pub struct Chains {
    /// `[B, M, d]`
    pub y: Tensor,
    pub step: usize,
    rngs: Vec<ChaCha8Rng>,
    free: Range<usize>,
}

impl Chains {
    /// Draws `Y⁽⁰⁾ ~ N(0, init_std²)` on the free columns of every chain.
    pub fn init(
        batch: usize,
        shape: (usize, usize),
        init_std: f64,
        mut rngs: Vec<ChaCha8Rng>,
        clamp: Option<&Clamp>,
    ) -> Result<Self> {
        let (m, d) = shape;
        if rngs.len() != batch {
            return contract_err(format!("{} generators for {batch} chains", rngs.len()));
        }
        let free = clamp.map_or(0..d, |c| c.free.clone());
        if free.end > d || free.start > free.end {
            return contract_err("free columns out of range");
        }
        let mut data = match clamp {
            Some(c) if c.template.shape() == [batch, m, d] => c.template.data().to_vec(),
            Some(c) => {
                return contract_err(format!(
                    "clamp template {:?} does not match [{batch}, {m}, {d}]",
                    c.template.shape()
                ))
            }
            None => vec![0.0; batch * m * d],
        };
        for (b, rng) in rngs.iter_mut().enumerate() {
            for i in 0..m {
                for j in free.clone() {
                    let z: f64 = StandardNormal.sample(rng);
                    data[(b * m + i) * d + j] = init_std * z;
                }
            }
        }
        Ok(Self {
            y: Tensor::new(vec![batch, m, d], data)?,
            step: 0,
            rngs,
            free,
        })
    }

    pub fn batch(&self) -> usize {
        self.rngs.len()
    }

    /// One transition `y ← y − λ·clip(∂E/∂y) + N(0, σ²)`; returns the
    /// energies of the state before the move.
    pub fn step<E: SetEnergy>(&mut self, energy: &E, x: &Tensor, p: StepParams) -> Result<Vec<f64>> {
        let (energies, grad) = energy.energy_grad(x, &self.y)?;
        let next = transition(&self.y, &grad, p, &mut self.rngs, self.free.clone())
            .map_err(|_| DespError::SamplerDivergence { step: self.step })?;
        self.y = next;
        self.step += 1;
        Ok(energies)
    }
}

/// Applies one clipped, noisy gradient step to `y` given its gradient.
pub fn transition(
    y: &Tensor,
    grad: &Tensor,
    p: StepParams,
    rngs: &mut [ChaCha8Rng],
    free: Range<usize>,
) -> Result<Tensor> {
    if grad.shape() != y.shape() || y.rank() != 3 {
        return contract_err("gradient shape does not match state");
    }
    if !grad.is_finite() {
        return Err(DespError::SamplerDivergence { step: 0 });
    }
    let (b, m, d) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut out = y.data().to_vec();
    let g = grad.data();
    for (bi, rng) in rngs.iter_mut().enumerate().take(b) {
        for i in 0..m {
            let row = (bi * m + i) * d;
            let norm = free.clone().map(|j| g[row + j] * g[row + j]).sum::<f64>().sqrt();
            let scale = if norm > p.grad_clip { p.grad_clip / norm } else { 1.0 };
            for j in free.clone() {
                let mut v = out[row + j] - p.step_size * scale * g[row + j];
                if p.noise_std > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    v += p.noise_std * z;
                }
                out[row + j] = v;
            }
        }
    }
    let next = Tensor::new(y.shape().to_vec(), out)?;
    if !next.is_finite() {
        return Err(DespError::SamplerDivergence { step: 0 });
    }
    Ok(next)
}

/// Single transition of one chain, `y: [M, d]`.
pub fn langevin_step<E: SetEnergy>(
    energy: &E,
    x: &Tensor,
    y: &Tensor,
    p: StepParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let (m, d) = (y.shape()[0], y.last_dim());
    let y3 = y.clone().reshape(&[1, m, d])?;
    let x2 = x.clone().reshape(&[1, x.len()])?;
    let (_, g) = energy.energy_grad(&x2, &y3)?;
    transition(&y3, &g, p, std::slice::from_mut(rng), 0..d)?.reshape(&[m, d])
}

fn run<E: SetEnergy>(
    energy: &E,
    x: &Tensor,
    cfg: &SamplerConfig,
    noisy_steps: usize,
    rngs: Vec<ChaCha8Rng>,
    clamp: Option<&Clamp>,
) -> Result<Chains> {
    cfg.validate()?;
    let batch = x.shape().first().copied().unwrap_or(0);
    let mut chains = Chains::init(batch, energy.set_shape(), cfg.init_std, rngs, clamp)?;
    for t in 0..cfg.total_steps {
        let noise_std = if t < noisy_steps { cfg.noise_std } else { 0.0 };
        chains.step(
            energy,
            x,
            StepParams {
                step_size: cfg.step_size,
                noise_std,
                grad_clip: cfg.grad_clip,
            },
        )?;
    }
    Ok(chains)
}

/// Negative samples: `T` noisy steps from a Gaussian start. The result is a
/// plain tensor with no path back to the parameters.
pub fn sample_negative<E: SetEnergy>(
    energy: &E,
    x: &Tensor,
    cfg: &SamplerConfig,
    rngs: Vec<ChaCha8Rng>,
    clamp: Option<&Clamp>,
) -> Result<Tensor> {
    if cfg.noise_std <= 0.0 && cfg.total_steps > 0 {
        return contract_err("negative sampling needs positive noise");
    }
    Ok(run(energy, x, cfg, cfg.total_steps, rngs, clamp)?.y)
}

/// Outcome of the two-phase predictor for one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Final state `[M, d]`, padding rows included.
    pub padded: Tensor,
    /// Rows that survive the padding threshold.
    pub set: Vec<Vec<f64>>,
    /// Energy of the final state.
    pub energy: f64,
}

/// `S` noisy steps followed by `T − S` plain clipped gradient steps, then
/// thresholding of near-zero rows.
pub fn predict<E: SetEnergy>(
    energy: &E,
    x: &Tensor,
    cfg: &SamplerConfig,
    rngs: Vec<ChaCha8Rng>,
    clamp: Option<&Clamp>,
) -> Result<Vec<Prediction>> {
    let chains = run(energy, x, cfg, cfg.stochastic_steps, rngs, clamp)?;
    let energies = energy.energies(x, &chains.y)?;
    let (m, d) = energy.set_shape();
    chains
        .y
        .data()
        .chunks(m * d)
        .zip(energies)
        .map(|(rows, e)| {
            let padded = Tensor::new(vec![m, d], rows.to_vec())?;
            let set = unpad(&padded.to_rows(), TAU_PAD);
            Ok(Prediction {
                padded,
                set,
                energy: e,
            })
        })
        .collect()
}
