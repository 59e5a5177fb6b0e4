//! Contrastive training of set energies and the direct set-loss baselines.
//!
//! All randomness in an epoch is derived from `(seed, epoch, batch)`, so a
//! run resumed from a checkpoint at an epoch boundary retraces the original
//! run exactly.

mod adam;
mod baseline;

use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use baseline::{
    set_loss_on_tape, train_baseline, train_elementwise, BaselinePredictor, ElementwiseBaseline,
    SetLossKind,
};

use crate::autodiff::{Tape, Tensor};
use crate::datasets::{Example, TaskDims};
use crate::error::{contract_err, DespError, Result};
use crate::langevin::{chain_rng, sample_negative, Clamp, SamplerConfig};
use crate::nn::{norm, EnergyKind, EnergyModel, ModelDims, Pooling, TAU_PAD};
use crate::util::derive_seed;

const SHUFFLE_TAG: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = u64::MAX;

/// Architecture choices that are not fixed by the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: EnergyKind,
    /// Hidden width of `g`, `f` and the baseline decoders.
    pub width: usize,
    /// Output width of the input encoder `h` (deep sets).
    pub input_width: usize,
    /// Embedding width (set encoder).
    pub latent: usize,
    pub pooling: Pooling,
    pub knots: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: EnergyKind::DeepSets,
            width: 256,
            input_width: 64,
            latent: 32,
            pooling: Pooling::Fspool,
            knots: 17,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, task: &TaskDims) -> ModelDims {
        let mut dims = match self.kind {
            EnergyKind::DeepSets => {
                let mut d = ModelDims::deep_sets(task.x_dim, task.y_dim, task.max_size, self.width);
                d.h = vec![self.input_width];
                d
            }
            EnergyKind::SetEncoder => {
                ModelDims::set_encoder(task.x_dim, task.y_dim, task.max_size, self.width, self.latent)
            }
        };
        dims.pooling = self.pooling;
        dims.knots = self.knots;
        dims
    }

    pub fn build(&self, task: &TaskDims) -> Result<EnergyModel> {
        EnergyModel::init(self.dims(task), self.init_seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Negative chains per positive (`k`).
    pub negatives: usize,
    /// Smoothing noise `σ_d` added to non-padding positive rows.
    pub data_noise_std: f64,
    /// Weight of an optional `mean(E⁺² + E⁻²)` penalty.
    pub energy_reg: f64,
    pub adam: AdamConfig,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub seed: u64,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            negatives: 1,
            data_noise_std: 0.01,
            energy_reg: 0.0,
            adam: AdamConfig::default(),
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return contract_err("batch size must be positive");
        }
        if self.negatives == 0 {
            return contract_err("need at least one negative per positive");
        }
        if !(self.data_noise_std >= 0.0) || !(self.energy_reg >= 0.0) {
            return contract_err("noise and regularization weights must be non-negative");
        }
        self.adam.validate()?;
        self.sampler.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DespError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resumable progress of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub mean_e_pos: Option<f64>,
    pub mean_e_neg: Option<f64>,
    pub wall_ms: u128,
}

pub const LOG_HEADER: [&str; 5] = ["epoch", "loss", "mean_E_pos", "mean_E_neg", "wall_ms"];

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            opt(r.mean_e_pos),
            opt(r.mean_e_neg),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loss value, parameter gradients and energy statistics of one batch.
#[derive(Clone, Debug)]
pub struct ContrastiveStep {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

/// `mean E(x⁺, y⁺) − mean E(x⁻, y⁻)` (plus the optional penalty) and its
/// gradient with respect to every parameter, for fixed positives and negatives.
pub fn contrastive_grads(
    model: &EnergyModel,
    x_pos: &Tensor,
    y_pos: &Tensor,
    x_neg: &Tensor,
    y_neg: &Tensor,
    energy_reg: f64,
) -> Result<ContrastiveStep> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let xp = tape.constant(x_pos.clone());
    let yp = tape.constant(y_pos.clone());
    let ep = model.energy_on_tape(&mut tape, &bound, xp, yp)?;
    let xn = tape.constant(x_neg.clone());
    let yn = tape.constant(y_neg.clone());
    let en = model.energy_on_tape(&mut tape, &bound, xn, yn)?;
    let mp = tape.mean_all(ep);
    let mn = tape.mean_all(en);
    let mut loss = tape.sub(mp, mn)?;
    if energy_reg > 0.0 {
        let sp = tape.square(ep);
        let sp = tape.mean_all(sp);
        let sn = tape.square(en);
        let sn = tape.mean_all(sn);
        let reg = tape.add(sp, sn)?;
        let reg = tape.scale(reg, energy_reg);
        loss = tape.add(loss, reg)?;
    }
    let mut grads = tape.backward(loss)?;
    Ok(ContrastiveStep {
        loss: tape.value(loss).data()[0],
        grads: bound.vars().into_iter().map(|v| grads.take(v)).collect(),
        mean_pos: tape.value(mp).data()[0],
        mean_neg: tape.value(mn).data()[0],
    })
}

/// Adds `N(0, σ²)` to every row at or above the padding threshold.
pub fn add_data_noise(y: &Tensor, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = y.clone();
    if std == 0.0 {
        return out;
    }
    let d = y.last_dim();
    for row in out.data_mut().chunks_mut(d) {
        if norm(row) >= TAU_PAD {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += std * z;
            }
        }
    }
    out
}

fn repeat_rows(t: &Tensor, k: usize) -> Result<Tensor> {
    if k == 1 {
        return Ok(t.clone());
    }
    let b = t.shape()[0];
    let per = t.len() / b.max(1);
    let mut data = Vec::with_capacity(t.len() * k);
    for chunk in t.data().chunks(per) {
        for _ in 0..k {
            data.extend_from_slice(chunk);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[0] = b * k;
    Tensor::new(shape, data)
}

/// Contrastive step on a batch: smooths the positives, draws `k` negative
/// chains per example from `batch_seed` and differentiates the loss.
/// `free` restricts sampling to a column range, the rest is copied from the
/// smoothed positives.
pub fn contrastive_loss(
    model: &EnergyModel,
    x: &Tensor,
    y_pos: &Tensor,
    cfg: &TrainConfig,
    batch_seed: u64,
    free: Option<Range<usize>>,
) -> Result<ContrastiveStep> {
    let noisy = add_data_noise(y_pos, cfg.data_noise_std, &mut chain_rng(batch_seed, NOISE_STREAM));
    let x_neg = repeat_rows(x, cfg.negatives)?;
    let chains = x_neg.shape()[0];
    let rngs = (0..chains as u64).map(|c| chain_rng(batch_seed, c)).collect();
    let clamp = match free {
        Some(free) => Some(Clamp {
            template: repeat_rows(&noisy, cfg.negatives)?,
            free,
        }),
        None => None,
    };
    let y_neg = sample_negative(model, &x_neg, &cfg.sampler, rngs, clamp.as_ref())?;
    contrastive_grads(model, x, &noisy, &x_neg, &y_neg, cfg.energy_reg)
}

/// Parameter access shared by every trainable model.
pub trait Learnable {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Learnable for EnergyModel {
    fn params(&self) -> Vec<&Tensor> {
        EnergyModel::params(self)
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        EnergyModel::params_mut(self)
    }
}

pub(crate) struct BatchOut {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub mean_pos: Option<f64>,
    pub mean_neg: Option<f64>,
}

/// Epoch loop: shuffle, per-batch gradient, Adam update, log, callback.
/// A batch with a non-finite loss or gradient aborts the run before the
/// update, so `model` keeps the last good parameters.
pub(crate) fn fit<M: Learnable>(
    model: &mut M,
    n: usize,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut batch_step: impl FnMut(&M, &[usize], u64) -> Result<BatchOut>,
    mut on_epoch: impl FnMut(&M, &TrainState, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if n == 0 {
        return contract_err("empty dataset");
    }
    let mut rows = Vec::new();
    for epoch in state.epoch..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut chain_rng(derive_seed(&[cfg.seed, SHUFFLE_TAG]), epoch as u64));
        let (mut loss, mut pos, mut neg, mut batches) = (0.0, 0.0, 0.0, 0usize);
        let mut has_energy = false;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let seed = derive_seed(&[cfg.seed, epoch as u64, bi as u64]);
            let out = batch_step(model, idx, seed).map_err(|e| match e {
                DespError::SamplerDivergence { step } => DespError::TrainingDivergence { batch: bi, step },
                other => other,
            })?;
            if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                return Err(DespError::NonFiniteLoss { epoch, batch: bi });
            }
            adam_step(&mut model.params_mut(), &out.grads, &mut state.adam, &cfg.adam)?;
            loss += out.loss;
            if let (Some(p), Some(q)) = (out.mean_pos, out.mean_neg) {
                pos += p;
                neg += q;
                has_energy = true;
            }
            batches += 1;
        }
        state.epoch = epoch + 1;
        let b = batches as f64;
        let row = LogRow {
            epoch: epoch + 1,
            loss: loss / b,
            mean_e_pos: has_energy.then_some(pos / b),
            mean_e_neg: has_energy.then_some(neg / b),
            wall_ms: start.elapsed().as_millis(),
        };
        on_epoch(model, state, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Contrastive training of an energy model on `data`. `on_epoch` runs after
/// every completed epoch (checkpointing, progress output).
pub fn train(
    model: &mut EnergyModel,
    data: &[Example],
    task: &TaskDims,
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_epoch: impl FnMut(&EnergyModel, &TrainState, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    let free = task.free_columns();
    fit(
        model,
        data.len(),
        cfg,
        state,
        |m, idx, seed| {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let (x, y) = task.batch(&batch)?;
            let s = contrastive_loss(m, &x, &y, cfg, seed, free.clone())?;
            Ok(BatchOut {
                loss: s.loss,
                grads: s.grads,
                mean_pos: Some(s.mean_pos),
                mean_neg: Some(s.mean_neg),
            })
        },
        on_epoch,
    )
}

/// Mean energies of data and of fresh negatives on `data`, without smoothing.
pub fn energy_gap(
    model: &EnergyModel,
    data: &[Example],
    task: &TaskDims,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (ci, chunk) in data.chunks(64).enumerate() {
        let batch: Vec<&Example> = chunk.iter().collect();
        let (x, y) = task.batch(&batch)?;
        pos += model.energies(&x, &y)?.iter().sum::<f64>();
        let rngs = (0..chunk.len() as u64)
            .map(|c| chain_rng(derive_seed(&[seed, ci as u64]), c))
            .collect();
        let clamp = task.free_columns().map(|free| Clamp { template: y.clone(), free });
        let y_neg = sample_negative(model, &x, sampler, rngs, clamp.as_ref())?;
        neg += model.energies(&x, &y_neg)?.iter().sum::<f64>();
    }
    let n = data.len() as f64;
    Ok((pos / n, neg / n))
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text)?;
        f.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}
