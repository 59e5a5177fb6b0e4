//! Baselines trained directly against a set loss, and the per-element
//! classifier used for subset anomaly detection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit, BatchOut, Learnable, LogRow, TrainConfig, TrainState};
use crate::autodiff::{Tape, Tensor, Var};
use crate::datasets::{Example, TaskDims};
use crate::error::{contract_err, DespError, Result};
use crate::losses::{min_cost_assignment, pairwise_cost};
use crate::nn::Mlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetLossKind {
    Chamfer,
    Hungarian,
}

impl std::str::FromStr for SetLossKind {
    type Err = DespError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chamfer" => Ok(Self::Chamfer),
            "hungarian" => Ok(Self::Hungarian),
            other => Err(DespError::Config(format!("unknown set loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for SetLossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Chamfer => "chamfer",
            Self::Hungarian => "hungarian",
        })
    }
}

fn rows_of(data: &[f64], d: usize) -> Vec<Vec<f64>> {
    data.chunks(d).map(<[f64]>::to_vec).collect()
}

fn nearest(p: &[f64], set: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, q) in set.iter().enumerate() {
        let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// Batch-mean set loss between tracked predictions `pred: [B·M, d]` and
/// padded targets `[B, M, d]`. Matchings and nearest neighbours come from
/// the forward values and are held fixed in the backward pass.
pub fn set_loss_on_tape(tape: &mut Tape, pred: Var, target: &Tensor, kind: SetLossKind) -> Result<Var> {
    let (b, m, d) = match target.shape() {
        &[b, m, d] => (b, m, d),
        s => return contract_err(format!("targets must be [B, M, d], got {s:?}")),
    };
    if tape.shape(pred) != [b * m, d] {
        return contract_err(format!("predictions {:?} do not match targets {:?}", tape.shape(pred), target.shape()));
    }
    let pv = tape.value(pred).data().to_vec();
    let norm = 1.0 / (b * m) as f64;
    let mut matched = Vec::with_capacity(b * m * d);
    let mut back_index = Vec::with_capacity(b * m);
    for bi in 0..b {
        let p = rows_of(&pv[bi * m * d..(bi + 1) * m * d], d);
        let t = rows_of(&target.data()[bi * m * d..(bi + 1) * m * d], d);
        match kind {
            SetLossKind::Hungarian => {
                let asg = min_cost_assignment(&pairwise_cost(&p, &t)?)?;
                let mut row_target = vec![0; m];
                for (i, j) in asg.pairs {
                    row_target[i] = j;
                }
                for j in row_target {
                    matched.extend_from_slice(&t[j]);
                }
            }
            SetLossKind::Chamfer => {
                for pi in &p {
                    matched.extend_from_slice(&t[nearest(pi, &t)]);
                }
                for tj in &t {
                    back_index.push(bi * m + nearest(tj, &p));
                }
            }
        }
    }
    let matched = tape.constant(Tensor::new(vec![b * m, d], matched)?);
    let diff = tape.sub(pred, matched)?;
    let sq = tape.square(diff);
    let forward = tape.sum_all(sq);
    let forward = tape.scale(forward, norm);
    if kind == SetLossKind::Hungarian {
        return Ok(forward);
    }
    let flat_target = tape.constant(target.clone().reshape(&[b * m, d])?);
    let picked = tape.gather_rows(pred, &back_index)?;
    let diff = tape.sub(picked, flat_target)?;
    let sq = tape.square(diff);
    let backward = tape.sum_all(sq);
    let backward = tape.scale(backward, norm);
    tape.add(forward, backward)
}

/// MLP decoder from the encoded input straight to a padded set.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePredictor {
    pub task: TaskDims,
    pub decoder: Mlp,
}

impl BaselinePredictor {
    pub fn new(task: TaskDims, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [width, width, task.max_size * task.y_dim];
        Self {
            task,
            decoder: Mlp::init(task.x_dim, &widths, &mut rng),
        }
    }

    pub fn from_named(task: TaskDims, widths: &[usize], named: &[(String, Tensor)]) -> Result<Self> {
        if widths.last() != Some(&(task.max_size * task.y_dim)) {
            return contract_err("decoder output does not cover the padded set");
        }
        Ok(Self {
            task,
            decoder: Mlp::from_named(task.x_dim, widths, "decoder", named)?,
        })
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.decoder.named("decoder")
    }

    fn forward(&self, tape: &mut Tape, track: bool, x: &Tensor) -> Result<Var> {
        let bound = self.decoder.bind(tape, track);
        let xv = tape.constant(x.clone());
        let out = bound.forward(tape, xv)?;
        let b = x.shape()[0];
        tape.reshape(out, &[b * self.task.max_size, self.task.y_dim])
    }

    /// Padded predictions `[B, M, d]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, false, x)?;
        let b = x.shape()[0];
        tape.value(out).clone().reshape(&[b, self.task.max_size, self.task.y_dim])
    }

    /// Batch loss and parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor, y: &Tensor, kind: SetLossKind) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.decoder.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv)?;
        let b = x.shape()[0];
        let out = tape.reshape(out, &[b * self.task.max_size, self.task.y_dim])?;
        let loss = set_loss_on_tape(&mut tape, out, y, kind)?;
        let mut g = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], bound.vars().map(|v| g.take(v)).collect()))
    }
}

impl Learnable for BaselinePredictor {
    fn params(&self) -> Vec<&Tensor> {
        self.decoder.tensors().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.decoder.tensors_mut().collect()
    }
}

pub fn train_baseline(
    model: &mut BaselinePredictor,
    data: &[Example],
    kind: SetLossKind,
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_epoch: impl FnMut(&BaselinePredictor, &TrainState, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    let task = model.task;
    fit(
        model,
        data.len(),
        cfg,
        state,
        |m, idx, _| {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let (x, y) = task.batch(&batch)?;
            let (loss, grads) = m.loss_and_grads(&x, &y, kind)?;
            Ok(BatchOut {
                loss,
                grads,
                mean_pos: None,
                mean_neg: None,
            })
        },
        on_epoch,
    )
}

/// Permutation-equivariant per-element outlier classifier:
/// `logit_i = ρ([φ(f_i); mean_j φ(f_j)])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementwiseBaseline {
    pub task: TaskDims,
    pub phi: Mlp,
    pub rho: Mlp,
}

impl ElementwiseBaseline {
    pub fn new(task: TaskDims, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = task.y_dim - 1;
        Self {
            task,
            phi: Mlp::init(features, &[width, width], &mut rng),
            rho: Mlp::init(2 * width, &[width, 1], &mut rng),
        }
    }

    pub fn from_named(task: TaskDims, width: usize, named: &[(String, Tensor)]) -> Result<Self> {
        Ok(Self {
            task,
            phi: Mlp::from_named(task.y_dim - 1, &[width, width], "phi", named)?,
            rho: Mlp::from_named(2 * width, &[width, 1], "rho", named)?,
        })
    }

    pub fn width(&self) -> usize {
        self.phi.output_width().unwrap_or(0)
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut v = self.phi.named("phi");
        v.extend(self.rho.named("rho"));
        v
    }

    /// Splits `[B, M, d]` rows into features `[B, M, d−1]` and 0/1 targets `[B, M]`.
    pub fn split(y: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, m, d) = match y.shape() {
            &[b, m, d] if d >= 2 => (b, m, d),
            s => return contract_err(format!("expected [B, M, d >= 2], got {s:?}")),
        };
        let mut f = Vec::with_capacity(b * m * (d - 1));
        let mut t = Vec::with_capacity(b * m);
        for row in y.data().chunks(d) {
            f.extend_from_slice(&row[..d - 1]);
            t.push(if row[d - 1] > 0.0 { 1.0 } else { 0.0 });
        }
        Ok((Tensor::new(vec![b, m, d - 1], f)?, Tensor::new(vec![b, m], t)?))
    }

    fn logits(&self, tape: &mut Tape, track: bool, features: &Tensor) -> Result<(Var, Vec<Var>)> {
        let (b, m, f) = match features.shape() {
            &[b, m, f] => (b, m, f),
            s => return contract_err(format!("expected [B, M, F], got {s:?}")),
        };
        let phi = self.phi.bind(tape, track);
        let rho = self.rho.bind(tape, track);
        let fv = tape.constant(features.clone().reshape(&[b * m, f])?);
        let e = phi.forward(tape, fv)?;
        let w = tape.shape(e)[1];
        let e = tape.reshape(e, &[b, m, w])?;
        let ctx = tape.mean(e, 1)?;
        let ctx = tape.tile(ctx, m)?;
        let joint = tape.concat_last(e, ctx)?;
        let joint = tape.reshape(joint, &[b * m, 2 * w])?;
        let z = rho.forward(tape, joint)?;
        let z = tape.reshape(z, &[b, m])?;
        let vars = phi.vars().chain(rho.vars()).collect();
        Ok((z, vars))
    }

    /// Mean binary cross-entropy `softplus(z) − t·z` and its gradients.
    pub fn loss_and_grads(&self, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let (features, targets) = Self::split(y)?;
        let mut tape = Tape::new();
        let (z, vars) = self.logits(&mut tape, true, &features)?;
        let t = tape.constant(targets);
        let sp = tape.softplus(z);
        let tz = tape.mul(z, t)?;
        let bce = tape.sub(sp, tz)?;
        let loss = tape.mean_all(bce);
        let mut g = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], vars.into_iter().map(|v| g.take(v)).collect()))
    }

    /// Per-element logits `[B, M]` for feature rows `[B, M, F]`.
    pub fn predict_logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (z, _) = self.logits(&mut tape, false, features)?;
        Ok(tape.value(z).clone())
    }

    /// Elements with a positive logit, per example.
    pub fn predict_subsets(&self, features: &Tensor) -> Result<Vec<Vec<usize>>> {
        let z = self.predict_logits(features)?;
        let m = features.shape()[1];
        Ok(z.data()
            .chunks(m)
            .map(|row| (0..m).filter(|&i| row[i] > 0.0).collect())
            .collect())
    }
}

impl Learnable for ElementwiseBaseline {
    fn params(&self) -> Vec<&Tensor> {
        self.phi.tensors().chain(self.rho.tensors()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.phi.tensors_mut().chain(self.rho.tensors_mut()).collect()
    }
}

pub fn train_elementwise(
    model: &mut ElementwiseBaseline,
    data: &[Example],
    cfg: &TrainConfig,
    state: &mut TrainState,
    on_epoch: impl FnMut(&ElementwiseBaseline, &TrainState, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    let task = model.task;
    fit(
        model,
        data.len(),
        cfg,
        state,
        |m, idx, _| {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let (_, y) = task.batch(&batch)?;
            let (loss, grads) = m.loss_and_grads(&y)?;
            Ok(BatchOut {
                loss,
                grads,
                mean_pos: None,
                mean_neg: None,
            })
        },
        on_epoch,
    )
}
