//! Permutation-invariant set energies.
//!
//! Two energy families operate on a padded batch `Y: [B, M, d]` conditioned on
//! encoded inputs `x: [B, x_dim]`:
//!
//! * [`EnergyKind::DeepSets`]: `f(pool_i g([h(x); y_i]))`, a scalar per example.
//! * [`EnergyKind::SetEncoder`]: `Σ huber(f(pool_i g(y_i)) - h(x))`, the
//!   distance between a set embedding and an input embedding.
//!
//! Padding rows are zero vectors and pass through `g` like any other element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{contract_err, dim_err, Result};

/// Rows with norm strictly below this value are treated as padding.
pub const TAU_PAD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    DeepSets,
    SetEncoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Fspool,
    Sum,
    Mean,
}

/// Architecture descriptor. Layer lists give output widths only; input
/// widths follow from `x_dim`, `y_dim` and the kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub kind: EnergyKind,
    pub x_dim: usize,
    pub y_dim: usize,
    /// Rows per padded set used when sampling.
    pub max_size: usize,
    pub h: Vec<usize>,
    pub g: Vec<usize>,
    pub f: Vec<usize>,
    pub pooling: Pooling,
    pub knots: usize,
    pub huber_delta: f64,
}

impl ModelDims {
    /// Toy-task deep-sets architecture: 1-layer `h` to 64, 3-layer `g` and
    /// `f` of the given width, 17 FSPool knots.
    pub fn deep_sets(x_dim: usize, y_dim: usize, max_size: usize, width: usize) -> Self {
        Self {
            kind: EnergyKind::DeepSets,
            x_dim,
            y_dim,
            max_size,
            h: vec![64],
            g: vec![width, width, width],
            f: vec![width, width, 1],
            pooling: Pooling::Fspool,
            knots: 17,
            huber_delta: 1.0,
        }
    }

    pub fn set_encoder(
        x_dim: usize,
        y_dim: usize,
        max_size: usize,
        width: usize,
        latent: usize,
    ) -> Self {
        Self {
            kind: EnergyKind::SetEncoder,
            x_dim,
            y_dim,
            max_size,
            h: vec![width, latent],
            g: vec![width, width, width],
            f: vec![width, latent],
            pooling: Pooling::Fspool,
            knots: 17,
            huber_delta: 1.0,
        }
    }

    pub fn h_in(&self) -> usize {
        self.x_dim
    }

    pub fn g_in(&self) -> usize {
        match self.kind {
            EnergyKind::DeepSets => self.h.last().copied().unwrap_or(self.x_dim) + self.y_dim,
            EnergyKind::SetEncoder => self.y_dim,
        }
    }

    pub fn latent(&self) -> usize {
        self.g.last().copied().unwrap_or(self.g_in())
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots < 2 {
            return contract_err("FSPool needs at least 2 knots");
        }
        if self.g.is_empty() || self.f.is_empty() || self.h.is_empty() {
            return contract_err("h, g and f need at least one layer each");
        }
        if self.max_size == 0 || self.y_dim == 0 {
            return contract_err("max_size and y_dim must be positive");
        }
        match self.kind {
            EnergyKind::DeepSets if self.f.last() != Some(&1) => {
                dim_err("deep-sets f must end in a scalar")
            }
            EnergyKind::SetEncoder if self.f.last() != self.h.last() => dim_err(format!(
                "set-encoder latent mismatch: f ends in {:?}, h ends in {:?}",
                self.f.last(),
                self.h.last()
            )),
            _ => Ok(()),
        }
    }
}

/// Affine-ReLU chain; the last layer has no activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `(weight [in × out], bias [out])` per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    pub fn init(input: usize, widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for &out in widths {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let w = (0..fan_in * out).map(|_| rng.random_range(-bound..=bound)).collect();
            let b = (0..out).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push((
                Tensor::new(vec![fan_in, out], w).unwrap(),
                Tensor::new(vec![out], b).unwrap(),
            ));
            fan_in = out;
        }
        Self { layers }
    }

    pub fn zeros(input: usize, widths: &[usize]) -> Self {
        let mut fan_in = input;
        let layers = widths
            .iter()
            .map(|&out| {
                let l = (Tensor::zeros(&[fan_in, out]), Tensor::zeros(&[out]));
                fan_in = out;
                l
            })
            .collect();
        Self { layers }
    }

    /// `(prefix.i.weight, prefix.i.bias)` pairs in layer order.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    (format!("{prefix}.{i}.weight"), w.clone()),
                    (format!("{prefix}.{i}.bias"), b.clone()),
                ]
            })
            .collect()
    }

    /// Inverse of [`Mlp::named`], checking shapes against `input` and `widths`.
    pub fn from_named(
        input: usize,
        widths: &[usize],
        prefix: &str,
        named: &[(String, Tensor)],
    ) -> Result<Self> {
        let mut mlp = Self::zeros(input, widths);
        for (i, (w, b)) in mlp.layers.iter_mut().enumerate() {
            for (suffix, slot) in [("weight", w), ("bias", b)] {
                let name = format!("{prefix}.{i}.{suffix}");
                let Some((_, t)) = named.iter().find(|(n, _)| *n == name) else {
                    return contract_err(format!("missing tensor {name}"));
                };
                if t.shape() != slot.shape() {
                    return dim_err(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    ));
                }
                *slot = t.clone();
            }
        }
        Ok(mlp)
    }

    /// Output widths of every layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|(w, _)| w.shape()[1]).collect()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(|(w, _)| w.shape()[0])
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|(w, _)| w.shape()[1])
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundMlp {
        let leaf = |tape: &mut Tape, t: &Tensor| {
            if track {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (leaf(tape, w), leaf(tape, b)))
                .collect(),
        }
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b])
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b])
    }
}

impl BoundMlp {
    /// Forward pass over a `[rows × in]` matrix.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut cur = input;
        let expected = self.layers.first().map(|(w, _)| tape.shape(*w)[0]);
        match (tape.shape(input), expected) {
            ([_, width], Some(e)) if *width == e => {}
            (shape, _) => {
                return dim_err(format!("mlp input {shape:?} does not match width {expected:?}"))
            }
        }
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(cur, *w)?;
            cur = tape.add(z, *b)?;
            if i + 1 < self.layers.len() {
                cur = tape.relu(cur);
            }
        }
        Ok(cur)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Learned piecewise-linear weights over normalized rank, one function per
/// latent channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FsPoolWeights {
    /// `[K × latent]`, knot `k` sits at rank position `k / (K - 1)`.
    pub control_points: Tensor,
}

impl FsPoolWeights {
    pub fn new(control_points: Tensor) -> Result<Self> {
        if control_points.rank() != 2 || control_points.shape()[0] < 2 {
            return contract_err(format!(
                "control points must be [K >= 2, latent], got {:?}",
                control_points.shape()
            ));
        }
        Ok(Self { control_points })
    }

    pub fn knots(&self) -> usize {
        self.control_points.shape()[0]
    }
}

/// `[m × K]` matrix mapping control points to the weights of `m` sorted ranks.
pub fn rank_interpolation(m: usize, knots: usize) -> Tensor {
    let mut data = vec![0.0; m * knots];
    for i in 0..m {
        let r = if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 };
        let pos = r * (knots - 1) as f64;
        let lo = (pos.floor() as usize).min(knots - 2);
        let frac = pos - lo as f64;
        data[i * knots + lo] += 1.0 - frac;
        data[i * knots + lo + 1] += frac;
    }
    Tensor::new(vec![m, knots], data).unwrap()
}

/// Sort pooling over axis 1 of `z: [B, m, latent]`, giving `[B, latent]`.
pub fn fspool(tape: &mut Tape, z: Var, control_points: Var) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 3 || shape[1] == 0 {
        return dim_err(format!("fspool expects [B, m >= 1, latent], got {shape:?}"));
    }
    let knots = tape.shape(control_points)[0];
    if tape.shape(control_points)[1] != shape[2] {
        return dim_err("fspool control points do not match latent width");
    }
    let interp = tape.constant(rank_interpolation(shape[1], knots));
    let weights = tape.matmul(interp, control_points)?;
    let sorted = tape.sort_desc(z)?;
    let weighted = tape.mul(sorted, weights)?;
    tape.sum(weighted, 1)
}

/// Variable-size sets stored as `[B, M, d]` with zero padding rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSetBatch {
    values: Tensor,
    cardinality: Vec<usize>,
}

impl PaddedSetBatch {
    pub fn from_sets(sets: &[Vec<Vec<f64>>], max_size: usize, dim: usize) -> Result<Self> {
        let mut data = vec![0.0; sets.len() * max_size * dim];
        let mut cardinality = Vec::with_capacity(sets.len());
        for (b, set) in sets.iter().enumerate() {
            if set.is_empty() || set.len() > max_size {
                return contract_err(format!(
                    "set {b} has {} elements, expected 1..={max_size}",
                    set.len()
                ));
            }
            for (i, row) in set.iter().enumerate() {
                if row.len() != dim {
                    return dim_err(format!("set {b} row {i} has width {}, expected {dim}", row.len()));
                }
                if norm(row) <= TAU_PAD {
                    return contract_err(format!("set {b} row {i} is indistinguishable from padding"));
                }
                let at = (b * max_size + i) * dim;
                data[at..at + dim].copy_from_slice(row);
            }
            cardinality.push(set.len());
        }
        Ok(Self {
            values: Tensor::new(vec![sets.len(), max_size, dim], data)?,
            cardinality,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn cardinality(&self) -> &[usize] {
        &self.cardinality
    }

    pub fn batch(&self) -> usize {
        self.cardinality.len()
    }

    pub fn max_size(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Non-padding rows of example `b`.
    pub fn set(&self, b: usize) -> Vec<Vec<f64>> {
        let (m, d) = (self.max_size(), self.dim());
        (0..self.cardinality[b])
            .map(|i| self.values.data()[(b * m + i) * d..(b * m + i + 1) * d].to_vec())
            .collect()
    }
}

pub(crate) fn norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Parameters `θ` of an energy network plus its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub dims: ModelDims,
    pub h: Mlp,
    pub g: Mlp,
    pub f: Mlp,
    pub pool: FsPoolWeights,
}

/// Tape handles for every parameter of an [`EnergyModel`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    h: BoundMlp,
    g: BoundMlp,
    f: BoundMlp,
    pool: Var,
}

impl BoundModel {
    /// Handles in [`EnergyModel::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.h.vars().chain(self.g.vars()).chain(self.f.vars()).collect();
        v.push(self.pool);
        v
    }
}

impl EnergyModel {
    /// Fresh model with weights uniform in `±1/sqrt(fan_in)`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Mlp::init(dims.h_in(), &dims.h, &mut rng);
        let g = Mlp::init(dims.g_in(), &dims.g, &mut rng);
        let f = Mlp::init(dims.latent(), &dims.f, &mut rng);
        let bound = 1.0 / (dims.knots as f64).sqrt();
        let cp = (0..dims.knots * dims.latent())
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let pool = FsPoolWeights::new(Tensor::new(vec![dims.knots, dims.latent()], cp)?)?;
        Ok(Self { dims, h, g, f, pool })
    }

    /// Model with every weight, bias and control point set to zero.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            h: Mlp::zeros(dims.h_in(), &dims.h),
            g: Mlp::zeros(dims.g_in(), &dims.g),
            f: Mlp::zeros(dims.latent(), &dims.f),
            pool: FsPoolWeights::new(Tensor::zeros(&[dims.knots, dims.latent()]))?,
            dims,
        })
    }

    pub fn kind(&self) -> EnergyKind {
        self.dims.kind
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self
            .h
            .tensors()
            .chain(self.g.tensors())
            .chain(self.f.tensors())
            .collect();
        p.push(&self.pool.control_points);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self
            .h
            .tensors_mut()
            .chain(self.g.tensors_mut())
            .chain(self.f.tensors_mut())
            .collect();
        p.push(&mut self.pool.control_points);
        p
    }

    /// Parameter names in [`EnergyModel::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, mlp) in [("h", &self.h), ("g", &self.g), ("f", &self.f)] {
            for i in 0..mlp.layers.len() {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names.push("pool.control_points".to_string());
        names
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a model from named tensors, checking every shape against `dims`.
    pub fn from_named(dims: ModelDims, named: &[(String, Tensor)]) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let names = model.param_names();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let Some((_, t)) = named.iter().find(|(n, _)| n == name) else {
                return contract_err(format!("missing tensor {name}"));
            };
            if t.shape() != slot.shape() {
                return dim_err(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundModel {
        let pool = if track {
            tape.leaf(self.pool.control_points.clone())
        } else {
            tape.constant(self.pool.control_points.clone())
        };
        BoundModel {
            h: self.h.bind(tape, track),
            g: self.g.bind(tape, track),
            f: self.f.bind(tape, track),
            pool,
        }
    }

    fn pool(&self, tape: &mut Tape, bound: &BoundModel, z: Var) -> Result<Var> {
        match self.dims.pooling {
            Pooling::Fspool => fspool(tape, z, bound.pool),
            Pooling::Sum => tape.sum(z, 1),
            Pooling::Mean => tape.mean(z, 1),
        }
    }

    /// Records the per-example energies `[B]` of `y: [B, M, d]` given
    /// `x: [B, x_dim]`.
    pub fn energy_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        x: Var,
        y: Var,
    ) -> Result<Var> {
        let ys = tape.shape(y).to_vec();
        let xs = tape.shape(x).to_vec();
        if ys.len() != 3 || ys[2] != self.dims.y_dim || ys[1] == 0 {
            return dim_err(format!(
                "set batch must be [B, M >= 1, {}], got {ys:?}",
                self.dims.y_dim
            ));
        }
        if xs.len() != 2 || xs[0] != ys[0] {
            return dim_err(format!("input batch {xs:?} does not match set batch {ys:?}"));
        }
        let (b, m) = (ys[0], ys[1]);
        let hx = bound.h.forward(tape, x)?;
        match self.dims.kind {
            EnergyKind::DeepSets => {
                let hw = tape.shape(hx)[1];
                let tiled = tape.tile(hx, m)?;
                let joint = tape.concat_last(tiled, y)?;
                let flat = tape.reshape(joint, &[b * m, hw + ys[2]])?;
                let z = bound.g.forward(tape, flat)?;
                let latent = tape.shape(z)[1];
                let z = tape.reshape(z, &[b, m, latent])?;
                let pooled = self.pool(tape, bound, z)?;
                let e = bound.f.forward(tape, pooled)?;
                tape.reshape(e, &[b])
            }
            EnergyKind::SetEncoder => {
                let flat = tape.reshape(y, &[b * m, ys[2]])?;
                let z = bound.g.forward(tape, flat)?;
                let latent = tape.shape(z)[1];
                let z = tape.reshape(z, &[b, m, latent])?;
                let pooled = self.pool(tape, bound, z)?;
                let gy = bound.f.forward(tape, pooled)?;
                if tape.shape(gy) != tape.shape(hx) {
                    return dim_err("set and input embeddings differ in width");
                }
                let diff = tape.sub(gy, hx)?;
                let hub = tape.huber(diff, self.dims.huber_delta);
                tape.sum(hub, 1)
            }
        }
    }

    /// Energies `[B]` without gradients.
    pub fn energies(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let e = self.energy_on_tape(&mut tape, &bound, xv, yv)?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Energies `[B]` and `∂(Σ_b E_b)/∂Y`, which for independent examples is
    /// the per-example gradient stacked as `[B, M, d]`.
    pub fn energy_grad_y(&self, x: &Tensor, y: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let yv = tape.leaf(y.clone());
        let e = self.energy_on_tape(&mut tape, &bound, xv, yv)?;
        let total = tape.sum_all(e);
        let mut grads = tape.backward(total)?;
        Ok((tape.value(e).data().to_vec(), grads.take(yv)))
    }
}

/// Deep-sets energy of a padded batch.
pub fn energy_ds(model: &EnergyModel, x: &Tensor, yset: &PaddedSetBatch) -> Result<Vec<f64>> {
    if model.kind() != EnergyKind::DeepSets {
        return contract_err("energy_ds needs a deep-sets model");
    }
    model.energies(x, yset.values())
}

/// Set-encoder energy of a padded batch.
pub fn energy_se(model: &EnergyModel, x: &Tensor, yset: &PaddedSetBatch) -> Result<Vec<f64>> {
    if model.kind() != EnergyKind::SetEncoder {
        return contract_err("energy_se needs a set-encoder model");
    }
    model.energies(x, yset.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;

    fn small_ds(pooling: Pooling) -> EnergyModel {
        let mut dims = ModelDims::deep_sets(3, 2, 4, 8);
        dims.h = vec![5];
        dims.knots = 4;
        dims.pooling = pooling;
        EnergyModel::init(dims, 3).unwrap()
    }

    fn rand_y(seed: u64, b: usize, m: usize, d: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![b, m, d],
            (0..b * m * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn one_hot(b: usize, dim: usize) -> Tensor {
        let mut t = Tensor::zeros(&[b, dim]);
        for i in 0..b {
            t.data_mut()[i * dim + i % dim] = 1.0;
        }
        t
    }

    #[test]
    fn mlp_zero_weights_give_zero_output() {
        let mlp = Mlp::zeros(3, &[4, 2]);
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, false);
        let x = tape.constant(Tensor::full(&[5, 3], 2.0));
        let out = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 2]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_mlp_is_affine() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::vector(vec![0.5, -0.5]);
        let mlp = Mlp {
            layers: vec![(w, b)],
        };
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap());
        let out = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(out).data(), &[-1.5, -2.5]);
        let bad = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(bound.forward(&mut tape, bad).is_err());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::init(3, &[6, 4, 1], &mut rng);
        let mut inputs = vec![rand_y(5, 1, 4, 3).reshape(&[4, 3]).unwrap()];
        for (w, b) in &mlp.layers {
            inputs.push(w.clone());
            inputs.push(b.clone());
        }
        let err = max_rel_error(
            &inputs,
            |t, v| {
                let bound = BoundMlp {
                    layers: v[1..].chunks(2).map(|c| (c[0], c[1])).collect(),
                };
                let out = bound.forward(t, v[0]).unwrap();
                t.sum_all(out)
            },
            1e-5,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn fspool_single_row_and_unit_weights() {
        let mut tape = Tape::new();
        let cp = Tensor::from_rows(&[vec![2.0, -1.0], vec![5.0, 5.0], vec![7.0, 7.0]]).unwrap();
        let cpv = tape.constant(cp);
        let z = tape.constant(Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap());
        let p = fspool(&mut tape, z, cpv).unwrap();
        assert_eq!(tape.value(p).data(), &[6.0, -4.0]);

        let ones = tape.constant(Tensor::ones(&[4, 2]));
        let z = tape.constant(rand_y(1, 2, 5, 2));
        let p = fspool(&mut tape, z, ones).unwrap();
        let sums = tape.sum(z, 1).unwrap();
        for (a, b) in tape.value(p).data().iter().zip(tape.value(sums).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        for m in 1..9 {
            let t = rank_interpolation(m, 5);
            for row in t.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let t = rank_interpolation(3, 3);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn deep_sets_energy_is_permutation_invariant() {
        let model = small_ds(Pooling::Fspool);
        let y = rand_y(2, 1, 4, 2);
        let x = one_hot(1, 3);
        let e = model.energies(&x, &y).unwrap();
        let rows = y.to_rows();
        let permuted: Vec<f64> = [2, 0, 3, 1].iter().flat_map(|&i| rows[i].clone()).collect();
        let yp = Tensor::new(vec![1, 4, 2], permuted).unwrap();
        assert_eq!(model.energies(&x, &yp).unwrap(), e);
    }

    #[test]
    fn zero_model_energy_is_constant() {
        let dims = ModelDims::deep_sets(3, 2, 4, 8);
        let model = EnergyModel::zeros(dims).unwrap();
        let x = one_hot(2, 3);
        let e = model.energies(&x, &rand_y(4, 2, 4, 2)).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn sum_pooling_duplicate_rows_share_gradient() {
        let model = small_ds(Pooling::Sum);
        let mut y = rand_y(9, 1, 4, 2);
        let (a, b) = (y.data()[0], y.data()[1]);
        y.data_mut()[4] = a;
        y.data_mut()[5] = b;
        let (_, g) = model.energy_grad_y(&one_hot(1, 3), &y).unwrap();
        assert_eq!(g.data()[0..2], g.data()[4..6]);
    }

    #[test]
    fn set_encoder_energy_is_nonnegative_and_zero_at_match() {
        let dims = ModelDims::set_encoder(2, 2, 3, 6, 4);
        let model = EnergyModel::init(dims.clone(), 1).unwrap();
        let e = model.energies(&one_hot(3, 2), &rand_y(3, 3, 3, 2)).unwrap();
        assert!(e.iter().all(|&v| v >= 0.0));

        // zero everything except biases chosen so that g(Y) == h(x)
        let mut m = EnergyModel::zeros(dims).unwrap();
        let hb = m.h.layers.last_mut().unwrap();
        hb.1 = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]);
        let fb = m.f.layers.last_mut().unwrap();
        fb.1 = Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]);
        let e = m.energies(&one_hot(2, 2), &rand_y(8, 2, 3, 2)).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn kind_and_shape_checks() {
        let model = small_ds(Pooling::Fspool);
        let batch = PaddedSetBatch::from_sets(&[vec![vec![0.5, 0.5]]], 4, 2).unwrap();
        assert!(energy_se(&model, &one_hot(1, 3), &batch).is_err());
        assert!(energy_ds(&model, &one_hot(1, 3), &batch).is_ok());
        assert!(energy_ds(&model, &one_hot(1, 2), &batch).is_err());
        let mut dims = ModelDims::set_encoder(2, 2, 3, 6, 4);
        dims.f = vec![6, 5];
        assert!(EnergyModel::init(dims, 0).is_err());
    }

    #[test]
    fn padded_batch_invariants() {
        let sets = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.5, 0.5]]];
        let b = PaddedSetBatch::from_sets(&sets, 3, 2).unwrap();
        assert_eq!(b.cardinality(), &[1, 2]);
        assert_eq!(b.set(1), sets[1]);
        assert!(b.values().data()[2..6].iter().all(|&v| v == 0.0));
        assert!(PaddedSetBatch::from_sets(&[vec![]], 3, 2).is_err());
        assert!(PaddedSetBatch::from_sets(&[vec![vec![0.01, 0.0]]], 3, 2).is_err());
    }
}
