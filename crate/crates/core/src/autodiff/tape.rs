use super::tensor::{gemm, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Huber(Var, f64),
    Softplus(Var),
    Reduce { input: Var, axis: usize, kind: Reduce },
    SumAll(Var),
    SortDesc { input: Var, perm: Vec<usize> },
    Reshape(Var),
    ConcatLast(Var, Var),
    Tile { input: Var, reps: usize },
    GatherRows { input: Var, index: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros when `v` does not
    /// influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Stable descending sort of every column along the second-to-last axis.
///
/// Returns the sorted tensor and, for every output position, the row it was
/// taken from (same layout as the data). Ties keep their original order.
pub fn sort_desc_columns(t: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if t.rank() < 2 {
        return dim_err(format!("sort needs rank >= 2, got {:?}", t.shape()));
    }
    let shape = t.shape();
    let d = shape[shape.len() - 1];
    let m = shape[shape.len() - 2];
    if m == 0 {
        return dim_err("sort over zero rows");
    }
    let blocks = t.len() / (m * d).max(1);
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    let mut perm = vec![0usize; t.len()];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for blk in 0..blocks {
        let base = blk * m * d;
        for j in 0..d {
            order.clear();
            order.extend(0..m);
            order.sort_by(|&p, &q| src[base + q * d + j].total_cmp(&src[base + p * d + j]));
            for (i, &r) in order.iter().enumerate() {
                out[base + i * d + j] = src[base + r * d + j];
                perm[base + i * d + j] = r;
            }
        }
    }
    Ok((Tensor::new(shape.to_vec(), out)?, perm))
}

/// Layout of a binary op: equal shapes, or `b` matching a trailing suffix of `a`.
fn broadcast_inner(a: &[usize], b: &[usize]) -> Result<usize> {
    if a == b {
        return Ok(a.iter().product());
    }
    if b.len() < a.len() && a[a.len() - b.len()..] == *b {
        return Ok(b.iter().product());
    }
    dim_err(format!("shapes {a:?} and {b:?} are not broadcast-compatible"))
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let pre = shape[..axis].iter().product();
    let post = shape[axis + 1..].iter().product();
    (pre, shape[axis], post)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Permutation recorded by a [`Tape::sort_desc`] node.
    pub fn sort_perm(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::SortDesc { perm, .. } => Some(perm),
            _ => None,
        }
    }

    /// Leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions) && inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) {
            debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return dim_err(format!(
                "matmul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let inner = broadcast_inner(ta.shape(), tb.shape())?;
        let bd = tb.data();
        let data = if inner == 0 {
            Vec::new()
        } else {
            ta.data()
                .chunks(inner)
                .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
                .collect()
        };
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// `a + b`; `b` may broadcast over the leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// Elementwise Huber function with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).map(|x| huber(x, delta));
        self.push(v, Op::Huber(a, delta), &[a])
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn reduce(&mut self, a: Var, axis: usize, kind: Reduce) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return dim_err(format!("axis {axis} out of range for {:?}", t.shape()));
        }
        let (pre, ext, post) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; pre * post];
        for p in 0..pre {
            for i in 0..ext {
                let row = &src[(p * ext + i) * post..(p * ext + i + 1) * post];
                for (o, &x) in out[p * post..(p + 1) * post].iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        if kind == Reduce::Mean && ext > 0 {
            let inv = 1.0 / ext as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Reduce { input: a, axis, kind }, &[a]))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, Reduce::Sum)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(a, axis, Reduce::Mean)
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sorts every column descending along the second-to-last axis;
    /// gradients are routed back through the recorded permutation.
    pub fn sort_desc(&mut self, a: Var) -> Result<Var> {
        let (sorted, perm) = sort_desc_columns(self.value(a))?;
        Ok(self.push(sorted, Op::SortDesc { input: a, perm }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return dim_err(format!("cannot concatenate {sa:?} and {sb:?}"));
        }
        let (p, q) = (ta.last_dim(), tb.last_dim());
        let rows = ta.len() / p.max(1);
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::ConcatLast(a, b), &[a, b]))
    }

    /// Repeats each leading slice `reps` times along a new axis 1:
    /// `[B, ...] -> [B, reps, ...]`.
    pub fn tile(&mut self, a: Var, reps: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return dim_err("cannot tile a scalar");
        }
        let b = t.shape()[0];
        let inner = t.len() / b.max(1);
        let mut data = Vec::with_capacity(t.len() * reps);
        for chunk in t.data().chunks(inner.max(1)).take(b) {
            for _ in 0..reps {
                data.extend_from_slice(chunk);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.insert(1, reps);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Tile { input: a, reps }, &[a]))
    }

    /// Selects rows of a matrix: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return dim_err(format!("gather_rows needs a matrix, got {:?}", t.shape()));
        }
        let (n, d) = (t.shape()[0], t.shape()[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return dim_err(format!("row {bad} out of range for {n} rows"));
        }
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![index.len(), d], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
            &[a],
        ))
    }

    /// Reverse sweep from a scalar output. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_val = &self.nodes[out.0].value;
        if out_val.len() != 1 {
            return contract_err(format!(
                "backward needs a scalar output, got shape {:?}",
                out_val.shape()
            ));
        }
        if self.nodes[out.0].requires_grad {
            grads[out.0] = Some(Tensor::ones(out_val.shape()));
        }
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let accumulate = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, (n as isize, 1), tb.data(), (1, n as isize), &mut da);
                    accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), (1, k as isize), gd, (n as isize, 1), &mut db);
                    accumulate(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let tb = self.value(*b);
                    let inner = tb.len();
                    let mut db = vec![0.0; inner];
                    if inner > 0 {
                        for chunk in gd.chunks(inner) {
                            for (o, &x) in db.iter_mut().zip(chunk) {
                                *o += x;
                            }
                        }
                    }
                    if sign < 0.0 {
                        db.iter_mut().for_each(|o| *o = -*o);
                    }
                    accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let inner = tb.len();
                if self.needs(*a) {
                    let da: Vec<f64> = gd
                        .chunks(inner.max(1))
                        .flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| x * y))
                        .collect();
                    accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; inner];
                    if inner > 0 {
                        for (gc, ac) in gd.chunks(inner).zip(ta.data().chunks(inner)) {
                            for ((o, &x), &y) in db.iter_mut().zip(gc).zip(ac) {
                                *o += x * y;
                            }
                        }
                    }
                    accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db).unwrap());
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.map(|x| c * x));
                }
            }
            Op::Relu(a) | Op::Square(a) | Op::Huber(a, _) | Op::Softplus(a) => {
                if !self.needs(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let d: Vec<f64> = match node.op {
                    Op::Relu(_) => x
                        .iter()
                        .zip(gd)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                    Op::Square(_) => x.iter().zip(gd).map(|(&x, &g)| 2.0 * x * g).collect(),
                    Op::Huber(_, delta) => x
                        .iter()
                        .zip(gd)
                        .map(|(&x, &g)| huber_grad(x, delta) * g)
                        .collect(),
                    _ => x.iter().zip(gd).map(|(&x, &g)| sigmoid(x) * g).collect(),
                };
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Reduce { input, axis, kind } => {
                if !self.needs(*input) {
                    return;
                }
                let shape = self.shape(*input);
                let (pre, ext, post) = split_axis(shape, *axis);
                let c = match kind {
                    Reduce::Sum => 1.0,
                    Reduce::Mean => 1.0 / ext.max(1) as f64,
                };
                let mut d = vec![0.0; pre * ext * post];
                for p in 0..pre {
                    let src = &gd[p * post..(p + 1) * post];
                    for i in 0..ext {
                        let dst = &mut d[(p * ext + i) * post..(p * ext + i + 1) * post];
                        for (o, &x) in dst.iter_mut().zip(src) {
                            *o = c * x;
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(shape.to_vec(), d).unwrap());
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    accumulate(grads, *a, Tensor::full(self.shape(*a), gd[0]));
                }
            }
            Op::SortDesc { input, perm } => {
                if !self.needs(*input) {
                    return;
                }
                let shape = self.shape(*input);
                let d = shape[shape.len() - 1];
                let m = shape[shape.len() - 2];
                let mut out = vec![0.0; gd.len()];
                for (pos, (&gv, &src_row)) in gd.iter().zip(perm).enumerate() {
                    let blk = pos / (m * d);
                    let j = pos % d;
                    out[blk * m * d + src_row * d + j] += gv;
                }
                accumulate(grads, *input, Tensor::new(shape.to_vec(), out).unwrap());
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    let t = g.clone().reshape(self.shape(*a)).unwrap();
                    accumulate(grads, *a, t);
                }
            }
            Op::ConcatLast(a, b) => {
                let (p, q) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let rows = gd.len() / (p + q).max(1);
                if self.needs(*a) {
                    let mut da = Vec::with_capacity(rows * p);
                    for r in 0..rows {
                        da.extend_from_slice(&gd[r * (p + q)..r * (p + q) + p]);
                    }
                    accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = Vec::with_capacity(rows * q);
                    for r in 0..rows {
                        db.extend_from_slice(&gd[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                    accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), db).unwrap());
                }
            }
            Op::Tile { input, reps } => {
                if !self.needs(*input) {
                    return;
                }
                let shape = self.shape(*input);
                let b = shape[0];
                let inner = self.value(*input).len() / b.max(1);
                let mut d = vec![0.0; b * inner];
                for bi in 0..b {
                    for r in 0..*reps {
                        let src = &gd[(bi * reps + r) * inner..(bi * reps + r + 1) * inner];
                        for (o, &x) in d[bi * inner..(bi + 1) * inner].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(shape.to_vec(), d).unwrap());
            }
            Op::GatherRows { input, index } => {
                if !self.needs(*input) {
                    return;
                }
                let shape = self.shape(*input);
                let d = shape[1];
                let mut out = vec![0.0; shape[0] * d];
                for (i, &r) in index.iter().enumerate() {
                    for j in 0..d {
                        out[r * d + j] += gd[i * d + j];
                    }
                }
                accumulate(grads, *input, Tensor::new(shape.to_vec(), out).unwrap());
            }
        }
    }
}
