//! Reverse-mode differentiation over a Wengert list.
//!
//! Every operation appends one node to the [`Tape`]. Parents always have a
//! smaller index than their children, so iterating the tape backwards is a
//! valid topological order and each node is visited exactly once.

use crate::error::{Error, Result};
use crate::numcore::tensor::{broadcast_index_map, broadcast_shape, strides_of, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    Scale(Value, f64),
    Relu(Value),
    Exp(Value),
    MatMul(Value, Value),
    Softmax { x: Value, axis: usize },
    Sum(Value),
    Mean(Value),
    SumAxis { x: Value, axis: usize },
    Reshape(Value),
    Gather { x: Value, index: Vec<usize> },
    SegmentMeanPool { x: Value, seg: [usize; 3] },
    CrossEntropy { logits: Value, labels: Vec<usize>, probs: Vec<f64> },
    SqDist(Value, Value),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::MatMul(..) => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Reshape(_) => "reshape",
            Op::Gather { .. } => "gather",
            Op::SegmentMeanPool { .. } => "segment_mean_pool",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SqDist(..) => "sq_dist",
        }
    }

    fn parents(&self) -> Vec<Value> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::SqDist(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::Softmax { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Gather { x, .. }
            | Op::SegmentMeanPool { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation and propagates gradients through it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Records an input. Gradients are only accumulated into leaves with
    /// `requires_grad` and the nodes derived from them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Value {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Value(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Value {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Value {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self, v: Value) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<Value> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Tensor::from_parts(shape, value), op, requires_grad });
        self.grads.push(None);
        Ok(Value(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Value, b: Value, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Value> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = broadcast_shape(&sa, &sb)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = if sa == out && sb == out {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_index_map(&sa, &out);
            let mb = broadcast_index_map(&sb, &out);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        self.push(data, out, op)
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Result<Value> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(data, shape, Op::Scale(x, c))
    }

    /// Rectifier; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Value) -> Result<Value> {
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(data, shape, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Value) -> Result<Value> {
        let data = self.value(x).data().iter().map(|v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        self.push(data, shape, Op::Exp(x))
    }

    /// Matrix product. Either operand may carry a leading batch axis; a 2-D
    /// operand is shared across the batch of the other.
    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let dims = MatDims::resolve(self.shape(a), self.shape(b))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; dims.batch * dims.m * dims.n];
        for bi in 0..dims.batch {
            gemm_nn(
                &da[dims.a_off(bi)..],
                &db[dims.b_off(bi)..],
                &mut out[bi * dims.m * dims.n..],
                dims.m,
                dims.k,
                dims.n,
            );
        }
        self.push(out, dims.out_shape(), Op::MatMul(a, b))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Value, axis: usize) -> Result<Value> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (src[at(l)] - max).exp();
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        self.push(out, shape, Op::Softmax { x, axis })
    }

    pub fn sum(&mut self, x: Value) -> Result<Value> {
        let s = self.value(x).sum();
        self.push(vec![s], vec![], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Value) -> Result<Value> {
        let t = self.value(x);
        let m = t.sum() / t.len() as f64;
        self.push(vec![m], vec![], Op::Mean(x))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Value, axis: usize) -> Result<Value> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..][..inner];
                for (acc, v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push(out, out_shape, Op::SumAxis { x, axis })
    }

    pub fn mean_axis(&mut self, x: Value, axis: usize) -> Result<Value> {
        let len = *self.shape(x).get(axis).ok_or_else(|| Error::Dimension(format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Result<Value> {
        let t = self.value(x).reshape(shape)?;
        self.push(t.into_data(), shape.to_vec(), Op::Reshape(x))
    }

    /// Output element `k` is `x.flat[index[k]]`; the backward pass scatter-adds.
    pub fn gather(&mut self, x: Value, index: Vec<usize>, shape: &[usize]) -> Result<Value> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::Dimension(format!("gather shape {shape:?} needs {n} indices, got {}", index.len())));
        }
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Index(format!("gather index {bad} out of range for {} elements", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        self.push(data, shape.to_vec(), Op::Gather { x, index })
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Value, axes: &[usize]) -> Result<Value> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::Dimension(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let in_strides = strides_of(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = strided_indices(&out_shape, &strides);
        self.gather(x, index, &out_shape)
    }

    /// Block means over the last three axes. Each extent must be divisible by
    /// the matching entry of `seg`.
    pub fn segment_mean_pool(&mut self, x: Value, seg: [usize; 3]) -> Result<Value> {
        let shape = self.shape(x).to_vec();
        let geom = PoolGeometry::new(&shape, seg)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; geom.lead * geom.cells()];
        let inv = 1.0 / geom.block() as f64;
        for l in 0..geom.lead {
            let base = l * geom.full();
            let obase = l * geom.cells();
            for (i, &cell) in geom.cell_of.iter().enumerate() {
                out[obase + cell] += src[base + i] * inv;
            }
        }
        let mut out_shape = shape[..shape.len() - 3].to_vec();
        out_shape.extend_from_slice(&seg);
        self.push(out, out_shape, Op::SegmentMeanPool { x, seg })
    }

    /// Inverse layout of [`Tape::segment_mean_pool`]: every cell of the
    /// trailing `(T', J', E')` grid is copied over its block of the full
    /// `(T, J, E)` grid.
    pub fn segment_broadcast(&mut self, x: Value, full: [usize; 3]) -> Result<Value> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::Dimension(format!("segment_broadcast needs rank >= 3, got {shape:?}")));
        }
        let seg = [shape[shape.len() - 3], shape[shape.len() - 2], shape[shape.len() - 1]];
        let mut full_shape = shape[..shape.len() - 3].to_vec();
        full_shape.extend_from_slice(&full);
        let geom = PoolGeometry::new(&full_shape, seg)?;
        let mut index = Vec::with_capacity(geom.lead * geom.full());
        for l in 0..geom.lead {
            index.extend(geom.cell_of.iter().map(|&c| l * geom.cells() + c));
        }
        self.gather(x, index, &full_shape)
    }

    /// Mean negative log-likelihood of integer `labels` under row-wise
    /// softmax of `logits` (`N x K`).
    pub fn cross_entropy(&mut self, logits: Value, labels: &[usize]) -> Result<Value> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy expects [N, K] logits with N labels, got {shape:?} and {} labels",
                labels.len()
            )));
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &src[r * k..(r + 1) * k];
            let (arg, max) =
                row.iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
            // ln(sum exp(v - max)) = ln_1p(rest) keeps precision for confident rows
            let rest: f64 = row.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, v)| (v - max).exp()).sum();
            let log_norm = rest.ln_1p();
            let lse = max + log_norm;
            loss += (max - row[label]) + log_norm;
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        self.push(vec![loss / n as f64], vec![], op)
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (`n x c`)
    /// and `b` (`m x c`).
    pub fn sq_dist(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Dimension(format!("sq_dist expects [n, c] and [m, c], got {sa:?} and {sb:?}")));
        }
        let (n, m, c) = (sa[0], sb[0], sa[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ai = &da[i * c..(i + 1) * c];
            for j in 0..m {
                let bj = &db[j * c..(j + 1) * c];
                out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        self.push(out, vec![n, m], Op::SqDist(a, b))
    }

    /// Populates gradients of the scalar `root` on every ancestor that
    /// requires them. Previously accumulated gradients are cleared first.
    pub fn backward(&mut self, root: Value) -> Result<()> {
        if self.value(root).len() != 1 || self.value(root).rank() > 1 {
            return Err(Error::Usage(format!("backward needs a scalar root, got shape {:?}", self.shape(root))));
        }
        self.zero_grad();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Value, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        let op = self.nodes[id].op.clone();
        let out_shape = self.nodes[id].value.shape().to_vec();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(a) {
                    let ga = reduce_broadcast(g, &out_shape, self.shape(a), |v, _| v);
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let gb = reduce_broadcast(g, &out_shape, self.shape(b), |v, _| sign * v);
                    self.accumulate(b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let ma = broadcast_index_map(&sa, &out_shape);
                let mb = broadcast_index_map(&sb, &out_shape);
                if self.wants(a) {
                    let db = self.value(b).data();
                    let mut ga = vec![0.0; self.value(a).len()];
                    for k in 0..g.len() {
                        ga[ma[k]] += g[k] * db[mb[k]];
                    }
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let da = self.value(a).data();
                    let mut gb = vec![0.0; self.value(b).len()];
                    for k in 0..g.len() {
                        gb[mb[k]] += g[k] * da[ma[k]];
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::Scale(x, c) => self.accumulate(x, g.iter().map(|v| v * c).collect()),
            Op::Relu(x) => {
                let gx = g.iter().zip(self.value(x).data()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                self.accumulate(x, gx);
            }
            Op::Exp(x) => {
                let y = self.nodes[id].value.data();
                let gx = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                self.accumulate(x, gx);
            }
            Op::MatMul(a, b) => {
                let dims = MatDims::resolve(self.shape(a), self.shape(b)).expect("shapes validated in forward");
                let (m, k, n) = (dims.m, dims.k, dims.n);
                if self.wants(a) {
                    let db = self.value(b).data();
                    let mut ga = vec![0.0; self.value(a).len()];
                    for bi in 0..dims.batch {
                        gemm_nt(&g[bi * m * n..], &db[dims.b_off(bi)..], &mut ga[dims.a_off(bi)..], m, n, k);
                    }
                    self.accumulate(a, ga);
                }
                if self.wants(b) {
                    let da = self.value(a).data();
                    let mut gb = vec![0.0; self.value(b).len()];
                    for bi in 0..dims.batch {
                        gemm_tn(&da[dims.a_off(bi)..], &g[bi * m * n..], &mut gb[dims.b_off(bi)..], m, k, n);
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(&out_shape, axis).expect("validated");
                let y = self.nodes[id].value.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                self.accumulate(x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(x), axis).expect("validated");
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        gx[(o * len + l) * inner..][..inner].copy_from_slice(&g[o * inner..][..inner]);
                    }
                }
                self.accumulate(x, gx);
            }
            Op::Reshape(x) => self.accumulate(x, g.to_vec()),
            Op::Gather { x, index } => {
                let mut gx = vec![0.0; self.value(x).len()];
                for (k, &i) in index.iter().enumerate() {
                    gx[i] += g[k];
                }
                self.accumulate(x, gx);
            }
            Op::SegmentMeanPool { x, seg } => {
                let geom = PoolGeometry::new(self.shape(x), seg).expect("validated");
                let inv = 1.0 / geom.block() as f64;
                let mut gx = vec![0.0; geom.lead * geom.full()];
                for l in 0..geom.lead {
                    for (i, &cell) in geom.cell_of.iter().enumerate() {
                        gx[l * geom.full() + i] = g[l * geom.cells() + cell] * inv;
                    }
                }
                self.accumulate(x, gx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    gx[r * k + label] -= scale;
                }
                self.accumulate(logits, gx);
            }
            Op::SqDist(a, b) => {
                let (n, c) = (self.shape(a)[0], self.shape(a)[1]);
                let m = self.shape(b)[0];
                let (da, db) = (self.value(a).data(), self.value(b).data());
                let mut ga = vec![0.0; n * c];
                let mut gb = vec![0.0; m * c];
                for i in 0..n {
                    for j in 0..m {
                        let w = 2.0 * g[i * m + j];
                        for d in 0..c {
                            let diff = w * (da[i * c + d] - db[j * c + d]);
                            ga[i * c + d] += diff;
                            gb[j * c + d] -= diff;
                        }
                    }
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
        }
    }
}

/// Sums `g` (laid out as `out`) down to an operand of shape `src`.
fn reduce_broadcast(g: &[f64], out: &[usize], src: &[usize], f: impl Fn(f64, usize) -> f64) -> Vec<f64> {
    if src == out {
        return g.iter().enumerate().map(|(i, &v)| f(v, i)).collect();
    }
    let map = broadcast_index_map(src, out);
    let mut acc = vec![0.0; src.iter().product()];
    for (k, &i) in map.iter().enumerate() {
        acc[i] += f(g[k], k);
    }
    acc
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!("axis {axis} out of range for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn strided_indices(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut offset = 0;
    for _ in 0..n {
        out.push(offset);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

struct MatDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

impl MatDims {
    fn resolve(sa: &[usize], sb: &[usize]) -> Result<MatDims> {
        let mismatch = || Error::Dimension(format!("matmul shapes {sa:?} and {sb:?} do not agree"));
        let split = |s: &[usize]| match s.len() {
            2 => Ok((None, s[0], s[1])),
            3 => Ok((Some(s[0]), s[1], s[2])),
            _ => Err(mismatch()),
        };
        let (ba, m, k) = split(sa)?;
        let (bb, k2, n) = split(sb)?;
        if k != k2 {
            return Err(mismatch());
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => return Err(mismatch()),
            (Some(x), _) | (None, Some(x)) => x,
            (None, None) => 1,
        };
        Ok(MatDims { batch, a_batched: ba.is_some(), b_batched: bb.is_some(), m, k, n })
    }

    fn a_off(&self, bi: usize) -> usize {
        if self.a_batched {
            bi * self.m * self.k
        } else {
            0
        }
    }

    fn b_off(&self, bi: usize) -> usize {
        if self.b_batched {
            bi * self.k * self.n
        } else {
            0
        }
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.a_batched || self.b_batched {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

/// out[m x n] += a[m x k] * b[k x n]
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// out[m x k] += g[m x n] * b[k x n]^T
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            out[i * k + p] += gi.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k x n] += a[m x k]^T * g[m x n]
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *o += av * gv;
            }
        }
    }
}

/// Block layout of the trailing `(T, J, E)` axes split into `(T', J', E')` cells.
pub(crate) struct PoolGeometry {
    lead: usize,
    full: [usize; 3],
    seg: [usize; 3],
    /// segment cell of every position in the trailing grid
    cell_of: Vec<usize>,
}

impl PoolGeometry {
    pub(crate) fn new(shape: &[usize], seg: [usize; 3]) -> Result<Self> {
        if shape.len() < 3 {
            return Err(Error::Dimension(format!("segment pooling needs rank >= 3, got {shape:?}")));
        }
        let r = shape.len();
        let full = [shape[r - 3], shape[r - 2], shape[r - 1]];
        for (axis, (&f, &s)) in ["t", "j", "e"].iter().zip(full.iter().zip(&seg)) {
            if s == 0 || f % s != 0 {
                return Err(Error::config(
                    format!("seg.{axis}"),
                    format!("segment count {s} does not divide extent {f}"),
                ));
            }
        }
        let block = [full[0] / seg[0], full[1] / seg[1], full[2] / seg[2]];
        let mut cell_of = Vec::with_capacity(full.iter().product());
        for t in 0..full[0] {
            for j in 0..full[1] {
                for e in 0..full[2] {
                    let (ct, cj, ce) = (t / block[0], j / block[1], e / block[2]);
                    cell_of.push((ct * seg[1] + cj) * seg[2] + ce);
                }
            }
        }
        Ok(PoolGeometry { lead: shape[..r - 3].iter().product(), full, seg, cell_of })
    }

    fn full(&self) -> usize {
        self.full.iter().product()
    }

    fn cells(&self) -> usize {
        self.seg.iter().product()
    }

    fn block(&self) -> usize {
        self.full() / self.cells()
    }
}
