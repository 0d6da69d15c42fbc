//! Differentiable primitives: forward builders on [`Tape`] and their
//! backward rules.

use std::sync::Arc;

use super::real::{gemm, MatMut, MatRef, Real};
use super::tape::{accumulate, accumulate_owned, Node, Tape, Var};
use super::tensor::{permute_data, Tensor};

pub(crate) enum Broadcast {
    Same,
    /// Input offsets for every output element.
    Offsets { a: Vec<usize>, b: Vec<usize> },
}

/// Which axis of an `[n, m, d]` grid attention runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Softmax over the `n` axis, independently per column.
    Column,
    /// Softmax over the `m` axis, independently per row.
    Row,
}

/// Backward rule of a [`Tape::custom`] op: receives the input values, the
/// output value and the output gradient; returns one gradient per input.
pub type CustomBackward<T> =
    Arc<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) enum Op<T: Real> {
    Leaf,
    MatMul { a: Var, b: Var, rows: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, rows: usize, k: usize, n: usize },
    Add { a: Var, b: Var, bc: Broadcast },
    Sub { a: Var, b: Var, bc: Broadcast },
    Mul { a: Var, b: Var, bc: Broadcast },
    Scale { a: Var, s: T },
    Sigmoid { a: Var },
    Silu { a: Var },
    Softmax { a: Var },
    RmsNorm { x: Var, gain: Var, inv: Vec<T> },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    GatherRows { table: Var, idx: Arc<[usize]> },
    ScatterRows { src: Var, idx: Arc<[usize]> },
    Sum { a: Var },
    Mean { a: Var },
    Bce { p: Var, target: Vec<T>, mask: Vec<bool>, count: usize },
    Attention { q: Var, k: Var, v: Var, axis: Axis, heads: usize, probs: Vec<T> },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T: Real> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "bmm",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Silu { .. } => "silu",
            Op::Softmax { .. } => "softmax",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Bce { .. } => "bce",
            Op::Attention { .. } => "attention",
            Op::Custom { .. } => "custom",
        }
    }
}

pub const RMS_EPS: f64 = 1e-6;
pub const BCE_CLAMP: f64 = 1e-7;

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    /// `a[..., k] x b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            !sa.is_empty() && sb.len() == 2 && sa[sa.len() - 1] == sb[0],
            "matmul shapes {sa:?} and {sb:?} are incompatible"
        );
        let k = sb[0];
        let n = sb[1];
        let rows = self.value(a).numel() / k.max(1);
        let rows = if k == 0 { sa[..sa.len() - 1].iter().product() } else { rows };
        let mut out = vec![T::zero(); rows * n];
        gemm(
            T::one(),
            MatRef::dense(self.value(a).data(), 0, rows, k),
            MatRef::dense(self.value(b).data(), 0, k, n),
            T::zero(),
            MatMut::dense(&mut out, 0, rows, n),
        );
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::from_vec(&shape, out), Op::MatMul { a, b, rows, k, n }, rg)
    }

    /// `[B, r, k] x [B, k, n] -> [B, r, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "bmm shapes {sa:?} and {sb:?} are incompatible"
        );
        let (batch, rows, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * rows * n];
        for bi in 0..batch {
            gemm(
                T::one(),
                MatRef::dense(self.value(a).data(), bi * rows * k, rows, k),
                MatRef::dense(self.value(b).data(), bi * k * n, k, n),
                T::zero(),
                MatMut::dense(&mut out, bi * rows * n, rows, n),
            );
        }
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::from_vec(&[batch, rows, n], out), Op::BatchMatMul { a, b, batch, rows, k, n }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> (Tensor<T>, Broadcast) {
        let (shape, bc) = Broadcast::new(self.shape(a), self.shape(b));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = match &bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Offsets { a: oa, b: ob } => oa.iter().zip(ob).map(|(&i, &j)| f(da[i], db[j])).collect(),
        };
        (Tensor::from_vec(&shape, out), bc)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (t, bc) = self.binary(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        self.push(t, Op::Add { a, b, bc }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (t, bc) = self.binary(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        self.push(t, Op::Sub { a, b, bc }, rg)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (t, bc) = self.binary(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        self.push(t, Op::Mul { a, b, bc }, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let t = Tensor::from_vec(v.shape(), v.data().iter().map(|&x| x * s).collect());
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Scale { a, s }, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::from_vec(v.shape(), v.data().iter().map(|&x| sigmoid(x)).collect());
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Sigmoid { a }, rg)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::from_vec(v.shape(), v.data().iter().map(|&x| x * sigmoid(x)).collect());
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Silu { a }, rg)
    }

    /// Softmax over the last axis. `mask[i] == false` acts as an additive
    /// `-inf`: the position gets probability 0 and no gradient. A row with
    /// every position masked is all zeros.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let v = self.value(a);
        if let Some(m) = mask {
            assert_eq!(m.len(), v.numel(), "softmax mask length {} for shape {:?}", m.len(), v.shape());
        }
        let w = v.last_dim();
        let mut out = v.data().to_vec();
        if w > 0 {
            for (r, row) in out.chunks_mut(w).enumerate() {
                let keep = |j: usize| mask.is_none_or(|m| m[r * w + j]);
                softmax_row(row, keep);
            }
        }
        let t = Tensor::from_vec(v.shape(), out);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Softmax { a }, rg)
    }

    /// `x / sqrt(mean(x^2) + eps) * gain` over the last axis.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gain));
        let d = xv.last_dim();
        assert!(
            gv.shape() == [d],
            "rms_norm gain shape {:?} does not match input shape {:?}",
            gv.shape(),
            xv.shape()
        );
        let eps = T::of(RMS_EPS);
        let g = gv.data();
        let mut out = Vec::with_capacity(xv.numel());
        let mut inv = Vec::with_capacity(xv.numel() / d.max(1));
        for row in xv.data().chunks(d.max(1)) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
            let r = T::one() / (ms + eps).sqrt();
            inv.push(r);
            out.extend(row.iter().zip(g).map(|(&v, &gg)| v * r * gg));
        }
        let t = Tensor::from_vec(xv.shape(), out);
        let rg = self.any_grad(&[x, gain]);
        self.push(t, Op::RmsNorm { x, gain, inv }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Reshape { a }, rg)
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let v = self.value(a);
        let mut seen = vec![false; v.rank()];
        assert!(
            perm.len() == v.rank() && perm.iter().all(|&p| p < v.rank() && !std::mem::replace(&mut seen[p], true)),
            "permutation {perm:?} is invalid for shape {:?}",
            v.shape()
        );
        let shape: Vec<usize> = perm.iter().map(|&p| v.shape()[p]).collect();
        let t = Tensor::from_vec(&shape, permute_data(v.data(), v.shape(), perm));
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Permute { a, perm: perm.to_vec() }, rg)
    }

    /// Rows `idx` of a `[R, d]` table, giving `[idx.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, idx: impl Into<Arc<[usize]>>) -> Var {
        let idx: Arc<[usize]> = idx.into();
        let tv = self.value(table);
        assert_eq!(tv.rank(), 2, "gather_rows needs a matrix, got shape {:?}", tv.shape());
        let (r, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            assert!(i < r, "gather_rows index {i} out of range for shape {:?}", tv.shape());
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_vec(&[idx.len(), d], out);
        let rg = self.any_grad(&[table]);
        self.push(t, Op::GatherRows { table, idx }, rg)
    }

    /// Adds row `t` of `src` into row `idx[t]` of a zero `[rows, d]` matrix.
    pub fn scatter_rows(&mut self, src: Var, idx: impl Into<Arc<[usize]>>, rows: usize) -> Var {
        let idx: Arc<[usize]> = idx.into();
        let sv = self.value(src);
        assert!(
            sv.rank() == 2 && sv.shape()[0] == idx.len(),
            "scatter_rows source shape {:?} does not match {} indices",
            sv.shape(),
            idx.len()
        );
        let d = sv.shape()[1];
        let mut out = vec![T::zero(); rows * d];
        for (t, &i) in idx.iter().enumerate() {
            assert!(i < rows, "scatter_rows index {i} out of range for {rows} rows");
            for c in 0..d {
                out[i * d + c] += sv.data()[t * d + c];
            }
        }
        let t = Tensor::from_vec(&[rows, d], out);
        let rg = self.any_grad(&[src]);
        self.push(t, Op::ScatterRows { src, idx }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(v.numel() > 0, "mean of an empty tensor");
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg)
    }

    /// Mean binary cross-entropy over cells with `mask` set; probabilities
    /// are clamped to `[1e-7, 1 - 1e-7]` (no gradient where clamped).
    pub fn bce(&mut self, p: Var, target: &[T], mask: &[bool]) -> Var {
        let pv = self.value(p);
        assert!(
            target.len() == pv.numel() && mask.len() == pv.numel(),
            "bce target/mask lengths {}/{} for shape {:?}",
            target.len(),
            mask.len(),
            pv.shape()
        );
        let count = mask.iter().filter(|&&m| m).count();
        let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
        let mut total = T::zero();
        for ((&x, &t), &m) in pv.data().iter().zip(target).zip(mask) {
            if m {
                // explicit comparisons so NaN propagates instead of clamping
                let x = if x < lo { lo } else if x > hi { hi } else { x };
                total -= t * x.ln() + (T::one() - t) * (T::one() - x).ln();
            }
        }
        let loss = if count == 0 { T::zero() } else { total / T::of(count as f64) };
        let rg = self.any_grad(&[p]);
        self.push(Tensor::scalar(loss), Op::Bce { p, target: target.to_vec(), mask: mask.to_vec(), count }, rg)
    }

    /// Multi-head scaled dot-product attention along one axis of an
    /// `[n, m, d]` grid: every column (or row) is an independent sequence.
    pub fn axial_attention(&mut self, q: Var, k: Var, v: Var, axis: Axis, heads: usize) -> Var {
        let shape = self.shape(q).to_vec();
        assert!(
            shape.len() == 3 && self.shape(k) == shape.as_slice() && self.shape(v) == shape.as_slice(),
            "attention shapes q {:?} k {:?} v {:?} must be equal [n, m, d]",
            shape,
            self.shape(k),
            self.shape(v)
        );
        let d = shape[2];
        assert!(heads > 0 && d % heads == 0, "hidden size {d} is not divisible by {heads} heads");
        let geo = Geometry::new(&shape, axis, heads);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![T::zero(); qd.len()];
        let mut probs = vec![T::zero(); geo.lines * heads * geo.len * geo.len];
        let scale = T::of(1.0 / (geo.dh as f64).sqrt());
        for line in 0..geo.lines {
            for h in 0..heads {
                let off = geo.offset(line, h);
                let p_off = (line * heads + h) * geo.len * geo.len;
                let (ql, kl, vl) = (geo.view(qd, off), geo.view(kd, off), geo.view(vd, off));
                gemm(scale, ql, kl.t(), T::zero(), MatMut::dense(&mut probs, p_off, geo.len, geo.len));
                for row in probs[p_off..p_off + geo.len * geo.len].chunks_mut(geo.len) {
                    softmax_row(row, |_| true);
                }
                gemm(
                    T::one(),
                    MatRef::dense(&probs, p_off, geo.len, geo.len),
                    vl,
                    T::zero(),
                    geo.view_mut(&mut out, off),
                );
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        self.push(Tensor::from_vec(&shape, out), Op::Attention { q, k, v, axis, heads, probs }, rg)
    }

    /// An op with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, rg)
    }
}

fn softmax_row<T: Real>(row: &mut [T], keep: impl Fn(usize) -> bool) {
    let mut mx = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if keep(j) && v > mx {
            mx = v;
        }
    }
    if mx == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut s = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        *v = if keep(j) { (*v - mx).exp() } else { T::zero() };
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Layout of the independent sequences of an axial attention.
struct Geometry {
    lines: usize,
    len: usize,
    /// Element stride between consecutive tokens of one line.
    tok_stride: usize,
    /// Element offset between consecutive lines.
    line_stride: usize,
    dh: usize,
}

impl Geometry {
    fn new(shape: &[usize], axis: Axis, heads: usize) -> Self {
        let (n, m, d) = (shape[0], shape[1], shape[2]);
        let dh = d / heads;
        match axis {
            Axis::Column => Geometry { lines: m, len: n, tok_stride: m * d, line_stride: d, dh },
            Axis::Row => Geometry { lines: n, len: m, tok_stride: d, line_stride: m * d, dh },
        }
    }

    fn offset(&self, line: usize, head: usize) -> usize {
        line * self.line_stride + head * self.dh
    }

    fn view<'a, T>(&self, data: &'a [T], offset: usize) -> MatRef<'a, T> {
        MatRef { data, offset, rows: self.len, cols: self.dh, rs: self.tok_stride, cs: 1 }
    }

    fn view_mut<'a, T>(&self, data: &'a mut [T], offset: usize) -> MatMut<'a, T> {
        MatMut { data, offset, rows: self.len, cols: self.dh, rs: self.tok_stride, cs: 1 }
    }
}

/// Reduces a broadcast output gradient back onto an input's shape.
fn unbroadcast<T: Real>(g: &[T], offsets: &[usize], numel: usize, f: impl Fn(usize, T) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); numel];
    for (o, (&off, &gv)) in offsets.iter().zip(g).enumerate() {
        out[off] += f(o, gv);
    }
    out
}

pub(crate) fn backward_node<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let val = |v: Var| &nodes[v.0].value;
    let needs = |v: Var| nodes[v.0].requires_grad;
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, rows, k, n } => {
            if needs(a) {
                let mut ga = vec![T::zero(); rows * k];
                gemm(
                    T::one(),
                    MatRef::dense(g, 0, rows, n),
                    MatRef::dense(val(b).data(), 0, k, n).t(),
                    T::zero(),
                    MatMut::dense(&mut ga, 0, rows, k),
                );
                accumulate_owned(nodes, grads, a, ga);
            }
            if needs(b) {
                let mut gb = vec![T::zero(); k * n];
                gemm(
                    T::one(),
                    MatRef::dense(val(a).data(), 0, rows, k).t(),
                    MatRef::dense(g, 0, rows, n),
                    T::zero(),
                    MatMut::dense(&mut gb, 0, k, n),
                );
                accumulate_owned(nodes, grads, b, gb);
            }
        }
        &Op::BatchMatMul { a, b, batch, rows, k, n } => {
            if needs(a) {
                let mut ga = vec![T::zero(); batch * rows * k];
                for bi in 0..batch {
                    gemm(
                        T::one(),
                        MatRef::dense(g, bi * rows * n, rows, n),
                        MatRef::dense(val(b).data(), bi * k * n, k, n).t(),
                        T::zero(),
                        MatMut::dense(&mut ga, bi * rows * k, rows, k),
                    );
                }
                accumulate_owned(nodes, grads, a, ga);
            }
            if needs(b) {
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    gemm(
                        T::one(),
                        MatRef::dense(val(a).data(), bi * rows * k, rows, k).t(),
                        MatRef::dense(g, bi * rows * n, rows, n),
                        T::zero(),
                        MatMut::dense(&mut gb, bi * k * n, k, n),
                    );
                }
                accumulate_owned(nodes, grads, b, gb);
            }
        }
        Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
            let neg = matches!(nodes[i].op, Op::Sub { .. });
            let sign = if neg { -T::one() } else { T::one() };
            match bc {
                Broadcast::Same => {
                    accumulate(nodes, grads, *a, g);
                    if needs(*b) {
                        accumulate_owned(nodes, grads, *b, g.iter().map(|&v| v * sign).collect());
                    }
                }
                Broadcast::Offsets { a: oa, b: ob } => {
                    if needs(*a) {
                        accumulate_owned(nodes, grads, *a, unbroadcast(g, oa, val(*a).numel(), |_, v| v));
                    }
                    if needs(*b) {
                        accumulate_owned(nodes, grads, *b, unbroadcast(g, ob, val(*b).numel(), |_, v| v * sign));
                    }
                }
            }
        }
        Op::Mul { a, b, bc } => {
            let (da, db) = (val(*a).data(), val(*b).data());
            match bc {
                Broadcast::Same => {
                    if needs(*a) {
                        accumulate_owned(nodes, grads, *a, g.iter().zip(db).map(|(&x, &y)| x * y).collect());
                    }
                    if needs(*b) {
                        accumulate_owned(nodes, grads, *b, g.iter().zip(da).map(|(&x, &y)| x * y).collect());
                    }
                }
                Broadcast::Offsets { a: oa, b: ob } => {
                    if needs(*a) {
                        let ga = unbroadcast(g, oa, da.len(), |o, v| v * db[ob[o]]);
                        accumulate_owned(nodes, grads, *a, ga);
                    }
                    if needs(*b) {
                        let gb = unbroadcast(g, ob, db.len(), |o, v| v * da[oa[o]]);
                        accumulate_owned(nodes, grads, *b, gb);
                    }
                }
            }
        }
        &Op::Scale { a, s } => accumulate_owned(nodes, grads, a, g.iter().map(|&v| v * s).collect()),
        &Op::Sigmoid { a } => {
            let y = nodes[i].value.data();
            accumulate_owned(nodes, grads, a, g.iter().zip(y).map(|(&gv, &s)| gv * s * (T::one() - s)).collect());
        }
        &Op::Silu { a } => {
            let x = val(a).data();
            let ga = g
                .iter()
                .zip(x)
                .map(|(&gv, &xv)| {
                    let s = sigmoid(xv);
                    gv * s * (T::one() + xv * (T::one() - s))
                })
                .collect();
            accumulate_owned(nodes, grads, a, ga);
        }
        &Op::Softmax { a } => {
            let y = nodes[i].value.data();
            let w = nodes[i].value.last_dim().max(1);
            let mut ga = vec![T::zero(); y.len()];
            for ((gr, yr), out) in g.chunks(w).zip(y.chunks(w)).zip(ga.chunks_mut(w)) {
                let dot: T = gr.iter().zip(yr).map(|(&x, &p)| x * p).sum();
                for ((o, &gv), &p) in out.iter_mut().zip(gr).zip(yr) {
                    *o = p * (gv - dot);
                }
            }
            accumulate_owned(nodes, grads, a, ga);
        }
        Op::RmsNorm { x, gain, inv } => {
            let xv = val(*x).data();
            let gv = val(*gain).data();
            let d = gv.len().max(1);
            if needs(*x) {
                let mut gx = vec![T::zero(); xv.len()];
                let df = T::of(d as f64);
                for (r, ((xr, gr), out)) in xv.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                    let ir = inv[r];
                    // dot = sum_j g_j * gain_j * x_j
                    let dot: T = gr.iter().zip(gv).zip(xr).map(|((&a, &b), &c)| a * b * c).sum();
                    let c = ir * ir * ir * dot / df;
                    for j in 0..d {
                        out[j] = gr[j] * gv[j] * ir - xr[j] * c;
                    }
                }
                accumulate_owned(nodes, grads, *x, gx);
            }
            if needs(*gain) {
                let mut gg = vec![T::zero(); d];
                for (r, (xr, gr)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                    for j in 0..d {
                        gg[j] += gr[j] * xr[j] * inv[r];
                    }
                }
                accumulate_owned(nodes, grads, *gain, gg);
            }
        }
        &Op::Reshape { a } => accumulate(nodes, grads, a, g),
        Op::Permute { a, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (o, &p) in perm.iter().enumerate() {
                inverse[p] = o;
            }
            let ga = permute_data(g, nodes[i].value.shape(), &inverse);
            accumulate_owned(nodes, grads, *a, ga);
        }
        Op::GatherRows { table, idx } => {
            let tv = val(*table);
            let d = tv.shape()[1];
            let mut gt = vec![T::zero(); tv.numel()];
            for (t, &r) in idx.iter().enumerate() {
                for c in 0..d {
                    gt[r * d + c] += g[t * d + c];
                }
            }
            accumulate_owned(nodes, grads, *table, gt);
        }
        Op::ScatterRows { src, idx } => {
            let d = val(*src).shape()[1];
            let mut gs = Vec::with_capacity(idx.len() * d);
            for &r in idx.iter() {
                gs.extend_from_slice(&g[r * d..(r + 1) * d]);
            }
            accumulate_owned(nodes, grads, *src, gs);
        }
        &Op::Sum { a } => accumulate_owned(nodes, grads, a, vec![g[0]; val(a).numel()]),
        &Op::Mean { a } => {
            let n = val(a).numel();
            accumulate_owned(nodes, grads, a, vec![g[0] / T::of(n as f64); n]);
        }
        Op::Bce { p, target, mask, count } => {
            if *count == 0 {
                return;
            }
            let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
            let scale = g[0] / T::of(*count as f64);
            let gp = val(*p)
                .data()
                .iter()
                .zip(target)
                .zip(mask)
                .map(|((&x, &t), &m)| {
                    if !m || x < lo || x > hi {
                        T::zero()
                    } else {
                        scale * (x - t) / (x * (T::one() - x))
                    }
                })
                .collect();
            accumulate_owned(nodes, grads, *p, gp);
        }
        Op::Attention { q, k, v, axis, heads, probs } => {
            let shape = val(*q).shape();
            let geo = Geometry::new(shape, *axis, *heads);
            let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
            let numel = qd.len();
            let mut gq = vec![T::zero(); numel];
            let mut gk = vec![T::zero(); numel];
            let mut gv = vec![T::zero(); numel];
            let scale = T::of(1.0 / (geo.dh as f64).sqrt());
            let l = geo.len;
            let mut dp = vec![T::zero(); l * l];
            for line in 0..geo.lines {
                for h in 0..*heads {
                    let off = geo.offset(line, h);
                    let p_off = (line * heads + h) * l * l;
                    let pm = MatRef::dense(probs, p_off, l, l);
                    let go = geo.view(g, off);
                    // dV = P^T dO
                    gemm(T::one(), pm.t(), go, T::zero(), geo.view_mut(&mut gv, off));
                    // dP = dO V^T
                    gemm(T::one(), go, geo.view(vd, off).t(), T::zero(), MatMut::dense(&mut dp, 0, l, l));
                    // dS = P * (dP - rowsum(dP * P))
                    let pr = &probs[p_off..p_off + l * l];
                    for (dr, prow) in dp.chunks_mut(l).zip(pr.chunks(l)) {
                        let dot: T = dr.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                        for (x, &p) in dr.iter_mut().zip(prow) {
                            *x = p * (*x - dot);
                        }
                    }
                    let ds = MatRef::dense(&dp, 0, l, l);
                    gemm(scale, ds, geo.view(kd, off), T::zero(), geo.view_mut(&mut gq, off));
                    gemm(scale, ds.t(), geo.view(qd, off), T::zero(), geo.view_mut(&mut gk, off));
                }
            }
            accumulate_owned(nodes, grads, *q, gq);
            accumulate_owned(nodes, grads, *k, gk);
            accumulate_owned(nodes, grads, *v, gv);
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
            let gs = backward(&vals, &nodes[i].value, g);
            assert_eq!(gs.len(), inputs.len(), "custom backward returned {} gradients for {} inputs", gs.len(), inputs.len());
            for (&v, gi) in inputs.iter().zip(gs) {
                if let Some(gi) = gi {
                    assert_eq!(gi.len(), val(v).numel(), "custom backward gradient length");
                    accumulate_owned(nodes, grads, v, gi);
                }
            }
        }
    }
}
