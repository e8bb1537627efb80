use std::ops::Range;

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw};
use super::{AutodiffError, Gradients, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    MaskedSoftmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    ReduceSum { x: Var, axis: Option<usize> },
    WeightedSum { items: Var, weights: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    GatherRows { table: Var, ids: Vec<usize> },
    Reshape(Var),
    Unfold { x: Var, width: usize },
    MaxRows { x: Var, argmax: Vec<usize> },
    SegmentSoftmax { x: Var, segments: Vec<Range<usize>> },
    ScaleRows { items: Var, weights: Var },
    SegmentSum { x: Var, segments: Vec<Range<usize>> },
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    /// Whether any parameter or leaf lies upstream; gradients are only
    /// propagated into such nodes.
    needs_grad: bool,
}

/// Single-threaded record of a computation, borrowing the parameters it reads.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A non-parameter input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Constant, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product. A rank-1 left operand is treated as a single row and
    /// the result is rank-1 as well.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() > 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(AutodiffError::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let shape = if ta.rank() == 1 { vec![n] } else { vec![m, n] };
        self.push(Tensor::from_parts(shape, data), Op::MatMul(a, b), "matmul")
    }

    fn bcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.len() == 1 {
            Ok(Bcast::Scalar)
        } else if ta.rank() == 2 && tb.len() == ta.cols() && (tb.rank() == 1 || tb.rows() == 1) {
            Ok(Bcast::Row)
        } else {
            Err(AutodiffError::shape(op, format!("{:?} with {:?}", ta.shape(), tb.shape())))
        }
    }

    fn zip_bcast(&self, a: Var, b: Var, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let bd = tb.data();
        let data: Vec<f64> = match kind {
            Bcast::Same => ta.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => ta.data().iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Row => {
                let n = ta.cols();
                ta.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % n])).collect()
            }
        };
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let kind = self.bcast_kind("add", a, b)?;
        let out = self.zip_bcast(a, b, kind, |x, y| x + y);
        self.push(out, Op::Add(a, b, kind), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let kind = self.bcast_kind("mul", a, b)?;
        let out = self.zip_bcast(a, b, kind, |x, y| x * y);
        self.push(out, Op::Mul(a, b, kind), "mul")
    }

    /// `a - b`, built from `add` and `scale`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// Softmax over the last axis, restricted to positions where `mask` is 1.
    ///
    /// Masked positions get exactly zero probability. For a matrix input the
    /// mask has the same shape and each row is normalized independently.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[f64]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        if t.rank() > 2 || mask.len() != t.len() {
            return Err(AutodiffError::shape(
                "masked_softmax",
                format!("logits {:?} with mask of length {}", t.shape(), mask.len()),
            ));
        }
        let n = t.cols();
        let mut out = vec![0.0; t.len()];
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = &mask[r * n..(r + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for (&x, &keep) in row.iter().zip(m) {
                if keep != 0.0 && x > max {
                    max = x;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::AllMasked { op: "masked_softmax" });
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if m[j] != 0.0 {
                    o[j] = (row[j] - max).exp();
                    total += o[j];
                }
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::MaskedSoftmax(logits), "masked_softmax")
    }

    /// Concatenation along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::shape("concat", "no inputs"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let rank = first.len();
        if axis >= rank || rank > 2 {
            return Err(AutodiffError::shape("concat", format!("axis {axis} for rank {rank}")));
        }
        for p in &parts[1..] {
            let s = self.value(*p).shape();
            let ok = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first[d]);
            if !ok {
                return Err(AutodiffError::shape("concat", format!("{first:?} with {s:?}")));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).shape()[axis]).sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(shape.iter().product());
        if axis == 0 {
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
        } else {
            for r in 0..first[0] {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
        }
        let out = Tensor::from_parts(shape, data);
        self.push(out, Op::Concat { parts: parts.to_vec(), axis }, "concat")
    }

    /// Sum over `axis`, or over everything (scalar result) when `axis` is `None`.
    pub fn reduce_sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let out = match axis {
            None => Tensor::scalar(t.sum()),
            Some(0) if t.rank() == 1 => Tensor::scalar(t.sum()),
            Some(0) if t.rank() == 2 => {
                let n = t.cols();
                let mut acc = vec![0.0; n];
                for r in 0..t.rows() {
                    for (a, v) in acc.iter_mut().zip(t.row(r)) {
                        *a += v;
                    }
                }
                Tensor::from_parts(vec![n], acc)
            }
            Some(1) if t.rank() == 2 => {
                let sums = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
                Tensor::from_parts(vec![t.rows()], sums)
            }
            Some(a) => {
                return Err(AutodiffError::shape("reduce_sum", format!("axis {a} for {:?}", t.shape())))
            }
        };
        self.push(out, Op::ReduceSum { x, axis }, "reduce_sum")
    }

    /// `Σ_i weights[i] · items[i, :]` for items `(n,d)` and weights `(n,)`.
    pub fn weighted_sum(&mut self, items: Var, weights: Var) -> Result<Var, AutodiffError> {
        let (ti, tw) = (self.value(items), self.value(weights));
        let n = ti.rows();
        if tw.len() != n || tw.rank() != 1 {
            return Err(AutodiffError::shape(
                "weighted_sum",
                format!("items {:?} with weights {:?}", ti.shape(), tw.shape()),
            ));
        }
        let d = ti.cols();
        let mut out = vec![0.0; d];
        for (i, &w) in tw.data().iter().enumerate() {
            for (o, x) in out.iter_mut().zip(ti.row(i)) {
                *o += w * x;
            }
        }
        self.push(Tensor::from_parts(vec![d], out), Op::WeightedSum { items, weights }, "weighted_sum")
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(logits);
        let (b, c) = (t.rows(), t.cols());
        if labels.len() != b {
            return Err(AutodiffError::shape(
                "cross_entropy",
                format!("{b} rows but {} labels", labels.len()),
            ));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(AutodiffError::LabelOutOfRange { label, classes: c });
            }
            let row = t.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum_exp.ln();
            loss += lse - row[label];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / b as f64);
        self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, "cross_entropy")
    }

    /// Rows `ids` of a matrix, stacked in order. Used for embedding lookup and
    /// for slicing time steps out of a stacked sequence.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        if t.rank() != 2 || ids.is_empty() {
            return Err(AutodiffError::shape("gather_rows", format!("{:?}", t.shape())));
        }
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= t.rows() {
                return Err(AutodiffError::IndexOutOfRange { index: i, len: t.rows() });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        self.push(out, Op::GatherRows { table, ids: ids.to_vec() }, "gather_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    /// Sliding windows over rows: `(T,d)` into `(T-w+1, w·d)`, where output
    /// row `s` is rows `s..s+w` laid end to end.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 || width == 0 || t.rows() < width {
            return Err(AutodiffError::shape("unfold", format!("width {width} over {:?}", t.shape())));
        }
        let (rows, d) = (t.rows(), t.cols());
        let windows = rows - width + 1;
        let mut data = Vec::with_capacity(windows * width * d);
        for s in 0..windows {
            data.extend_from_slice(&t.data()[s * d..(s + width) * d]);
        }
        let out = Tensor::from_parts(vec![windows, width * d], data);
        self.push(out, Op::Unfold { x, width }, "unfold")
    }

    /// Column-wise maximum over the first `rows` rows of a matrix. Ties go to
    /// the earliest row.
    pub fn max_rows(&mut self, x: Var, rows: usize) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(AutodiffError::shape("max_rows", format!("{:?}", t.shape())));
        }
        if rows == 0 {
            return Err(AutodiffError::AllMasked { op: "max_rows" });
        }
        if rows > t.rows() {
            return Err(AutodiffError::IndexOutOfRange { index: rows - 1, len: t.rows() });
        }
        let n = t.cols();
        let mut argmax = vec![0usize; n];
        let mut out = t.row(0).to_vec();
        for r in 1..rows {
            for (j, &v) in t.row(r).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        self.push(Tensor::from_parts(vec![n], out), Op::MaxRows { x, argmax }, "max_rows")
    }

    fn check_segments(op: &'static str, segments: &[Range<usize>], n: usize) -> Result<(), AutodiffError> {
        let mut next = 0;
        for s in segments {
            if s.start != next || s.end <= s.start {
                return Err(AutodiffError::shape(op, format!("segments {segments:?} do not tile 0..{n}")));
            }
            next = s.end;
        }
        if next != n || segments.is_empty() {
            return Err(AutodiffError::shape(op, format!("segments {segments:?} do not tile 0..{n}")));
        }
        Ok(())
    }

    /// Softmax of a vector taken independently inside each segment. The
    /// segments must be non-empty and tile `0..len` in order.
    pub fn segment_softmax(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(AutodiffError::shape("segment_softmax", format!("{:?}", t.shape())));
        }
        Self::check_segments("segment_softmax", segments, t.len())?;
        let mut out = vec![0.0; t.len()];
        for seg in segments {
            let row = &t.data()[seg.clone()];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[seg.clone()];
            let mut total = 0.0;
            for (oj, &v) in o.iter_mut().zip(row) {
                *oj = (v - max).exp();
                total += *oj;
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::from_parts(vec![out.len()], out);
        self.push(out, Op::SegmentSoftmax { x, segments: segments.to_vec() }, "segment_softmax")
    }

    /// Row `i` of `items (n,d)` multiplied by `weights[i]`.
    pub fn scale_rows(&mut self, items: Var, weights: Var) -> Result<Var, AutodiffError> {
        let (ti, tw) = (self.value(items), self.value(weights));
        if ti.rank() != 2 || tw.rank() != 1 || tw.len() != ti.rows() {
            return Err(AutodiffError::shape("scale_rows", format!("{:?} by {:?}", ti.shape(), tw.shape())));
        }
        let d = ti.cols();
        let data = ti.data().iter().enumerate().map(|(k, &v)| v * tw.data()[k / d]).collect();
        let out = Tensor::from_parts(ti.shape().to_vec(), data);
        self.push(out, Op::ScaleRows { items, weights }, "scale_rows")
    }

    /// Sums the rows of `x (n,d)` inside each segment, giving `(segments, d)`.
    pub fn segment_sum(&mut self, x: Var, segments: &[Range<usize>]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(AutodiffError::shape("segment_sum", format!("{:?}", t.shape())));
        }
        Self::check_segments("segment_sum", segments, t.rows())?;
        let d = t.cols();
        let mut out = vec![0.0; segments.len() * d];
        for (s, seg) in segments.iter().enumerate() {
            let o = &mut out[s * d..(s + 1) * d];
            for r in seg.clone() {
                for (a, v) in o.iter_mut().zip(t.row(r)) {
                    *a += v;
                }
            }
        }
        let out = Tensor::from_parts(vec![segments.len(), d], out);
        self.push(out, Op::SegmentSum { x, segments: segments.to_vec() }, "segment_sum")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let rt = self.value(root);
        if !rt.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(rt.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::filled(rt.shape(), 1.0));
        let mut params: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();

        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        for i in (0..=root.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let out = self.value(Var(i));
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate(&mut params[id.0], g.clone()),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    acc(&mut adj, &needs, a, || {
                        Tensor::from_parts(ta.shape().to_vec(), matmul_bt_raw(g.data(), tb.data(), m, n, k))
                    });
                    acc(&mut adj, &needs, b, || {
                        Tensor::from_parts(tb.shape().to_vec(), matmul_at_raw(ta.data(), g.data(), m, k, n))
                    });
                }
                Op::Add(a, b, kind) => {
                    acc(&mut adj, &needs, b, || reduce_bcast(&g, self.value(*b), *kind));
                    acc(&mut adj, &needs, a, || g.clone());
                }
                Op::Mul(a, b, kind) => {
                    acc(&mut adj, &needs, a, || self.zip_bcast_tensor(&g, *b, *kind, |x, y| x * y));
                    acc(&mut adj, &needs, b, || {
                        let prod = Tensor::from_parts(
                            g.shape().to_vec(),
                            g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect(),
                        );
                        reduce_bcast(&prod, self.value(*b), *kind)
                    });
                }
                Op::Scale(a, c) => acc(&mut adj, &needs, a, || g.map(|x| x * c)),
                Op::AddScalar(a) => acc(&mut adj, &needs, a, || g.clone()),
                Op::Tanh(a) => acc(&mut adj, &needs, a, || zip(&g, out, |gv, y| gv * (1.0 - y * y))),
                Op::Sigmoid(a) => acc(&mut adj, &needs, a, || zip(&g, out, |gv, y| gv * y * (1.0 - y))),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut adj, &needs, a, || zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    acc(&mut adj, &needs, a, || zip(&g, x, |gv, xv| gv / xv));
                }
                Op::MaskedSoftmax(a) => {
                    let n = out.cols();
                    let mut gx = vec![0.0; out.len()];
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gy = &g.data()[r * n..(r + 1) * n];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] = y[j] * (gy[j] - dot);
                        }
                    }
                    acc(&mut adj, &needs, a, || Tensor::from_parts(out.shape().to_vec(), gx));
                }
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        let mut offset = 0;
                        for p in parts {
                            let shape = self.value(*p).shape().to_vec();
                            let len = self.value(*p).len();
                            let slice = g.data()[offset..offset + len].to_vec();
                            offset += len;
                            acc(&mut adj, &needs, p, || Tensor::from_parts(shape, slice));
                        }
                    } else {
                        let rows = out.rows();
                        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
                        let mut pieces: Vec<Vec<f64>> =
                            widths.iter().map(|w| Vec::with_capacity(w * rows)).collect();
                        for r in 0..rows {
                            let mut offset = 0;
                            let grow = g.row(r);
                            for (piece, w) in pieces.iter_mut().zip(&widths) {
                                piece.extend_from_slice(&grow[offset..offset + w]);
                                offset += w;
                            }
                        }
                        for (p, piece) in parts.iter().zip(pieces) {
                            let shape = self.value(*p).shape().to_vec();
                            acc(&mut adj, &needs, p, || Tensor::from_parts(shape, piece));
                        }
                    }
                }
                Op::ReduceSum { x, axis } => {
                    let tx = self.value(*x);
                    let data: Vec<f64> = match (axis, tx.rank()) {
                        (None, _) | (Some(0), 1) => vec![g.item(); tx.len()],
                        (Some(0), _) => {
                            let n = tx.cols();
                            (0..tx.len()).map(|i| g.data()[i % n]).collect()
                        }
                        _ => {
                            let n = tx.cols();
                            (0..tx.len()).map(|i| g.data()[i / n]).collect()
                        }
                    };
                    acc(&mut adj, &needs, x, || Tensor::from_parts(tx.shape().to_vec(), data));
                }
                Op::WeightedSum { items, weights } => {
                    let (ti, tw) = (self.value(*items), self.value(*weights));
                    let d = ti.cols();
                    let mut gi = vec![0.0; ti.len()];
                    let mut gw = vec![0.0; tw.len()];
                    for (r, &w) in tw.data().iter().enumerate() {
                        let row = ti.row(r);
                        let mut dot = 0.0;
                        for j in 0..d {
                            gi[r * d + j] = w * g.data()[j];
                            dot += row[j] * g.data()[j];
                        }
                        gw[r] = dot;
                    }
                    acc(&mut adj, &needs, items, || Tensor::from_parts(ti.shape().to_vec(), gi));
                    acc(&mut adj, &needs, weights, || Tensor::from_parts(tw.shape().to_vec(), gw));
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let tl = self.value(*logits);
                    let c = tl.cols();
                    let scale = g.item() / labels.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        gl[r * c + label] -= 1.0;
                    }
                    gl.iter_mut().for_each(|v| *v *= scale);
                    acc(&mut adj, &needs, logits, || Tensor::from_parts(tl.shape().to_vec(), gl));
                }
                Op::GatherRows { table, ids } => {
                    acc(&mut adj, &needs, table, || {
                        let tt = self.value(*table);
                        let d = tt.cols();
                        let mut gt = vec![0.0; tt.len()];
                        for (r, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                gt[id * d + j] += g.data()[r * d + j];
                            }
                        }
                        Tensor::from_parts(tt.shape().to_vec(), gt)
                    });
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut adj, &needs, x, || Tensor::from_parts(shape, g.data().to_vec()));
                }
                Op::Unfold { x, width } => {
                    let tx = self.value(*x);
                    let d = tx.cols();
                    let span = width * d;
                    let mut gx = vec![0.0; tx.len()];
                    for s in 0..out.rows() {
                        for (k, v) in g.data()[s * span..(s + 1) * span].iter().enumerate() {
                            gx[s * d + k] += v;
                        }
                    }
                    acc(&mut adj, &needs, x, || Tensor::from_parts(tx.shape().to_vec(), gx));
                }
                Op::MaxRows { x, argmax } => {
                    let tx = self.value(*x);
                    let n = tx.cols();
                    let mut gx = vec![0.0; tx.len()];
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * n + j] += g.data()[j];
                    }
                    acc(&mut adj, &needs, x, || Tensor::from_parts(tx.shape().to_vec(), gx));
                }
                Op::SegmentSoftmax { x, segments } => {
                    acc(&mut adj, &needs, x, || {
                        let mut gx = vec![0.0; out.len()];
                        for seg in segments {
                            let y = &out.data()[seg.clone()];
                            let gy = &g.data()[seg.clone()];
                            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                            for (k, j) in seg.clone().enumerate() {
                                gx[j] = y[k] * (gy[k] - dot);
                            }
                        }
                        Tensor::from_parts(out.shape().to_vec(), gx)
                    });
                }
                Op::ScaleRows { items, weights } => {
                    let (ti, tw) = (self.value(*items), self.value(*weights));
                    let d = ti.cols();
                    acc(&mut adj, &needs, items, || {
                        let data = g.data().iter().enumerate().map(|(k, &v)| v * tw.data()[k / d]).collect();
                        Tensor::from_parts(ti.shape().to_vec(), data)
                    });
                    acc(&mut adj, &needs, weights, || {
                        let data = (0..ti.rows())
                            .map(|r| ti.row(r).iter().zip(&g.data()[r * d..(r + 1) * d]).map(|(a, b)| a * b).sum())
                            .collect();
                        Tensor::from_parts(tw.shape().to_vec(), data)
                    });
                }
                Op::SegmentSum { x, segments } => {
                    acc(&mut adj, &needs, x, || {
                        let tx = self.value(*x);
                        let d = tx.cols();
                        let mut gx = vec![0.0; tx.len()];
                        for (s, seg) in segments.iter().enumerate() {
                            for r in seg.clone() {
                                gx[r * d..(r + 1) * d].copy_from_slice(&g.data()[s * d..(s + 1) * d]);
                            }
                        }
                        Tensor::from_parts(tx.shape().to_vec(), gx)
                    });
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { params, nodes: adj })
    }

    fn zip_bcast_tensor(&self, g: &Tensor, b: Var, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let bd = self.value(b).data();
        let data = match kind {
            Bcast::Same => g.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => g.data().iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Row => {
                let n = g.cols();
                g.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % n])).collect()
            }
        };
        Tensor::from_parts(g.shape().to_vec(), data)
    }
}

fn acc(adj: &mut [Option<Tensor>], needs: &[bool], v: &Var, g: impl FnOnce() -> Tensor) {
    if needs[v.0] {
        accumulate(&mut adj[v.0], g());
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param(_) => Vec::new(),
        Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Mul(a, b, _) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Log(a)
        | Op::MaskedSoftmax(a)
        | Op::Reshape(a) => vec![*a],
        Op::Concat { parts, .. } => parts.clone(),
        Op::ReduceSum { x, .. }
        | Op::Unfold { x, .. }
        | Op::MaxRows { x, .. }
        | Op::SegmentSoftmax { x, .. }
        | Op::SegmentSum { x, .. } => vec![*x],
        Op::ScaleRows { items, weights } => vec![*items, *weights],
        Op::WeightedSum { items, weights } => vec![*items, *weights],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::GatherRows { table, .. } => vec![*table],
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn zip(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        g.shape().to_vec(),
        g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

fn reduce_bcast(g: &Tensor, target: &Tensor, kind: Bcast) -> Tensor {
    match kind {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Tensor::from_parts(target.shape().to_vec(), vec![g.sum()]),
        Bcast::Row => {
            let n = g.cols();
            let mut acc = vec![0.0; n];
            for r in 0..g.rows() {
                for (a, v) in acc.iter_mut().zip(g.row(r)) {
                    *a += v;
                }
            }
            Tensor::from_parts(target.shape().to_vec(), acc)
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
