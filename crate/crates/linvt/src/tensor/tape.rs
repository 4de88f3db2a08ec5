//! Reverse-mode tape. Nodes are appended in topological order (parents
//! always precede children); `backward` walks them once in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// A recorded input: parent node (if the input was tracked) plus a snapshot
/// of its forward value for the backward pass.
#[derive(Debug, Clone)]
struct Src {
    node: Option<NodeId>,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Src {
    fn of(t: &Tensor) -> Src {
        Src {
            node: t.node_id(),
            shape: t.shape().to_vec(),
            data: t.data_arc(),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: Src,
        b: Src,
    },
    Transpose {
        a: Src,
    },
    Add {
        a: Src,
        b: Src,
    },
    Sub {
        a: Src,
        b: Src,
    },
    Mul {
        a: Src,
        b: Src,
    },
    Div {
        a: Src,
        b: Src,
    },
    Scale {
        a: Src,
        c: f64,
    },
    AddScalar {
        a: Src,
    },
    Softmax {
        a: Src,
        axis: usize,
        y: Arc<Vec<f64>>,
    },
    Gelu {
        a: Src,
    },
    Exp {
        y: Arc<Vec<f64>>,
        a: Src,
    },
    Log {
        a: Src,
    },
    Sqrt {
        y: Arc<Vec<f64>>,
        a: Src,
    },
    Sum {
        a: Src,
    },
    MeanPool {
        a: Src,
        window: usize,
        stride: usize,
    },
    GatherRows {
        a: Src,
        indices: Arc<Vec<usize>>,
    },
    ConcatRows {
        parts: Vec<Src>,
    },
    ConcatCols {
        parts: Vec<Src>,
    },
    SliceRows {
        a: Src,
        start: usize,
    },
    SliceCols {
        a: Src,
        start: usize,
    },
    StackScalars {
        parts: Vec<Src>,
    },
}

/// Append-only record of tracked operations plus, after [`Tape::backward`],
/// one gradient buffer per reached node.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register `t` as a gradient-tracked leaf and return the tracked handle.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let id = self.push(Op::Leaf);
        t.detached().with_node(id)
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// Wrap freshly computed data, recording `op` only if some input was
    /// tracked.
    fn emit(&mut self, shape: Vec<usize>, data: Vec<f64>, tracked: bool, op: Op) -> Tensor {
        let t = Tensor::new(shape, data).expect("emit: shape/data agree");
        if tracked {
            let id = self.push(op);
            t.with_node(id)
        } else {
            t
        }
    }

    /// Gradient of the last `backward` root with respect to `t`, if `t` is a
    /// tracked node that was reached.
    pub fn grad(&self, t: &Tensor) -> Option<Tensor> {
        let id = t.node_id()?;
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::new(t.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    // ---- operations ------------------------------------------------------

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.expect_rank(2, "matmul")?;
        b.expect_rank(2, "matmul")?;
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = matmul_data(a.data(), b.data(), m, k, n);
        Ok(self.emit(
            vec![m, n],
            out,
            a.node_id().is_some() || b.node_id().is_some(),
            Op::Matmul {
                a: Src::of(a),
                b: Src::of(b),
            },
        ))
    }

    pub fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        a.expect_rank(2, "transpose")?;
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let src = a.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.emit(
            vec![n, m],
            out,
            a.node_id().is_some(),
            Op::Transpose { a: Src::of(a) },
        ))
    }

    fn zip_elementwise(
        &mut self,
        op_name: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some() || b.node_id().is_some(),
            op,
        ))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let op = Op::Add {
            a: Src::of(a),
            b: Src::of(b),
        };
        self.zip_elementwise("add", a, b, |x, y| x + y, op)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let op = Op::Sub {
            a: Src::of(a),
            b: Src::of(b),
        };
        self.zip_elementwise("sub", a, b, |x, y| x - y, op)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let op = Op::Mul {
            a: Src::of(a),
            b: Src::of(b),
        };
        self.zip_elementwise("mul", a, b, |x, y| x * y, op)
    }

    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let op = Op::Div {
            a: Src::of(a),
            b: Src::of(b),
        };
        self.zip_elementwise("div", a, b, |x, y| x / y, op)
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        let out = a.data().iter().map(|&x| x * c).collect();
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::Scale { a: Src::of(a), c },
        )
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        let out = a.data().iter().map(|&x| x + c).collect();
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::AddScalar { a: Src::of(a) },
        )
    }

    /// Numerically stable softmax along `axis`: the slice max is subtracted
    /// before exponentiation. Non-finite input is rejected.
    pub fn softmax(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(Error::RankMismatch {
                op: "softmax axis",
                expected: axis + 1,
                shape: a.shape().to_vec(),
            });
        }
        if !a.is_finite() {
            return Err(Error::NumericInput { op: "softmax" });
        }
        let shape = a.shape();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = a.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let y = Arc::new(out.clone());
        Ok(self.emit(
            shape.to_vec(),
            out,
            a.node_id().is_some(),
            Op::Softmax {
                a: Src::of(a),
                axis,
                y,
            },
        ))
    }

    pub fn gelu(&mut self, a: &Tensor) -> Tensor {
        let out = a.data().iter().map(|&x| gelu_fwd(x)).collect();
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::Gelu { a: Src::of(a) },
        )
    }

    pub fn exp(&mut self, a: &Tensor) -> Tensor {
        let out: Vec<f64> = a.data().iter().map(|&x| x.exp()).collect();
        let y = Arc::new(out.clone());
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::Exp { y, a: Src::of(a) },
        )
    }

    pub fn log(&mut self, a: &Tensor) -> Tensor {
        let out = a.data().iter().map(|&x| x.ln()).collect();
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::Log { a: Src::of(a) },
        )
    }

    pub fn sqrt(&mut self, a: &Tensor) -> Tensor {
        let out: Vec<f64> = a.data().iter().map(|&x| x.sqrt()).collect();
        let y = Arc::new(out.clone());
        self.emit(
            a.shape().to_vec(),
            out,
            a.node_id().is_some(),
            Op::Sqrt { y, a: Src::of(a) },
        )
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum(&mut self, a: &Tensor) -> Tensor {
        let s: f64 = a.data().iter().sum();
        self.emit(
            vec![1],
            vec![s],
            a.node_id().is_some(),
            Op::Sum { a: Src::of(a) },
        )
    }

    /// Shifted-window average pooling over the rows of an `[n, c]` tensor.
    /// Output row `j` is the mean of input rows `j*stride .. j*stride+window`;
    /// the output has `floor((n - window) / stride) + 1` rows.
    pub fn mean_pool(&mut self, a: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
        a.expect_rank(2, "mean_pool")?;
        let (n, c) = (a.shape()[0], a.shape()[1]);
        if window == 0 || window > n || stride == 0 {
            return Err(Error::Window {
                window,
                stride,
                len: n,
            });
        }
        let m = (n - window) / stride + 1;
        let src = a.data();
        let mut out = vec![0.0; m * c];
        let inv = 1.0 / window as f64;
        for j in 0..m {
            for r in 0..window {
                let row = j * stride + r;
                for col in 0..c {
                    out[j * c + col] += src[row * c + col];
                }
            }
            for col in 0..c {
                out[j * c + col] *= inv;
            }
        }
        Ok(self.emit(
            vec![m, c],
            out,
            a.node_id().is_some(),
            Op::MeanPool {
                a: Src::of(a),
                window,
                stride,
            },
        ))
    }

    /// Copy rows of an `[n, c]` tensor at the given indices, in order.
    pub fn gather_rows(&mut self, a: &Tensor, indices: &[usize]) -> Result<Tensor> {
        a.expect_rank(2, "gather_rows")?;
        let (n, c) = (a.shape()[0], a.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Selection { k: bad, n });
        }
        let src = a.data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.emit(
            vec![indices.len(), c],
            out,
            a.node_id().is_some(),
            Op::GatherRows {
                a: Src::of(a),
                indices: Arc::new(indices.to_vec()),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let c = parts[0].shape().get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for p in parts {
            p.expect_rank(2, "concat_rows")?;
            if p.shape()[1] != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
        }
        let mut out = Vec::with_capacity(rows * c);
        for p in parts {
            out.extend_from_slice(p.data());
        }
        let tracked = parts.iter().any(|p| p.node_id().is_some());
        Ok(self.emit(
            vec![rows, c],
            out,
            tracked,
            Op::ConcatRows {
                parts: parts.iter().map(|p| Src::of(p)).collect(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let n = parts[0].shape()[0];
        let mut cols = 0;
        for p in parts {
            p.expect_rank(2, "concat_cols")?;
            if p.shape()[0] != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            cols += p.shape()[1];
        }
        let mut out = vec![0.0; n * cols];
        let mut offset = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = p.data();
            for i in 0..n {
                out[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let tracked = parts.iter().any(|p| p.node_id().is_some());
        Ok(self.emit(
            vec![n, cols],
            out,
            tracked,
            Op::ConcatCols {
                parts: parts.iter().map(|p| Src::of(p)).collect(),
            },
        ))
    }

    pub fn slice_rows(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        a.expect_rank(2, "slice_rows")?;
        let (n, c) = (a.shape()[0], a.shape()[1]);
        if start + len > n || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: a.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = a.data()[start * c..(start + len) * c].to_vec();
        Ok(self.emit(
            vec![len, c],
            out,
            a.node_id().is_some(),
            Op::SliceRows {
                a: Src::of(a),
                start,
            },
        ))
    }

    pub fn slice_cols(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        a.expect_rank(2, "slice_cols")?;
        let (n, c) = (a.shape()[0], a.shape()[1]);
        if start + len > c || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: a.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let src = a.data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.emit(
            vec![n, len],
            out,
            a.node_id().is_some(),
            Op::SliceCols {
                a: Src::of(a),
                start,
            },
        ))
    }

    /// Stack single-element tensors into a shape-`[k]` vector.
    pub fn stack_scalars(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "stack_scalars: empty input");
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            if p.numel() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "stack_scalars",
                    lhs: p.shape().to_vec(),
                    rhs: vec![1],
                });
            }
            out.push(p.data()[0]);
        }
        let tracked = parts.iter().any(|p| p.node_id().is_some());
        Ok(self.emit(
            vec![parts.len()],
            out,
            tracked,
            Op::StackScalars {
                parts: parts.iter().map(|p| Src::of(p)).collect(),
            },
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Populate gradient buffers for every node reachable from `root`, which
    /// must be a single-element tensor recorded on this tape.
    pub fn backward(&mut self, root: &Tensor) -> Result<()> {
        let root_id = root.node_id().ok_or(Error::BackwardDetached)?;
        if root_id.0 >= self.nodes.len() {
            return Err(Error::BackwardDetached);
        }
        if root.numel() != 1 {
            return Err(Error::BackwardNonScalar {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root_id.0] = Some(vec![1.0]);

        for i in (0..=root_id.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], src: &Src, add: impl Fn(&mut [f64])) {
            if let Some(NodeId(p)) = src.node {
                let buf = grads[p].get_or_insert_with(|| vec![0.0; src.data.len()]);
                add(buf);
            }
        }

        match &self.nodes[i] {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                acc(grads, a, |buf| {
                    // dA += G · Bᵀ
                    for r in 0..m {
                        for j in 0..n {
                            let gv = g[r * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                buf[r * k + kk] += gv * b.data[kk * n + j];
                            }
                        }
                    }
                });
                acc(grads, b, |buf| {
                    // dB += Aᵀ · G
                    for kk in 0..k {
                        for r in 0..m {
                            let av = a.data[r * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                buf[kk * n + j] += av * g[r * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose { a } => {
                let (m, n) = (a.shape[0], a.shape[1]);
                acc(grads, a, |buf| {
                    for r in 0..m {
                        for j in 0..n {
                            buf[r * n + j] += g[j * m + r];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(grads, a, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                });
                acc(grads, b, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc(grads, a, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                });
                acc(grads, b, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                acc(grads, a, |buf| {
                    for ((o, &gv), &bv) in buf.iter_mut().zip(g).zip(b.data.iter()) {
                        *o += gv * bv;
                    }
                });
                acc(grads, b, |buf| {
                    for ((o, &gv), &av) in buf.iter_mut().zip(g).zip(a.data.iter()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Div { a, b } => {
                acc(grads, a, |buf| {
                    for ((o, &gv), &bv) in buf.iter_mut().zip(g).zip(b.data.iter()) {
                        *o += gv / bv;
                    }
                });
                acc(grads, b, |buf| {
                    for (idx, o) in buf.iter_mut().enumerate() {
                        let bv = b.data[idx];
                        *o -= g[idx] * a.data[idx] / (bv * bv);
                    }
                });
            }
            Op::Scale { a, c } => {
                acc(grads, a, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv * c;
                    }
                });
            }
            Op::AddScalar { a } => {
                acc(grads, a, |buf| {
                    for (o, &gv) in buf.iter_mut().zip(g) {
                        *o += gv;
                    }
                });
            }
            Op::Softmax { a, axis, y } => {
                let shape = &a.shape;
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                acc(grads, a, |buf| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let mut dot = 0.0;
                            for j in 0..len {
                                let ix = base + j * inner;
                                dot += g[ix] * y[ix];
                            }
                            for j in 0..len {
                                let ix = base + j * inner;
                                buf[ix] += y[ix] * (g[ix] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                acc(grads, a, |buf| {
                    for (idx, o) in buf.iter_mut().enumerate() {
                        *o += g[idx] * gelu_grad(a.data[idx]);
                    }
                });
            }
            Op::Exp { y, a } => {
                acc(grads, a, |buf| {
                    for (idx, o) in buf.iter_mut().enumerate() {
                        *o += g[idx] * y[idx];
                    }
                });
            }
            Op::Log { a } => {
                acc(grads, a, |buf| {
                    for (idx, o) in buf.iter_mut().enumerate() {
                        *o += g[idx] / a.data[idx];
                    }
                });
            }
            Op::Sqrt { y, a } => {
                acc(grads, a, |buf| {
                    for (idx, o) in buf.iter_mut().enumerate() {
                        *o += g[idx] / (2.0 * y[idx]);
                    }
                });
            }
            Op::Sum { a } => {
                acc(grads, a, |buf| {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                });
            }
            Op::MeanPool { a, window, stride } => {
                let c = a.shape[1];
                let m = (a.shape[0] - window) / stride + 1;
                let inv = 1.0 / *window as f64;
                acc(grads, a, |buf| {
                    for j in 0..m {
                        for r in 0..*window {
                            let row = j * stride + r;
                            for col in 0..c {
                                buf[row * c + col] += g[j * c + col] * inv;
                            }
                        }
                    }
                });
            }
            Op::GatherRows { a, indices } => {
                let c = a.shape[1];
                acc(grads, a, |buf| {
                    for (j, &src_row) in indices.iter().enumerate() {
                        for col in 0..c {
                            buf[src_row * c + col] += g[j * c + col];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let numel = p.data.len();
                    acc(grads, p, |buf| {
                        for (o, &gv) in buf.iter_mut().zip(&g[offset..offset + numel]) {
                            *o += gv;
                        }
                    });
                    offset += numel;
                }
            }
            Op::ConcatCols { parts } => {
                let n = parts[0].shape[0];
                let total: usize = parts.iter().map(|p| p.shape[1]).sum();
                let mut offset = 0;
                for p in parts {
                    let pc = p.shape[1];
                    acc(grads, p, |buf| {
                        for r in 0..n {
                            for col in 0..pc {
                                buf[r * pc + col] += g[r * total + offset + col];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceRows { a, start } => {
                let c = a.shape[1];
                acc(grads, a, |buf| {
                    for (idx, &gv) in g.iter().enumerate() {
                        buf[start * c + idx] += gv;
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let c = a.shape[1];
                let len = g.len() / a.shape[0];
                acc(grads, a, |buf| {
                    for r in 0..a.shape[0] {
                        for col in 0..len {
                            buf[r * c + start + col] += g[r * len + col];
                        }
                    }
                });
            }
            Op::StackScalars { parts } => {
                for (j, p) in parts.iter().enumerate() {
                    acc(grads, p, |buf| {
                        buf[0] += g[j];
                    });
                }
            }
        }
    }
}

pub(crate) fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn gelu_fwd(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const B: f64 = 0.044_715;
    0.5 * x * (1.0 + (A * (x + B * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4;
    const B: f64 = 0.044_715;
    let u = A * (x + B * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * A * (1.0 + 3.0 * B * x * x)
}
