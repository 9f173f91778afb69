//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! The tape is define-by-run: every operation on a tape-attached tensor
//! records a node holding whatever the backward pass needs. Tensors without
//! a tape attachment are plain immutable values; the same operations work on
//! them and simply skip recording, which lets forward code serve both
//! training and inference.
//!
//! Conventions, fixed so tests are deterministic:
//!
//! * data is row-major; broadcasting aligns trailing dimensions
//!   (an operand dimension must equal the result dimension or be 1);
//! * max-reduction routes its gradient to a single argmax element, ties
//!   broken by the lowest flat index;
//! * every operation validates that its output is finite and returns an
//!   error otherwise — NaN/Inf never propagates silently;
//! * a tape is confined to one thread and is cleared by `backward`.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::{Error, Result};

/// Default step for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Array: plain values (parameters, gradients, dataset payloads)
// ---------------------------------------------------------------------------

/// A plain shape + row-major data pair with no tape attachment.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "array",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers
// ---------------------------------------------------------------------------

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ad = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let bd = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ad == bd {
            ad
        } else if ad == 1 {
            bd
        } else if bd == 1 {
            ad
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `in_shape` viewed through `out_shape` (0 on broadcast axes).
fn broadcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let offset = out_shape.len() - in_shape.len();
    let in_strides = strides_for(in_shape);
    let mut s = vec![0; out_shape.len()];
    for i in 0..in_shape.len() {
        s[offset + i] = if in_shape[i] == 1 && out_shape[offset + i] != 1 {
            0
        } else {
            in_strides[i]
        };
    }
    s
}

fn ew_binary(
    op: &'static str,
    a: &[f64],
    ashape: &[usize],
    b: &[f64],
    bshape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if ashape == bshape {
        let out = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        return Ok((ashape.to_vec(), out));
    }
    let oshape = broadcast_shape(op, ashape, bshape)?;
    let count: usize = oshape.iter().product();
    let sa = broadcast_strides(ashape, &oshape);
    let sb = broadcast_strides(bshape, &oshape);
    let rank = oshape.len();
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; rank];
    let (mut offa, mut offb) = (0usize, 0usize);
    for _ in 0..count {
        out.push(f(a[offa], b[offb]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            offa += sa[d];
            offb += sb[d];
            if idx[d] < oshape[d] {
                break;
            }
            idx[d] = 0;
            offa -= sa[d] * oshape[d];
            offb -= sb[d] * oshape[d];
        }
    }
    Ok((oshape, out))
}

/// Sum `grad` (of shape `gshape`) down to `target` under trailing-aligned
/// broadcast semantics.
fn reduce_grad(grad: &[f64], gshape: &[usize], target: &[usize]) -> Vec<f64> {
    if gshape == target {
        return grad.to_vec();
    }
    let count: usize = gshape.iter().product();
    let st = broadcast_strides(target, gshape);
    let rank = gshape.len();
    let tlen: usize = target.iter().product();
    let mut out = vec![0.0; tlen];
    let mut idx = vec![0usize; rank];
    let mut offt = 0usize;
    for g in grad.iter().take(count) {
        out[offt] += *g;
        for d in (0..rank).rev() {
            idx[d] += 1;
            offt += st[d];
            if idx[d] < gshape[d] {
                break;
            }
            idx[d] = 0;
            offt -= st[d] * gshape[d];
        }
    }
    out
}

fn axis_decomp(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Recorded per-operation backward data. Operand node ids are `None` when
/// that operand was a constant (no gradient flows there).
enum BackOp {
    Leaf {
        shape: Vec<usize>,
    },
    Add {
        a: Option<usize>,
        b: Option<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
    },
    Mul {
        a: Option<usize>,
        b: Option<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
        av: Arc<Vec<f64>>,
        bv: Arc<Vec<f64>>,
    },
    Div {
        a: Option<usize>,
        b: Option<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
        av: Arc<Vec<f64>>,
        bv: Arc<Vec<f64>>,
    },
    Neg {
        a: usize,
    },
    AddConst {
        a: usize,
    },
    MulConst {
        a: usize,
        c: f64,
    },
    Exp {
        a: usize,
        out: Arc<Vec<f64>>,
    },
    Log {
        a: usize,
        av: Arc<Vec<f64>>,
    },
    PowScalar {
        a: usize,
        av: Arc<Vec<f64>>,
        exponent: f64,
    },
    Relu {
        a: usize,
        av: Arc<Vec<f64>>,
    },
    Tanh {
        a: usize,
        out: Arc<Vec<f64>>,
    },
    Sigmoid {
        a: usize,
        out: Arc<Vec<f64>>,
    },
    Sin {
        a: usize,
        av: Arc<Vec<f64>>,
    },
    Cos {
        a: usize,
        av: Arc<Vec<f64>>,
    },
    Sqrt {
        a: usize,
        out: Arc<Vec<f64>>,
    },
    Matmul {
        a: Option<usize>,
        b: Option<usize>,
        av: Arc<Vec<f64>>,
        bv: Arc<Vec<f64>>,
        n: usize,
        k: usize,
        m: usize,
    },
    Transpose {
        a: usize,
        n: usize,
        m: usize,
    },
    Softmax {
        a: usize,
        out: Arc<Vec<f64>>,
        shape: Vec<usize>,
        axis: usize,
    },
    Reduce {
        a: usize,
        in_shape: Vec<usize>,
        axis: Option<usize>,
        kind: ReduceKind,
        /// flat input index receiving the gradient, per output element
        /// (max only).
        argmax: Vec<usize>,
    },
    Reshape {
        a: usize,
    },
    Narrow {
        a: usize,
        in_shape: Vec<usize>,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Option<usize>>,
        shapes: Vec<Vec<usize>>,
        axis: usize,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum ReduceKind {
    Sum,
    Mean,
    Max,
}

struct Node {
    op: BackOp,
}

struct TapeInner {
    epoch: u64,
    nodes: Vec<Node>,
}

/// A recording of differentiable operations. One tape per training step;
/// `backward` consumes the recording and clears it.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                epoch: 0,
                nodes: Vec::new(),
            })),
        }
    }

    fn push(&self, op: BackOp) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op });
        inner.nodes.len() - 1
    }

    fn epoch(&self) -> u64 {
        self.inner.borrow().epoch
    }

    /// Create a differentiable leaf holding `value`.
    pub fn leaf(&self, value: Array) -> Result<Tensor> {
        check_finite("leaf", value.data())?;
        let node = self.push(BackOp::Leaf {
            shape: value.shape.clone(),
        });
        Ok(Tensor {
            shape: value.shape,
            data: Arc::new(value.data),
            trace: Some(Trace {
                tape: self.clone(),
                epoch: self.epoch(),
                node,
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse pass from a scalar loss. Returns gradients for every leaf the
    /// loss depends on and clears the tape; tensors recorded on it become
    /// stale.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let tr = loss.trace.as_ref().ok_or(Error::DetachedTape)?;
        if !Rc::ptr_eq(&tr.tape.inner, &self.inner) || tr.epoch != self.epoch() {
            return Err(Error::DetachedTape);
        }
        if loss.data.len() != 1 {
            return Err(Error::NotScalar(loss.shape.clone()));
        }
        let mut inner = self.inner.borrow_mut();
        let n = inner.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        adj.resize_with(n, || None);
        adj[tr.node] = Some(vec![1.0]);

        for i in (0..=tr.node).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &inner.nodes[i].op {
                BackOp::Leaf { .. } => adj[i] = Some(g),
                BackOp::Add { a, b, sa, sb } => {
                    let oshape = broadcast_shape("add", sa, sb).expect("recorded shapes");
                    if let Some(a) = *a {
                        acc(&mut adj, a, reduce_grad(&g, &oshape, sa));
                    }
                    if let Some(b) = *b {
                        acc(&mut adj, b, reduce_grad(&g, &oshape, sb));
                    }
                }
                BackOp::Sub { a, b, sa, sb } => {
                    let oshape = broadcast_shape("sub", sa, sb).expect("recorded shapes");
                    if let Some(a) = *a {
                        acc(&mut adj, a, reduce_grad(&g, &oshape, sa));
                    }
                    if let Some(b) = *b {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        acc(&mut adj, b, reduce_grad(&neg, &oshape, sb));
                    }
                }
                BackOp::Mul {
                    a,
                    b,
                    sa,
                    sb,
                    av,
                    bv,
                } => {
                    let oshape = broadcast_shape("mul", sa, sb).expect("recorded shapes");
                    if let Some(a) = *a {
                        let (_, ga) = ew_binary("mul", &g, &oshape, bv, sb, |x, y| x * y)
                            .expect("recorded shapes");
                        acc(&mut adj, a, reduce_grad(&ga, &oshape, sa));
                    }
                    if let Some(b) = *b {
                        let (_, gb) = ew_binary("mul", &g, &oshape, av, sa, |x, y| x * y)
                            .expect("recorded shapes");
                        acc(&mut adj, b, reduce_grad(&gb, &oshape, sb));
                    }
                }
                BackOp::Div {
                    a,
                    b,
                    sa,
                    sb,
                    av,
                    bv,
                } => {
                    let oshape = broadcast_shape("div", sa, sb).expect("recorded shapes");
                    if let Some(a) = *a {
                        let (_, ga) = ew_binary("div", &g, &oshape, bv, sb, |x, y| x / y)
                            .expect("recorded shapes");
                        acc(&mut adj, a, reduce_grad(&ga, &oshape, sa));
                    }
                    if let Some(b) = *b {
                        // d(a/b)/db = -a / b^2
                        let (_, num) = ew_binary("div", &g, &oshape, av, sa, |x, y| x * y)
                            .expect("recorded shapes");
                        let (_, gb) = ew_binary("div", &num, &oshape, bv, sb, |x, y| -x / (y * y))
                            .expect("recorded shapes");
                        acc(&mut adj, b, reduce_grad(&gb, &oshape, sb));
                    }
                }
                BackOp::Neg { a } => {
                    acc(&mut adj, *a, g.iter().map(|v| -v).collect());
                }
                BackOp::AddConst { a } => acc(&mut adj, *a, g),
                BackOp::MulConst { a, c } => {
                    let c = *c;
                    acc(&mut adj, *a, g.iter().map(|v| v * c).collect());
                }
                BackOp::Exp { a, out } => {
                    acc(&mut adj, *a, g.iter().zip(out.iter()).map(|(gv, y)| gv * y).collect());
                }
                BackOp::Log { a, av } => {
                    acc(&mut adj, *a, g.iter().zip(av.iter()).map(|(gv, x)| gv / x).collect());
                }
                BackOp::PowScalar { a, av, exponent } => {
                    let e = *exponent;
                    acc(
                        &mut adj,
                        *a,
                        g.iter()
                            .zip(av.iter())
                            .map(|(gv, x)| gv * e * x.powf(e - 1.0))
                            .collect(),
                    );
                }
                BackOp::Relu { a, av } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter()
                            .zip(av.iter())
                            .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    );
                }
                BackOp::Tanh { a, out } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter()
                            .zip(out.iter())
                            .map(|(gv, y)| gv * (1.0 - y * y))
                            .collect(),
                    );
                }
                BackOp::Sigmoid { a, out } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter()
                            .zip(out.iter())
                            .map(|(gv, y)| gv * y * (1.0 - y))
                            .collect(),
                    );
                }
                BackOp::Sin { a, av } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter().zip(av.iter()).map(|(gv, x)| gv * x.cos()).collect(),
                    );
                }
                BackOp::Cos { a, av } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter().zip(av.iter()).map(|(gv, x)| -gv * x.sin()).collect(),
                    );
                }
                BackOp::Sqrt { a, out } => {
                    acc(
                        &mut adj,
                        *a,
                        g.iter()
                            .zip(out.iter())
                            .map(|(gv, y)| gv / (2.0 * y))
                            .collect(),
                    );
                }
                BackOp::Matmul {
                    a,
                    b,
                    av,
                    bv,
                    n,
                    k,
                    m,
                } => {
                    let (n, k, m) = (*n, *k, *m);
                    if let Some(a) = *a {
                        // dA[i,p] = sum_j g[i,j] * B[p,j]
                        let mut da = vec![0.0; n * k];
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let darow = &mut da[i * k..(i + 1) * k];
                            for (p, dap) in darow.iter_mut().enumerate() {
                                let brow = &bv[p * m..(p + 1) * m];
                                let mut s = 0.0;
                                for j in 0..m {
                                    s += grow[j] * brow[j];
                                }
                                *dap = s;
                            }
                        }
                        acc(&mut adj, a, da);
                    }
                    if let Some(b) = *b {
                        // dB[p,j] = sum_i A[i,p] * g[i,j]
                        let mut db = vec![0.0; k * m];
                        for i in 0..n {
                            let arow = &av[i * k..(i + 1) * k];
                            let grow = &g[i * m..(i + 1) * m];
                            for (p, &ap) in arow.iter().enumerate() {
                                if ap != 0.0 {
                                    let dbrow = &mut db[p * m..(p + 1) * m];
                                    for j in 0..m {
                                        dbrow[j] += ap * grow[j];
                                    }
                                }
                            }
                        }
                        acc(&mut adj, b, db);
                    }
                }
                BackOp::Transpose { a, n, m } => {
                    let (n, m) = (*n, *m);
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            da[i * m + j] = g[j * n + i];
                        }
                    }
                    acc(&mut adj, *a, da);
                }
                BackOp::Softmax {
                    a,
                    out,
                    shape,
                    axis,
                } => {
                    let (outer, len, inner) = axis_decomp(shape, *axis);
                    let mut da = vec![0.0; out.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = 0.0;
                            for j in 0..len {
                                let off = base + j * inner;
                                dot += g[off] * out[off];
                            }
                            for j in 0..len {
                                let off = base + j * inner;
                                da[off] = out[off] * (g[off] - dot);
                            }
                        }
                    }
                    acc(&mut adj, *a, da);
                }
                BackOp::Reduce {
                    a,
                    in_shape,
                    axis,
                    kind,
                    argmax,
                } => {
                    let in_len: usize = in_shape.iter().product();
                    let mut da = vec![0.0; in_len];
                    match (kind, axis) {
                        (ReduceKind::Sum, None) => da.iter_mut().for_each(|v| *v = g[0]),
                        (ReduceKind::Mean, None) => {
                            let s = g[0] / in_len as f64;
                            da.iter_mut().for_each(|v| *v = s);
                        }
                        (ReduceKind::Max, None) => da[argmax[0]] = g[0],
                        (ReduceKind::Sum, Some(ax)) | (ReduceKind::Mean, Some(ax)) => {
                            let (outer, len, inner) = axis_decomp(in_shape, *ax);
                            let scale = if *kind == ReduceKind::Mean {
                                1.0 / len as f64
                            } else {
                                1.0
                            };
                            for o in 0..outer {
                                for j in 0..len {
                                    for i in 0..inner {
                                        da[(o * len + j) * inner + i] =
                                            g[o * inner + i] * scale;
                                    }
                                }
                            }
                        }
                        (ReduceKind::Max, Some(_)) => {
                            for (out_idx, &in_idx) in argmax.iter().enumerate() {
                                da[in_idx] += g[out_idx];
                            }
                        }
                    }
                    acc(&mut adj, *a, da);
                }
                BackOp::Reshape { a } => acc(&mut adj, *a, g),
                BackOp::Narrow {
                    a,
                    in_shape,
                    axis,
                    start,
                } => {
                    let (outer, alen, inner) = axis_decomp(in_shape, *axis);
                    let out_len = g.len() / (outer * inner);
                    let mut da = vec![0.0; in_shape.iter().product()];
                    for o in 0..outer {
                        for j in 0..out_len {
                            let src = (o * out_len + j) * inner;
                            let dst = (o * alen + start + j) * inner;
                            da[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                        }
                    }
                    acc(&mut adj, *a, da);
                }
                BackOp::Concat {
                    parts,
                    shapes,
                    axis,
                } => {
                    let out_axis: usize = shapes.iter().map(|s| s[*axis]).sum();
                    let (outer, _, inner) = {
                        let mut s0 = shapes[0].clone();
                        s0[*axis] = out_axis;
                        axis_decomp(&s0, *axis)
                    };
                    let mut offset = 0;
                    for (part, shape) in parts.iter().zip(shapes) {
                        let plen = shape[*axis];
                        if let Some(p) = *part {
                            let mut dp = vec![0.0; shape.iter().product()];
                            for o in 0..outer {
                                for j in 0..plen {
                                    let src = (o * out_axis + offset + j) * inner;
                                    let dst = (o * plen + j) * inner;
                                    dp[dst..dst + inner]
                                        .copy_from_slice(&g[src..src + inner]);
                                }
                            }
                            acc(&mut adj, p, dp);
                        }
                        offset += plen;
                    }
                }
            }
        }

        let mut grads: Vec<Option<Array>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        for i in 0..n {
            if let BackOp::Leaf { shape } = &inner.nodes[i].op {
                if let Some(g) = adj[i].take() {
                    check_finite("backward", &g)?;
                    grads[i] = Some(Array {
                        shape: shape.clone(),
                        data: g,
                    });
                }
            }
        }
        let epoch = inner.epoch;
        inner.nodes.clear();
        inner.epoch += 1;
        Ok(Gradients { epoch, grads })
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], idx: usize, contrib: Vec<f64>) {
    match &mut adj[idx] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

/// Gradient map produced by [`Tape::backward`], keyed by leaf tensors.
pub struct Gradients {
    epoch: u64,
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `leaf`, or `None` when the loss
    /// did not depend on it.
    pub fn get(&self, leaf: &Tensor) -> Option<&Array> {
        let tr = leaf.trace.as_ref()?;
        if tr.epoch != self.epoch {
            return None;
        }
        self.grads.get(tr.node)?.as_ref()
    }

    pub fn take(&mut self, leaf: &Tensor) -> Option<Array> {
        let tr = leaf.trace.as_ref()?;
        if tr.epoch != self.epoch {
            return None;
        }
        self.grads.get_mut(tr.node)?.take()
    }
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Trace {
    tape: Tape,
    epoch: u64,
    node: usize,
}

impl Trace {
    fn live(&self) -> Result<()> {
        if self.epoch == self.tape.epoch() {
            Ok(())
        } else {
            Err(Error::DetachedTape)
        }
    }
}

/// A dense multi-dimensional array of f64, optionally attached to a tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    trace: Option<Trace>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

impl Tensor {
    pub fn from_array(a: Array) -> Self {
        Self {
            shape: a.shape,
            data: Arc::new(a.data),
            trace: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Array::new(shape.to_vec(), data).map(Self::from_array)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_array(Array::scalar(v))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_array(Array::zeros(shape))
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; len]),
            trace: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.trace.is_some()
    }

    pub fn to_array(&self) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.to_vec(),
        }
    }

    /// Value copy with no tape attachment.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            trace: None,
        }
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    fn unary(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        mk: impl FnOnce(usize, Arc<Vec<f64>>) -> BackOp,
    ) -> Result<Tensor> {
        check_finite(op, &data)?;
        let data = Arc::new(data);
        match &self.trace {
            None => Ok(Tensor {
                shape,
                data,
                trace: None,
            }),
            Some(tr) => {
                tr.live()?;
                let node = tr.tape.push(mk(tr.node, data.clone()));
                Ok(Tensor {
                    shape,
                    data,
                    trace: Some(Trace {
                        tape: tr.tape.clone(),
                        epoch: tr.epoch,
                        node,
                    }),
                })
            }
        }
    }

    fn joint_trace(a: &Tensor, b: &Tensor) -> Result<Option<(Tape, u64, Option<usize>, Option<usize>)>> {
        match (&a.trace, &b.trace) {
            (None, None) => Ok(None),
            (Some(ta), None) => {
                ta.live()?;
                Ok(Some((ta.tape.clone(), ta.epoch, Some(ta.node), None)))
            }
            (None, Some(tb)) => {
                tb.live()?;
                Ok(Some((tb.tape.clone(), tb.epoch, None, Some(tb.node))))
            }
            (Some(ta), Some(tb)) => {
                ta.live()?;
                tb.live()?;
                if !Rc::ptr_eq(&ta.tape.inner, &tb.tape.inner) {
                    return Err(Error::Incompatible(
                        "operands recorded on different tapes".into(),
                    ));
                }
                Ok(Some((ta.tape.clone(), ta.epoch, Some(ta.node), Some(tb.node))))
            }
        }
    }

    fn binary(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Option<usize>, Option<usize>) -> BackOp,
    ) -> Result<Tensor> {
        let (shape, data) = ew_binary(op, &self.data, &self.shape, &rhs.data, &rhs.shape, f)?;
        check_finite(op, &data)?;
        let data = Arc::new(data);
        match Self::joint_trace(self, rhs)? {
            None => Ok(Tensor {
                shape,
                data,
                trace: None,
            }),
            Some((tape, epoch, na, nb)) => {
                let node = tape.push(mk(na, nb));
                Ok(Tensor {
                    shape,
                    data,
                    trace: Some(Trace { tape, epoch, node }),
                })
            }
        }
    }

    // -- elementwise binary ------------------------------------------------

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape.clone(), rhs.shape.clone());
        self.binary(rhs, "add", |x, y| x + y, |a, b| BackOp::Add { a, b, sa, sb })
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape.clone(), rhs.shape.clone());
        self.binary(rhs, "sub", |x, y| x - y, |a, b| BackOp::Sub { a, b, sa, sb })
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape.clone(), rhs.shape.clone());
        let (av, bv) = (self.data.clone(), rhs.data.clone());
        self.binary(
            rhs,
            "mul",
            |x, y| x * y,
            |a, b| BackOp::Mul { a, b, sa, sb, av, bv },
        )
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        if rhs.data.iter().any(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let (sa, sb) = (self.shape.clone(), rhs.shape.clone());
        let (av, bv) = (self.data.clone(), rhs.data.clone());
        self.binary(
            rhs,
            "div",
            |x, y| x / y,
            |a, b| BackOp::Div { a, b, sa, sb, av, bv },
        )
    }

    // -- elementwise unary -------------------------------------------------

    pub fn neg(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| -v).collect();
        self.unary("neg", self.shape.clone(), data, |a, _| BackOp::Neg { a })
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v + c).collect();
        self.unary("add_scalar", self.shape.clone(), data, |a, _| BackOp::AddConst { a })
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * c).collect();
        self.unary("mul_scalar", self.shape.clone(), data, |a, _| BackOp::MulConst { a, c })
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.exp()).collect();
        self.unary("exp", self.shape.clone(), data, |a, out| BackOp::Exp { a, out })
    }

    pub fn log(&self) -> Result<Tensor> {
        if self.data.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: "log of non-positive value".into(),
            });
        }
        let av = self.data.clone();
        let data = self.data.iter().map(|v| v.ln()).collect();
        self.unary("log", self.shape.clone(), data, |a, _| BackOp::Log { a, av })
    }

    pub fn powf(&self, exponent: f64) -> Result<Tensor> {
        let av = self.data.clone();
        let data = self.data.iter().map(|v| v.powf(exponent)).collect();
        self.unary("pow", self.shape.clone(), data, |a, _| BackOp::PowScalar {
            a,
            av,
            exponent,
        })
    }

    pub fn relu(&self) -> Result<Tensor> {
        let av = self.data.clone();
        let data = self.data.iter().map(|v| v.max(0.0)).collect();
        self.unary("relu", self.shape.clone(), data, |a, _| BackOp::Relu { a, av })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v.tanh()).collect();
        self.unary("tanh", self.shape.clone(), data, |a, out| BackOp::Tanh { a, out })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.unary("sigmoid", self.shape.clone(), data, |a, out| BackOp::Sigmoid { a, out })
    }

    pub fn sin(&self) -> Result<Tensor> {
        let av = self.data.clone();
        let data = self.data.iter().map(|v| v.sin()).collect();
        self.unary("sin", self.shape.clone(), data, |a, _| BackOp::Sin { a, av })
    }

    pub fn cos(&self) -> Result<Tensor> {
        let av = self.data.clone();
        let data = self.data.iter().map(|v| v.cos()).collect();
        self.unary("cos", self.shape.clone(), data, |a, _| BackOp::Cos { a, av })
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: "sqrt of negative value".into(),
            });
        }
        let data = self.data.iter().map(|v| v.sqrt()).collect();
        self.unary("sqrt", self.shape.clone(), data, |a, out| BackOp::Sqrt { a, out })
    }

    // -- matmul / transpose --------------------------------------------------

    /// Standard 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (n, k, m) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (p, &ap) in arow.iter().enumerate() {
                if ap != 0.0 {
                    let brow = &rhs.data[p * m..(p + 1) * m];
                    for j in 0..m {
                        orow[j] += ap * brow[j];
                    }
                }
            }
        }
        check_finite("matmul", &out)?;
        let data = Arc::new(out);
        match Self::joint_trace(self, rhs)? {
            None => Ok(Tensor {
                shape: vec![n, m],
                data,
                trace: None,
            }),
            Some((tape, epoch, na, nb)) => {
                let node = tape.push(BackOp::Matmul {
                    a: na,
                    b: nb,
                    av: self.data.clone(),
                    bv: rhs.data.clone(),
                    n,
                    k,
                    m,
                });
                Ok(Tensor {
                    shape: vec![n, m],
                    data,
                    trace: Some(Trace { tape, epoch, node }),
                })
            }
        }
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        self.unary("transpose", vec![m, n], out, |a, _| BackOp::Transpose { a, n, m })
    }

    // -- softmax -------------------------------------------------------------

    /// Numerically stable softmax along `axis`: outputs are non-negative and
    /// sum to 1 along that axis.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.shape.len(),
            });
        }
        let (outer, len, inner) = axis_decomp(&self.shape, axis);
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(self.data[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (self.data[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let shape = self.shape.clone();
        self.unary("softmax", self.shape.clone(), out, |a, out| BackOp::Softmax {
            a,
            out,
            shape,
            axis,
        })
    }

    // -- reductions ----------------------------------------------------------

    fn reduce(&self, kind: ReduceKind, axis: Option<usize>, op: &'static str) -> Result<Tensor> {
        if let Some(ax) = axis {
            if ax >= self.shape.len() {
                return Err(Error::InvalidAxis {
                    axis: ax,
                    rank: self.shape.len(),
                });
            }
        }
        let (shape, data, argmax) = match axis {
            None => {
                let v = match kind {
                    ReduceKind::Sum => self.data.iter().sum(),
                    ReduceKind::Mean => self.data.iter().sum::<f64>() / self.data.len() as f64,
                    ReduceKind::Max => {
                        let mut best = self.data[0];
                        for &v in self.data.iter() {
                            if v > best {
                                best = v;
                            }
                        }
                        best
                    }
                };
                let am = if kind == ReduceKind::Max {
                    let mut best = 0;
                    for (i, &v) in self.data.iter().enumerate() {
                        if v > self.data[best] {
                            best = i;
                        }
                    }
                    vec![best]
                } else {
                    Vec::new()
                };
                (vec![1], vec![v], am)
            }
            Some(ax) => {
                let (outer, len, inner) = axis_decomp(&self.shape, ax);
                let mut shape: Vec<usize> = self
                    .shape
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != ax)
                    .map(|(_, &d)| d)
                    .collect();
                if shape.is_empty() {
                    shape.push(1);
                }
                let mut data = vec![0.0; outer * inner];
                let mut am = vec![0usize; if kind == ReduceKind::Max { outer * inner } else { 0 }];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        match kind {
                            ReduceKind::Sum | ReduceKind::Mean => {
                                let mut s = 0.0;
                                for j in 0..len {
                                    s += self.data[base + j * inner];
                                }
                                if kind == ReduceKind::Mean {
                                    s /= len as f64;
                                }
                                data[o * inner + i] = s;
                            }
                            ReduceKind::Max => {
                                let mut best_j = 0;
                                for j in 1..len {
                                    if self.data[base + j * inner]
                                        > self.data[base + best_j * inner]
                                    {
                                        best_j = j;
                                    }
                                }
                                data[o * inner + i] = self.data[base + best_j * inner];
                                am[o * inner + i] = base + best_j * inner;
                            }
                        }
                    }
                }
                (shape, data, am)
            }
        };
        let in_shape = self.shape.clone();
        self.unary(op, shape, data, |a, _| BackOp::Reduce {
            a,
            in_shape,
            axis,
            kind,
            argmax,
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, None, "sum")
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, Some(axis), "sum")
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, None, "mean")
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, Some(axis), "mean")
    }

    /// Max of all elements; gradient flows to the first argmax element.
    pub fn max(&self) -> Result<Tensor> {
        self.reduce(ReduceKind::Max, None, "max")
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce(ReduceKind::Max, Some(axis), "max")
    }

    // -- structural ------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.data.clone();
        match &self.trace {
            None => Ok(Tensor {
                shape: shape.to_vec(),
                data,
                trace: None,
            }),
            Some(tr) => {
                tr.live()?;
                let node = tr.tape.push(BackOp::Reshape { a: tr.node });
                Ok(Tensor {
                    shape: shape.to_vec(),
                    data,
                    trace: Some(Trace {
                        tape: tr.tape.clone(),
                        epoch: tr.epoch,
                        node,
                    }),
                })
            }
        }
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.shape.len(),
            });
        }
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                lhs: self.shape.clone(),
                rhs: vec![start, len],
            });
        }
        let (outer, alen, inner) = axis_decomp(&self.shape, axis);
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = (o * alen + start + j) * inner;
                let dst = (o * len + j) * inner;
                out[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        let in_shape = self.shape.clone();
        self.unary("narrow", shape, out, |a, _| BackOp::Narrow {
            a,
            in_shape,
            axis,
            start,
        })
    }

    /// Row `i` of a rank-2 tensor, as `[1 x cols]`.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        self.narrow(0, i, 1)
    }

    /// Concatenate along `axis`. All parts must agree on the other axes.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = 0;
        for p in parts {
            if p.shape.len() != rank
                || p.shape
                    .iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first.shape[i])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            out_shape[axis] += p.shape[axis];
        }
        let (outer, olen, inner) = axis_decomp(&out_shape, axis);
        let mut out = vec![0.0; outer * olen * inner];
        let mut offset = 0;
        for p in parts {
            let plen = p.shape[axis];
            for o in 0..outer {
                for j in 0..plen {
                    let src = (o * plen + j) * inner;
                    let dst = (o * olen + offset + j) * inner;
                    out[dst..dst + inner].copy_from_slice(&p.data[src..src + inner]);
                }
            }
            offset += plen;
        }
        check_finite("concat", &out)?;
        let data = Arc::new(out);

        // Merge traces across all parts.
        let mut tape_epoch: Option<(Tape, u64)> = None;
        for p in parts {
            if let Some(tr) = &p.trace {
                tr.live()?;
                match &tape_epoch {
                    None => tape_epoch = Some((tr.tape.clone(), tr.epoch)),
                    Some((t, _)) => {
                        if !Rc::ptr_eq(&t.inner, &tr.tape.inner) {
                            return Err(Error::Incompatible(
                                "operands recorded on different tapes".into(),
                            ));
                        }
                    }
                }
            }
        }
        match tape_epoch {
            None => Ok(Tensor {
                shape: out_shape,
                data,
                trace: None,
            }),
            Some((tape, epoch)) => {
                let node = tape.push(BackOp::Concat {
                    parts: parts
                        .iter()
                        .map(|p| p.trace.as_ref().map(|tr| tr.node))
                        .collect(),
                    shapes: parts.iter().map(|p| p.shape.clone()).collect(),
                    axis,
                });
                Ok(Tensor {
                    shape: out_shape,
                    data,
                    trace: Some(Trace { tape, epoch, node }),
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central finite difference with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Array, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    finite_diff_check_multi(|xs| f(&xs[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant of [`finite_diff_check`]; returns the max relative
/// error over every coordinate of every input.
pub fn finite_diff_check_multi<F>(f: F, xs: &[Array], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = xs
        .iter()
        .map(|x| tape.leaf(x.clone()))
        .collect::<Result<_>>()?;
    let y = f(&leaves)?;
    let grads = tape.backward(&y)?;
    let analytic: Vec<Array> = leaves
        .iter()
        .zip(xs)
        .map(|(l, x)| grads.get(l).cloned().unwrap_or_else(|| Array::zeros(x.shape())))
        .collect();

    let mut max_rel = 0.0f64;
    for (xi, x) in xs.iter().enumerate() {
        for c in 0..x.len() {
            let eval = |delta: f64| -> Result<f64> {
                let vars: Vec<Tensor> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let mut v = v.clone();
                        if i == xi {
                            v.data[c] += delta;
                        }
                        Tensor::from_array(v)
                    })
                    .collect();
                f(&vars)?.item()
            };
            let fp = eval(h)?;
            let fm = eval(-h)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite { op: "finite_diff" });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let ana = analytic[xi].data[c];
            let rel = (ana - numeric).abs() / (ana.abs() + numeric.abs() + 1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
