//! Dense 64-bit tensors on a reverse-mode tape.
//!
//! The tape is a flat Wengert list: every operation appends a node holding
//! the result tensor plus enough context to run its backward rule. Models
//! allocate their parameters first, remember the watermark, and truncate
//! back to it between steps. A single tape is strictly single-threaded;
//! independent tapes may run on independent threads.

use std::fmt;

use crate::rng::Rng;

// ── Errors ────────────────────────────────────────────────────────────────────

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorError {
    /// Constructor data length disagrees with the shape product.
    DataLength { expected: usize, got: usize },
    /// Two operands (or an operand and a spec) have incompatible shapes.
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    /// An argument violates an operation's precondition.
    InvalidArgument { op: &'static str, message: String },
    /// A NaN or infinity was detected where finite values are required.
    NonFinite { context: &'static str },
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss { numel: usize },
    /// An optimizer step found a parameter without a gradient.
    MissingGrad { index: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            Self::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            Self::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            Self::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Self::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Self::MissingGrad { index } => {
                write!(f, "parameter {index} has no gradient; run backward first")
            }
        }
    }
}

impl std::error::Error for TensorError {}

fn invalid(op: &'static str, message: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument { op, message: message.into() }
}

// ── Tensor storage ────────────────────────────────────────────────────────────

/// Dense row-major tensor. A scalar has shape `[]` and one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength { expected, got: data.len() });
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// NaN/Inf is a checkable error state, never silently propagated.
    pub fn check_finite(&self, context: &'static str) -> TensorResult<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { context })
        }
    }
}

/// Gaussian init with variance `2 / fan_in`.
pub fn kaiming_init(rng: &mut Rng, fan_in: usize, shape: Vec<usize>) -> TensorResult<Tensor> {
    if fan_in == 0 {
        return Err(invalid("kaiming_init", "fan_in must be >= 1"));
    }
    let n: usize = shape.iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..n).map(|_| std * rng.normal()).collect();
    Tensor::new(shape, data)
}

// ── Tape ──────────────────────────────────────────────────────────────────────

/// Handle into a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Normalization context saved by the forward pass (see `norm` module).
#[derive(Clone, Debug)]
pub(crate) struct NormCtx {
    pub x: TensorId,
    pub scale: TensorId,
    pub bias: TensorId,
    /// (group count, elements per group); grouping resolved by `grouping`.
    pub grouping: crate::norm::Grouping,
    pub mean: Vec<f64>,
    pub invstd: Vec<f64>,
    /// False in eval-mode batch norm, where the statistics are constants.
    pub stats_from_input: bool,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Relu { x: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    /// y = x + noise, the addend being a constant that receives no gradient.
    AddConst { x: TensorId },
    /// y = s * x with s a trainable scalar broadcast over x.
    ScalarMul { x: TensorId, s: TensorId },
    /// y = x + s with s a trainable scalar broadcast over x.
    ScalarAdd { x: TensorId, s: TensorId },
    Linear { x: TensorId, w: TensorId, b: TensorId },
    Conv2d { x: TensorId, w: TensorId, stride: usize, padding: usize },
    AvgPool2 { x: TensorId },
    GlobalAvgPool { x: TensorId },
    /// Append a zero block of equal size along the channel axis.
    PadChannels { x: TensorId },
    Sum { x: TensorId },
    Norm(NormCtx),
    CrossEntropy { logits: TensorId, targets: Vec<usize>, smoothing: f64, probs: Vec<f64> },
}

pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current node count; pass to [`Tape::truncate`] to roll intermediate
    /// results back while keeping earlier leaves (parameters) alive.
    pub fn watermark(&self) -> usize {
        self.nodes.len()
    }

    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.ops.truncate(mark);
    }

    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Leaf)
    }

    pub fn leaf_from(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> TensorResult<TensorId> {
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = requires_grad;
        Ok(self.leaf(t))
    }

    pub(crate) fn push(&mut self, t: Tensor, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(t);
        self.ops.push(op);
        id
    }

    pub fn get(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut Tensor {
        &mut self.nodes[id.0]
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    // ── Elementwise and scalar ops ───────────────────────────────────────────

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let t = self.get(x);
        let data: Vec<f64> = t.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::Relu { x })
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> TensorResult<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorResult<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::Scale { x, c })
    }

    fn expect_scalar(&self, op: &'static str, s: TensorId) -> TensorResult<f64> {
        let t = self.get(s);
        if t.numel() != 1 {
            return Err(invalid(op, format!("expected scalar, got shape {:?}", t.shape)));
        }
        Ok(t.data[0])
    }

    pub fn scalar_mul(&mut self, x: TensorId, s: TensorId) -> TensorResult<TensorId> {
        let sv = self.expect_scalar("scalar_mul", s)?;
        let data: Vec<f64> = self.data(x).iter().map(|v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::ScalarMul { x, s }))
    }

    pub fn scalar_add(&mut self, x: TensorId, s: TensorId) -> TensorResult<TensorId> {
        let sv = self.expect_scalar("scalar_add", s)?;
        let data: Vec<f64> = self.data(x).iter().map(|v| v + sv).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::ScalarAdd { x, s }))
    }

    /// y = x + amplitude * delta with delta a fresh standard Gaussian of x's
    /// shape. The noise is a constant on the tape: gradients pass through to
    /// x and never into the draw.
    pub fn add_noise(&mut self, x: TensorId, rng: &mut Rng, amplitude: f64) -> TensorId {
        let data: Vec<f64> =
            self.data(x).iter().map(|v| v + amplitude * rng.normal()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data, requires_grad: false, grad: None }, Op::AddConst { x })
    }

    // ── Linear algebra ───────────────────────────────────────────────────────

    /// y[B,dout] = x[B,din] . w[din,dout] + b[dout]
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> TensorResult<TensorId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(invalid(
                "linear",
                format!("expected x[B,din], w[din,dout], b[dout]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        if xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(TensorError::ShapeMismatch { op: "linear", left: xs.to_vec(), right: ws.to_vec() });
        }
        let (batch, din, dout) = (xs[0], xs[1], ws[1]);
        let mut data = vec![0.0; batch * dout];
        matmul_acc(self.data(x), self.data(w), &mut data, batch, din, dout);
        let bias = self.data(b);
        for row in data.chunks_mut(dout) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        Ok(self.push(
            Tensor { shape: vec![batch, dout], data, requires_grad: false, grad: None },
            Op::Linear { x, w, b },
        ))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.data(x).iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Mean cross-entropy of logits[B,K] against integer targets, with
    /// label-smoothing mass `smoothing` spread uniformly over the classes.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        smoothing: f64,
    ) -> TensorResult<TensorId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(invalid("cross_entropy", format!("expected logits[B,K], got {shape:?}")));
        }
        let (batch, classes) = (shape[0], shape[1]);
        if targets.len() != batch {
            return Err(invalid(
                "cross_entropy",
                format!("{} targets for batch {batch}", targets.len()),
            ));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(invalid("cross_entropy", format!("smoothing {smoothing} outside [0,1)")));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(invalid("cross_entropy", format!("target {t} >= {classes} classes")));
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        let off = smoothing / classes as f64;
        for i in 0..batch {
            let row = &z[i * classes..(i + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - m).exp();
            }
            let lse = m + denom.ln();
            for (k, &v) in row.iter().enumerate() {
                probs[i * classes + k] = (v - lse).exp();
                let q = off + if k == targets[i] { 1.0 - smoothing } else { 0.0 };
                loss += q * (lse - v);
            }
        }
        loss /= batch as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing, probs },
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// reachable node; repeated calls without [`Tape::zero_grad`] add up.
    pub fn backward(&mut self, loss: TensorId) -> TensorResult<()> {
        let n = self.get(loss).numel();
        if n != 1 {
            return Err(TensorError::NonScalarLoss { numel: n });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut adj);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(existing) => {
                    for (e, gi) in existing.iter_mut().zip(&g) {
                        *e += gi;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// True when a node can influence the loss through parameters, i.e. it
    /// is worth computing its adjoint at all.
    fn needs_adjoint(&self, id: TensorId) -> bool {
        !matches!(self.ops[id.0], Op::Leaf) || self.nodes[id.0].requires_grad
    }

    pub(crate) fn needs_grad_through(&self, id: TensorId) -> bool {
        self.needs_adjoint(id)
    }

    fn accumulate(adj: &mut [Option<Vec<f64>>], id: TensorId, len: usize) -> &mut Vec<f64> {
        adj[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub(crate) fn accumulate_pub(
        adj: &mut [Option<Vec<f64>>],
        id: TensorId,
        len: usize,
    ) -> &mut Vec<f64> {
        Self::accumulate(adj, id, len)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], adj: &mut Vec<Option<Vec<f64>>>) {
        match &self.ops[idx] {
            Op::Leaf => {}
            Op::Relu { x } => {
                let xv = self.data(*x);
                let gx = Self::accumulate(adj, *x, xv.len());
                for i in 0..xv.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Add { a, b } => {
                let ga = Self::accumulate(adj, *a, g.len());
                for (gi, gv) in ga.iter_mut().zip(g) {
                    *gi += gv;
                }
                let gb = Self::accumulate(adj, *b, g.len());
                for (gi, gv) in gb.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
            Op::Sub { a, b } => {
                let ga = Self::accumulate(adj, *a, g.len());
                for (gi, gv) in ga.iter_mut().zip(g) {
                    *gi += gv;
                }
                let gb = Self::accumulate(adj, *b, g.len());
                for (gi, gv) in gb.iter_mut().zip(g) {
                    *gi -= gv;
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.data(*a).to_vec(), self.data(*b).to_vec());
                let ga = Self::accumulate(adj, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
                let gb = Self::accumulate(adj, *b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
            Op::Scale { x, c } => {
                let gx = Self::accumulate(adj, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * c;
                }
            }
            Op::AddConst { x } => {
                let gx = Self::accumulate(adj, *x, g.len());
                for (gi, gv) in gx.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
            Op::ScalarMul { x, s } => {
                let sv = self.data(*s)[0];
                let xv = self.data(*x).to_vec();
                let gx = Self::accumulate(adj, *x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * sv;
                }
                let gs = Self::accumulate(adj, *s, 1);
                gs[0] += g.iter().zip(&xv).map(|(gv, xv)| gv * xv).sum::<f64>();
            }
            Op::ScalarAdd { x, s } => {
                let gx = Self::accumulate(adj, *x, g.len());
                for (gi, gv) in gx.iter_mut().zip(g) {
                    *gi += gv;
                }
                let gs = Self::accumulate(adj, *s, 1);
                gs[0] += g.iter().sum::<f64>();
            }
            Op::Linear { x, w, b } => {
                let (batch, din) = (self.shape(*x)[0], self.shape(*x)[1]);
                let dout = self.shape(*w)[1];
                if self.needs_adjoint(*x) {
                    let wv = self.data(*w).to_vec();
                    let gx = Self::accumulate(adj, *x, batch * din);
                    // dx[i,p] = sum_j g[i,j] w[p,j]
                    for i in 0..batch {
                        for p in 0..din {
                            let wrow = &wv[p * dout..(p + 1) * dout];
                            let grow = &g[i * dout..(i + 1) * dout];
                            gx[i * din + p] +=
                                grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                let xv = self.data(*x).to_vec();
                let gw = Self::accumulate(adj, *w, din * dout);
                // dw[p,j] += sum_i x[i,p] g[i,j]
                for i in 0..batch {
                    let grow = &g[i * dout..(i + 1) * dout];
                    for p in 0..din {
                        let a = xv[i * din + p];
                        let wrow = &mut gw[p * dout..(p + 1) * dout];
                        for j in 0..dout {
                            wrow[j] += a * grow[j];
                        }
                    }
                }
                let gb = Self::accumulate(adj, *b, dout);
                for i in 0..batch {
                    let grow = &g[i * dout..(i + 1) * dout];
                    for j in 0..dout {
                        gb[j] += grow[j];
                    }
                }
            }
            Op::Conv2d { x, w, stride, padding } => {
                crate::conv::conv2d_backward(self, *x, *w, *stride, *padding, g, adj);
            }
            Op::AvgPool2 { x } => crate::conv::avg_pool2_backward(self, *x, g, adj),
            Op::GlobalAvgPool { x } => crate::conv::global_avg_pool_backward(self, *x, g, adj),
            Op::PadChannels { x } => crate::conv::pad_channels_backward(self, *x, g, adj),
            Op::Sum { x } => {
                let n = self.get(*x).numel();
                let gx = Self::accumulate(adj, *x, n);
                for gi in gx.iter_mut() {
                    *gi += g[0];
                }
            }
            Op::Norm(ctx) => crate::norm::norm_backward(self, ctx, g, adj),
            Op::CrossEntropy { logits, targets, smoothing, probs } => {
                let classes = self.shape(*logits)[1];
                let batch = targets.len();
                let off = smoothing / classes as f64;
                let gl = Self::accumulate(adj, *logits, batch * classes);
                let scale = g[0] / batch as f64;
                for i in 0..batch {
                    for k in 0..classes {
                        let q = off + if k == targets[i] { 1.0 - smoothing } else { 0.0 };
                        gl[i * classes + k] += scale * (probs[i * classes + k] - q);
                    }
                }
            }
        }
    }
}

/// c[m,n] += a[m,k] . b[k,n]
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}
