//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order; [`Graph::backward`] walks it once in reverse.

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::{axis_layout, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Relu(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Softmax { x: Var, axis: usize },
    L2Normalize { x: Var, axis: usize, eps: f64 },
    LayerNorm { x: Var, gamma: Var, beta: Var, axis: usize, eps: f64 },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    AvgPool { x: Var, p: usize },
    GlobalAvg(Var),
    Upsample { x: Var, factor: usize },
    Concat { a: Var, b: Var, axis: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications and back-propagates through them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `∂loss/∂v` after [`backward`](Self::backward); `None` if `v` does not
    /// influence the loss or does not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).unwrap();
        self.push(out, op, &[a, b])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).unwrap();
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |p, q| p + q))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |p, q| p - q))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |p, q| p * q))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |v| v * factor)
    }

    /// `x · s` for a one-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar expects a one-element factor", self.shape(s), &[1]));
        }
        let k = self.value(s).item();
        Ok(self.map(x, Op::MulScalar(x, s), |v| v * k)).map(|out| {
            // MulScalar depends on both operands
            self.nodes[out.0].requires_grad = self.requires_grad(x) || self.requires_grad(s);
            out
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |v| v.max(0.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), gelu)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("l1_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let m = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::L1(pred, target), &[pred, target]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let nd = x.ndim();
        if nd < 2 {
            return Err(Error::ShapeMismatch(format!("transpose needs ≥2 dims, got {:?}", x.shape())));
        }
        let (r, c) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let batch = x.len() / (r * c).max(1);
        let mut data = vec![0.0; x.len()];
        for bi in 0..batch {
            let src = &x.data()[bi * r * c..(bi + 1) * r * c];
            let dst = &mut data[bi * r * c..(bi + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        Ok(self.push(Tensor::new(shape, data)?, Op::Transpose(a), &[a]))
    }

    fn matmul_dims(&self, a: Var, b: Var) -> Result<(usize, usize, usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_err("matmul batch dims", sa, sb));
        }
        let nd = sa.len();
        let (m, k, k2, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 2], sb[nd - 1]);
        if k != k2 {
            return Err(shape_err("matmul inner dims", sa, sb));
        }
        let batch = sa[..nd - 2].iter().product();
        Ok((batch, m, k, n))
    }

    /// Batched matrix product over leading axes: `[.., m, k] × [.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = self.matmul_dims(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let mut data = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                &x.data()[bi * m * k..],
                (k, 1),
                &y.data()[bi * k * n..],
                (n, 1),
                0.0,
                &mut data[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut shape = x.shape().to_vec();
        let nd = shape.len();
        shape[nd - 1] = n;
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::ShapeMismatch(format!("axis {axis} out of range for {:?}", t.shape())));
        }
        let (outer, len, inner) = axis_layout(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (data[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[at(j)] /= total;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// `x / max(‖x‖₂, eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::ShapeMismatch(format!("axis {axis} out of range for {:?}", t.shape())));
        }
        let (outer, len, inner) = axis_layout(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let norm = (0..len).map(|j| data[at(j)] * data[at(j)]).sum::<f64>().sqrt().max(eps);
                for j in 0..len {
                    data[at(j)] /= norm;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::L2Normalize { x, axis, eps }, &[x]))
    }

    /// Normalises along `axis` to zero mean and unit variance, then applies
    /// the per-position affine `gamma`, `beta` (both of length `shape[axis]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::ShapeMismatch(format!("axis {axis} out of range for {:?}", t.shape())));
        }
        let (outer, len, inner) = axis_layout(t.shape(), axis);
        if self.value(gamma).len() != len || self.value(beta).len() != len {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm affine must have {len} entries, got {:?} / {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut data = vec![0.0; t.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let (mean, rstd) = moments(t.data(), len, at, eps);
                for j in 0..len {
                    data[at(j)] = (t.data()[at(j)] - mean) * rstd * g[j] + b[j];
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, axis, eps }, &[x, gamma, beta]))
    }

    /// `x · wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[1] {
            return Err(shape_err("linear", xs, ws));
        }
        let (dout, din) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.value(b).len() != dout {
                return Err(shape_err("linear bias", self.shape(b), &[dout]));
            }
        }
        let rows = self.value(x).len() / din.max(1);
        let mut data = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            data.chunks_exact_mut(dout).for_each(|row| row.copy_from_slice(bias));
        }
        gemm(rows, din, dout, self.value(x).data(), (din, 1), self.value(w).data(), (1, din), 1.0, &mut data);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::Linear { x, w, b }, &inputs))
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err("conv2d input/weight", xs, ws));
        }
        if stride == 0 {
            return Err(Error::NonIntegralOutput("stride must be positive".into()));
        }
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let span = |len: usize, k: usize| -> Result<usize> {
            let padded = len + 2 * pad;
            if padded < k || (padded - k) % stride != 0 {
                return Err(Error::NonIntegralOutput(format!(
                    "({len} + 2·{pad} − {k}) / {stride}"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        let (ho, wo) = (span(h, kh)?, span(wd, kw)?);
        Ok((n, cout, ConvGeom { cin, h, w: wd, kh, kw, stride, pad, ho, wo }))
    }

    /// Cross-correlation of `x: [n, cin, h, w]` with `w: [cout, cin, kh, kw]`
    /// plus an optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cout, g) = self.conv_geom(x, w, stride, pad)?;
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err("conv2d bias", self.shape(b), &[cout]));
            }
        }
        let (k, p) = (g.k(), g.p());
        let xin = self.value(x).data();
        let wt = self.value(w).data();
        let mut data = vec![0.0; n * cout * p];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        let sample = g.cin * g.h * g.w;
        for ni in 0..n {
            let xs = &xin[ni * sample..(ni + 1) * sample];
            let out = &mut data[ni * cout * p..(ni + 1) * cout * p];
            if let Some(b) = b {
                for (co, &bv) in self.value(b).data().iter().enumerate() {
                    out[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = bv);
                }
            }
            let cols: &[f64] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut col);
                &col
            };
            gemm(cout, k, p, wt, (k, 1), cols, (p, 1), 1.0, out);
        }
        let out = Tensor::new(vec![n, cout, g.ho, g.wo], data)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    fn nchw(&self, x: Var, what: &str) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("{what} expects [N, C, H, W], got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Non-overlapping `p×p` window means.
    pub fn avg_pool(&mut self, x: Var, p: usize) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "avg_pool")?;
        for size in [h, w] {
            if p == 0 || size % p != 0 {
                return Err(Error::NonDivisible { size, window: p });
            }
        }
        let (ho, wo) = (h / p, w / p);
        let t = self.value(x).data();
        let inv = 1.0 / (p * p) as f64;
        let mut data = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &t[plane * h * w..(plane + 1) * h * w];
            let dst = &mut data[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for di in 0..p {
                        for dj in 0..p {
                            acc += src[(i * p + di) * w + j * p + dj];
                        }
                    }
                    dst[i * wo + j] = acc * inv;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, c, ho, wo], data)?, Op::AvgPool { x, p }, &[x]))
    }

    /// Per-channel spatial mean, `[N, C, H, W] → [N, C, 1, 1]`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "global_avg")?;
        let t = self.value(x).data();
        let hw = h * w;
        let data = (0..n * c).map(|pl| t[pl * hw..(pl + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        Ok(self.push(Tensor::new(vec![n, c, 1, 1], data)?, Op::GlobalAvg(x), &[x]))
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "upsample_nearest")?;
        let (ho, wo) = (h * factor, w * factor);
        let t = self.value(x).data();
        let mut data = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for i in 0..ho {
                for j in 0..wo {
                    data[(plane * ho + i) * wo + j] = t[(plane * h + i / factor) * w + j / factor];
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, c, ho, wo], data)?, Op::Upsample { x, factor }, &[x]))
    }

    /// Joins two tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (p, q))| i == axis || p == q);
        if !compatible {
            return Err(shape_err("concat", &sa, &sb));
        }
        let (outer, la, inner) = axis_layout(&sa, axis);
        let lb = sb[axis];
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(xa.len() + xb.len());
        for o in 0..outer {
            data.extend_from_slice(&xa[o * la * inner..(o + 1) * la * inner]);
            data.extend_from_slice(&xb[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa.clone();
        shape[axis] = la + lb;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { a, b, axis }, &[a, b]))
    }

    /// Fills gradient buffers with `∂loss/∂v` for every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::DisconnectedGraph);
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![1.0]);
        let Graph { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if nodes[i].requires_grad {
                backprop(nodes, grads, i, &g)?;
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn moments(data: &[f64], len: usize, at: impl Fn(usize) -> usize, eps: f64) -> (f64, f64) {
    let mean = (0..len).map(|j| data[at(j)]).sum::<f64>() / len as f64;
    let var = (0..len).map(|j| (data[at(j)] - mean).powi(2)).sum::<f64>() / len as f64;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Gradient buffer of `v`, allocated on first use; `None` when `v` is constant.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) -> Result<()> {
    let val = |v: Var| nodes[v.0].value.data();
    let out = nodes[i].value.data();
    match nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
            if let Some(db) = slot(nodes, grads, b) {
                db.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
            if let Some(db) = slot(nodes, grads, b) {
                db.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv);
            }
        }
        Op::Mul(a, b) => {
            if let Some(da) = slot(nodes, grads, a) {
                for ((d, gv), y) in da.iter_mut().zip(g).zip(val(b)) {
                    *d += gv * y;
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for ((d, gv), x) in db.iter_mut().zip(g).zip(val(a)) {
                    *d += gv * x;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * k);
            }
        }
        Op::MulScalar(x, s) => {
            let k = val(s)[0];
            if let Some(dx) = slot(nodes, grads, x) {
                dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * k);
            }
            if let Some(ds) = slot(nodes, grads, s) {
                ds[0] += g.iter().zip(val(x)).map(|(gv, xv)| gv * xv).sum::<f64>();
            }
        }
        Op::Relu(a) => {
            if let Some(da) = slot(nodes, grads, a) {
                for ((d, gv), x) in da.iter_mut().zip(g).zip(val(a)) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            if let Some(da) = slot(nodes, grads, a) {
                for ((d, gv), &x) in da.iter_mut().zip(g).zip(val(a)) {
                    *d += gv * gelu_grad(x);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(da) = slot(nodes, grads, a) {
                let k = g[0] / da.len() as f64;
                da.iter_mut().for_each(|d| *d += k);
            }
        }
        Op::L1(p, t) => {
            let k = g[0] / val(p).len() as f64;
            let signs: Vec<f64> = val(p)
                .iter()
                .zip(val(t))
                .map(|(a, b)| if a > b { k } else if a < b { -k } else { 0.0 })
                .collect();
            if let Some(dp) = slot(nodes, grads, p) {
                dp.iter_mut().zip(&signs).for_each(|(d, s)| *d += s);
            }
            if let Some(dt) = slot(nodes, grads, t) {
                dt.iter_mut().zip(&signs).for_each(|(d, s)| *d -= s);
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
            }
        }
        Op::Transpose(a) => {
            let s = nodes[a.0].value.shape();
            let nd = s.len();
            let (r, c) = (s[nd - 2], s[nd - 1]);
            if let Some(da) = slot(nodes, grads, a) {
                let batch = da.len() / (r * c).max(1);
                for bi in 0..batch {
                    for i in 0..r {
                        for j in 0..c {
                            da[bi * r * c + i * c + j] += g[bi * r * c + j * r + i];
                        }
                    }
                }
            }
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let nd = sa.len();
            let (m, k, n) = (sa[nd - 2], sa[nd - 1], sb[nd - 1]);
            let batch = sa[..nd - 2].iter().product::<usize>();
            if let Some(da) = slot(nodes, grads, a) {
                for bi in 0..batch {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, &g[bi * m * n..], (n, 1), &val(b)[bi * k * n..], (1, n), 1.0, &mut da[bi * m * k..(bi + 1) * m * k]);
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for bi in 0..batch {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, &val(a)[bi * m * k..], (1, k), &g[bi * m * n..], (n, 1), 1.0, &mut db[bi * k * n..(bi + 1) * k * n]);
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_layout(nodes[x.0].value.shape(), axis);
            if let Some(dx) = slot(nodes, grads, x) {
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + ii;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] += out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::L2Normalize { x, axis, eps } => {
            let xin = val(x);
            let (outer, len, inner) = axis_layout(nodes[x.0].value.shape(), axis);
            if let Some(dx) = slot(nodes, grads, x) {
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + ii;
                        let norm = (0..len).map(|j| xin[at(j)] * xin[at(j)]).sum::<f64>().sqrt();
                        if norm > eps {
                            let dot: f64 = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                            for j in 0..len {
                                dx[at(j)] += (g[at(j)] - out[at(j)] * dot) / norm;
                            }
                        } else {
                            for j in 0..len {
                                dx[at(j)] += g[at(j)] / eps;
                            }
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, axis, eps } => {
            let xin = val(x);
            let gam = val(gamma);
            let (outer, len, inner) = axis_layout(nodes[x.0].value.shape(), axis);
            let mut dgamma = vec![0.0; len];
            let mut dbeta = vec![0.0; len];
            let mut dxbuf = vec![0.0; xin.len()];
            let mut xhat = vec![0.0; len];
            for o in 0..outer {
                for ii in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + ii;
                    let (mean, rstd) = moments(xin, len, at, eps);
                    let (mut sum_dxh, mut sum_dxh_xh) = (0.0, 0.0);
                    for j in 0..len {
                        xhat[j] = (xin[at(j)] - mean) * rstd;
                        let gv = g[at(j)];
                        dgamma[j] += gv * xhat[j];
                        dbeta[j] += gv;
                        let dxh = gv * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[j];
                    }
                    let (m1, m2) = (sum_dxh / len as f64, sum_dxh_xh / len as f64);
                    for j in 0..len {
                        dxbuf[at(j)] = rstd * (g[at(j)] * gam[j] - m1 - xhat[j] * m2);
                    }
                }
            }
            if let Some(dx) = slot(nodes, grads, x) {
                dx.iter_mut().zip(&dxbuf).for_each(|(d, v)| *d += v);
            }
            if let Some(dg) = slot(nodes, grads, gamma) {
                dg.iter_mut().zip(&dgamma).for_each(|(d, v)| *d += v);
            }
            if let Some(db) = slot(nodes, grads, beta) {
                db.iter_mut().zip(&dbeta).for_each(|(d, v)| *d += v);
            }
        }
        Op::Linear { x, w, b } => {
            let ws = nodes[w.0].value.shape();
            let (dout, din) = (ws[0], ws[1]);
            let rows = val(x).len() / din.max(1);
            if let Some(dx) = slot(nodes, grads, x) {
                gemm(rows, dout, din, g, (dout, 1), val(w), (din, 1), 1.0, dx);
            }
            if let Some(dw) = slot(nodes, grads, w) {
                gemm(dout, rows, din, g, (1, dout), val(x), (din, 1), 1.0, dw);
            }
            if let Some(b) = b {
                if let Some(db) = slot(nodes, grads, b) {
                    for row in g.chunks_exact(dout) {
                        db.iter_mut().zip(row).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (xs, ws) = (nodes[x.0].value.shape(), nodes[w.0].value.shape());
            let os = nodes[i].value.shape();
            let g_geom = ConvGeom {
                cin: xs[1],
                h: xs[2],
                w: xs[3],
                kh: ws[2],
                kw: ws[3],
                stride,
                pad,
                ho: os[2],
                wo: os[3],
            };
            conv_backward(nodes, grads, x, w, b, &g_geom, xs[0], ws[0], g);
        }
        Op::AvgPool { x, p } => {
            let s = nodes[x.0].value.shape();
            let (h, w) = (s[2], s[3]);
            let (ho, wo) = (h / p, w / p);
            let inv = 1.0 / (p * p) as f64;
            if let Some(dx) = slot(nodes, grads, x) {
                for plane in 0..s[0] * s[1] {
                    for r in 0..h {
                        for c in 0..w {
                            dx[(plane * h + r) * w + c] += g[(plane * ho + r / p) * wo + c / p] * inv;
                        }
                    }
                }
            }
        }
        Op::GlobalAvg(x) => {
            let s = nodes[x.0].value.shape();
            let hw = s[2] * s[3];
            if let Some(dx) = slot(nodes, grads, x) {
                for (plane, gv) in g.iter().enumerate() {
                    dx[plane * hw..(plane + 1) * hw].iter_mut().for_each(|d| *d += gv / hw as f64);
                }
            }
        }
        Op::Upsample { x, factor } => {
            let s = nodes[x.0].value.shape();
            let (h, w) = (s[2], s[3]);
            let (ho, wo) = (h * factor, w * factor);
            if let Some(dx) = slot(nodes, grads, x) {
                for plane in 0..s[0] * s[1] {
                    for r in 0..ho {
                        for c in 0..wo {
                            dx[(plane * h + r / factor) * w + c / factor] += g[(plane * ho + r) * wo + c];
                        }
                    }
                }
            }
        }
        Op::Concat { a, b, axis } => {
            let (outer, la, inner) = axis_layout(nodes[a.0].value.shape(), axis);
            let lb = nodes[b.0].value.shape()[axis];
            let stride = (la + lb) * inner;
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    let src = &g[o * stride..o * stride + la * inner];
                    da[o * la * inner..(o + 1) * la * inner].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for o in 0..outer {
                    let src = &g[o * stride + la * inner..(o + 1) * stride];
                    db[o * lb * inner..(o + 1) * lb * inner].iter_mut().zip(src).for_each(|(d, v)| *d += v);
                }
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    n: usize,
    cout: usize,
    g: &[f64],
) {
    let (k, p) = (geom.k(), geom.p());
    let xin = nodes[x.0].value.data();
    let wt = nodes[w.0].value.data();
    let sample = geom.cin * geom.h * geom.w;
    let mut col = vec![0.0; k * p];

    if let Some(b) = b {
        if let Some(db) = slot(nodes, grads, b) {
            for ni in 0..n {
                for (co, d) in db.iter_mut().enumerate() {
                    *d += g[(ni * cout + co) * p..(ni * cout + co + 1) * p].iter().sum::<f64>();
                }
            }
        }
    }
    if let Some(dw) = slot(nodes, grads, w) {
        for ni in 0..n {
            let xs = &xin[ni * sample..(ni + 1) * sample];
            let cols: &[f64] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, geom, &mut col);
                &col
            };
            // dW += dOut · colᵀ
            gemm(cout, p, k, &g[ni * cout * p..], (p, 1), cols, (1, p), 1.0, dw);
        }
    }
    if let Some(dx) = slot(nodes, grads, x) {
        for ni in 0..n {
            let dxs = &mut dx[ni * sample..(ni + 1) * sample];
            if geom.is_pointwise() {
                // dX += Wᵀ · dOut directly
                gemm(k, cout, p, wt, (1, k), &g[ni * cout * p..], (p, 1), 1.0, dxs);
            } else {
                gemm(k, cout, p, wt, (1, k), &g[ni * cout * p..], (p, 1), 0.0, &mut col);
                col2im(&col, geom, dxs);
            }
        }
    }
}
