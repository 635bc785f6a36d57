//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly,
//! checks that its output is finite and records what it needs for the
//! backward sweep. Inputs always precede outputs on the tape, so
//! [`Graph::backward`] visits nodes once each, in reverse insertion order.
//!
//! ```
//! use pitn_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, -4.0, 6.0]);
//! ```

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Elementwise `x * scale + shift` with constant vectors broadcast over rows.
    Affine {
        input: NodeId,
        scale: Vec<f64>,
    },
    MulScalar(NodeId, NodeId),
    AddRowBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Conv2d(NodeId, NodeId),
    LayerNorm {
        input: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    Reshape(NodeId),
    PadRows(NodeId),
    CenterKernel(NodeId),
    TruncateRows(NodeId),
    Slice { input: NodeId, start: usize },
    Dot(NodeId, NodeId),
    LogSumExp { input: NodeId, softmax: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Affine { .. } => "affine",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddRowBias(..) => "add_row_bias",
            Op::MatMul(..) => "matmul",
            Op::Conv2d(..) => "conv2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat(_) => "concat",
            Op::Stack(_) => "stack",
            Op::Reshape(_) => "reshape",
            Op::PadRows(_) => "pad_rows",
            Op::CenterKernel(_) => "center_kernel",
            Op::TruncateRows(_) => "truncate_rows",
            Op::Slice { .. } => "slice",
            Op::Dot(..) => "dot",
            Op::LogSumExp { .. } => "log_sum_exp",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Accumulated gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`; zeros when the node did not
    /// contribute to the loss or does not require gradients.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get_ref(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

fn same_len(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

/// Cross-correlation with symmetric zero padding ("same" output size).
fn center_taps(kernel: &[f64], k: usize, size: usize, inner: usize) -> Vec<f64> {
    let off = (size - k) / 2;
    let mut out = vec![0.0; size * size * inner];
    for r in 0..k {
        let start = ((r + off) * size + off) * inner;
        out[start..start + k * inner].copy_from_slice(&kernel[r * k * inner..(r + 1) * k * inner]);
    }
    out
}

fn conv2d_forward(x: &Tensor, k: &Tensor) -> Tensor {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; h * w * cout];
    let mut taps = Vec::with_capacity(kh * kw);
    for r in 0..h {
        for c in 0..w {
            taps.clear();
            for kr in (ph.saturating_sub(r))..kh.min(h + ph - r) {
                let rr = r + kr - ph;
                for kc in (pw.saturating_sub(c))..kw.min(w + pw - c) {
                    let cc = c + kc - pw;
                    taps.push(((rr * w + cc) * cin, (kr * kw + kc) * cin * cout));
                }
            }
            let o = &mut out[(r * w + c) * cout..(r * w + c + 1) * cout];
            let mut j = 0;
            while j + LANES <= cout {
                let mut s = [0.0; LANES];
                for &(xo, ko) in &taps {
                    let rows = kd[ko..ko + cin * cout].chunks_exact(cout);
                    for (&xv, row) in xd[xo..xo + cin].iter().zip(rows) {
                        let row: &[f64; LANES] = row[j..j + LANES].try_into().expect("lanes");
                        for (a, &kv) in s.iter_mut().zip(row) {
                            *a += xv * kv;
                        }
                    }
                }
                o[j..j + LANES].copy_from_slice(&s);
                j += LANES;
            }
            for (jj, v) in o.iter_mut().enumerate().skip(j) {
                for &(xo, ko) in &taps {
                    let rows = kd[ko..ko + cin * cout].chunks_exact(cout);
                    for (&xv, row) in xd[xo..xo + cin].iter().zip(rows) {
                        *v += xv * row[jj];
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, cout], out).expect("conv output shape")
}

/// Output channels accumulated together in [`conv2d_forward`].
const LANES: usize = 8;

fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    g: &Tensor,
    want_x: bool,
    want_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let xd = x.data();
    let kd = k.data();
    let gd = g.data();
    let mut gx = if want_x { vec![0.0; xd.len()] } else { Vec::new() };
    let mut gk = if want_k { vec![0.0; kd.len()] } else { Vec::new() };
    for r in 0..h {
        for c in 0..w {
            let go = &gd[(r * w + c) * cout..(r * w + c + 1) * cout];
            for kr in 0..kh {
                let rr = r + kr;
                if rr < ph || rr - ph >= h {
                    continue;
                }
                let rr = rr - ph;
                for kc in 0..kw {
                    let cc = c + kc;
                    if cc < pw || cc - pw >= w {
                        continue;
                    }
                    let cc = cc - pw;
                    let xbase = (rr * w + cc) * cin;
                    let tbase = (kr * kw + kc) * cin * cout;
                    for ci in 0..cin {
                        let krange = tbase + ci * cout..tbase + (ci + 1) * cout;
                        if want_x {
                            let krow = &kd[krange.clone()];
                            let s: f64 = krow.iter().zip(go).map(|(a, b)| a * b).sum();
                            gx[xbase + ci] += s;
                        }
                        if want_k {
                            let xv = xd[xbase + ci];
                            for (gkv, &gv) in gk[krange].iter_mut().zip(go) {
                                *gkv += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        want_x.then(|| Tensor::new(x.shape().to_vec(), gx).unwrap()),
        want_k.then(|| Tensor::new(k.shape().to_vec(), gk).unwrap()),
    )
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Record a leaf. Leaves with `requires_grad == false` are constants.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf. Panics on non-finite values.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true).expect("non-finite parameter")
    }

    /// Constant leaf. Panics on non-finite values.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false).expect("non-finite constant")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len("add", va, vb)?;
        let v = zip_map(va, vb, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len("sub", va, vb)?;
        let v = zip_map(va, vb, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_len("mul", va, vb)?;
        let v = zip_map(va, vb, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// `x * scale + shift` with constant per-column vectors (length = last
    /// dimension of `x`).
    pub fn affine(&mut self, x: NodeId, scale: Vec<f64>, shift: Vec<f64>) -> Result<NodeId> {
        let vx = self.value(x);
        let (_, cols) = vx.rows_cols();
        if scale.len() != cols || shift.len() != cols {
            return Err(Error::shape(
                "affine",
                format!("{} columns vs {}/{} coefficients", cols, scale.len(), shift.len()),
            ));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * scale[i % cols] + shift[i % cols])
            .collect();
        let v = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(v, Op::Affine { input: x, scale }, rg)
    }

    /// Multiply every element of `a` by the one-element node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", "multiplier must hold one value"));
        }
        let sv = self.value(s).item();
        let v = self.value(a).map(|x| x * sv);
        let rg = self.rg(&[a, s]);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    /// `x[n×d] + b[d]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(b));
        let (_, cols) = vx.rows_cols();
        if vb.len() != cols {
            return Err(Error::shape(
                "add_row_bias",
                format!("{} columns vs bias {:?}", cols, vb.shape()),
            ));
        }
        let bd = vb.data();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % cols])
            .collect();
        let v = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, b]);
        self.push(v, Op::AddRowBias(x, b), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let v = Tensor::new(vec![m, n], matmul_raw(va.data(), vb.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// 2-D cross-correlation of `x[h×w×c_in]` with `kernel[k_h×k_w×c_in×c_out]`
    /// and "same" zero padding. Kernel extents must be odd.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (vx, vk) = (self.value(x), self.value(kernel));
        if vk.rank() != 4 {
            return Err(Error::shape("conv2d", format!("kernel {:?}", vk.shape())));
        }
        if vk.shape()[0] % 2 == 0 || vk.shape()[1] % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel extents must be odd, got {}x{}",
                vk.shape()[0],
                vk.shape()[1]
            )));
        }
        if vx.rank() != 3 || vx.shape()[2] != vk.shape()[2] {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} vs kernel {:?}", vx.shape(), vk.shape()),
            ));
        }
        let v = conv2d_forward(vx, vk);
        let rg = self.rg(&[x, kernel]);
        self.push(v, Op::Conv2d(x, kernel), rg)
    }

    /// Normalize over the last dimension, then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = vx.rows_cols();
        if d == 0 || vg.len() != d || vb.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", vx.shape(), vg.shape(), vb.shape()),
            ));
        }
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * vg.data()[j] + vb.data()[j];
            }
        }
        let v = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            v,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(v, Op::Log(a), rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| 1.0 / x);
        let rg = self.rg(&[a]);
        self.push(v, Op::Recip(a), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let v = Tensor::scalar(va.data().iter().sum::<f64>() / va.len() as f64);
        let rg = self.rg(&[a]);
        self.push(v, Op::Mean(a), rg)
    }

    /// Mean over the first dimension of a matrix: `[n×d] -> [d]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 2 || va.shape()[0] == 0 {
            return Err(Error::shape("mean_rows", format!("{:?}", va.shape())));
        }
        let (n, d) = (va.shape()[0], va.shape()[1]);
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&va.data()[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::MeanRows(a), rg)
    }

    /// Concatenate flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        let rg = self.rg(parts);
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg)
    }

    /// Stack one-element nodes into a vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::with_capacity(scalars.len());
        for &s in scalars {
            let v = self.value(s);
            if v.len() != 1 {
                return Err(Error::shape("stack", format!("element of shape {:?}", v.shape())));
            }
            data.push(v.item());
        }
        let rg = self.rg(scalars);
        self.push(Tensor::vector(data), Op::Stack(scalars.to_vec()), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        self.push(v, Op::Reshape(a), rg)
    }

    /// Zero-extend the first dimension to `rows`.
    pub fn pad_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() == 0 || rows < va.shape()[0] {
            return Err(Error::shape("pad_rows", format!("{:?} to {rows} rows", va.shape())));
        }
        let mut shape = va.shape().to_vec();
        shape[0] = rows;
        let mut data = va.data().to_vec();
        data.resize(shape.iter().product(), 0.0);
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        self.push(v, Op::PadRows(a), rg)
    }

    /// Zero-pad a `[k×k×c_in×c_out]` kernel to `[size×size×c_in×c_out]`
    /// with the original taps in the middle. Both extents must be odd.
    pub fn center_kernel(&mut self, a: NodeId, size: usize) -> Result<NodeId> {
        let va = self.value(a);
        let s = va.shape();
        if s.len() != 4 || s[0] != s[1] || s[0] > size || (size - s[0]) % 2 != 0 {
            return Err(Error::shape("center_kernel", format!("{s:?} into {size}x{size}")));
        }
        let v = Tensor::new(vec![size, size, s[2], s[3]], center_taps(va.data(), s[0], size, s[2] * s[3]))?;
        let rg = self.rg(&[a]);
        self.push(v, Op::CenterKernel(a), rg)
    }

    /// Keep the first `rows` entries of the first dimension.
    pub fn truncate_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() == 0 || rows > va.shape()[0] {
            return Err(Error::shape(
                "truncate_rows",
                format!("{:?} to {rows} rows", va.shape()),
            ));
        }
        let mut shape = va.shape().to_vec();
        shape[0] = rows;
        let n = shape.iter().product();
        let v = Tensor::new(shape, va.data()[..n].to_vec())?;
        let rg = self.rg(&[a]);
        self.push(v, Op::TruncateRows(a), rg)
    }

    /// Contiguous range of a flattened tensor as a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.len() {
            return Err(Error::shape(
                "slice",
                format!("{start}..{} of {} values", start + len, va.len()),
            ));
        }
        let v = Tensor::vector(va.data()[start..start + len].to_vec());
        let rg = self.rg(&[a]);
        self.push(v, Op::Slice { input: a, start }, rg)
    }

    /// Single element of a flattened tensor as a scalar.
    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let s = self.slice(a, i, 1)?;
        self.reshape(s, Vec::new())
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let v = Tensor::scalar(va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum());
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Dot(a, b), rg)
    }

    /// `log Σ exp(v)` computed with max subtraction.
    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::shape("log_sum_exp", "empty tensor"));
        }
        let m = va.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = va.data().iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let softmax = exps.iter().map(|e| e / total).collect();
        let v = Tensor::scalar(m + total.ln());
        let rg = self.rg(&[a]);
        self.push(v, Op::LogSumExp { input: a, softmax }, rg)
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |id: NodeId, contrib: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.axpy(1.0, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(g, val(*b), |x, y| x * y));
                acc(*b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::Affine { input, scale } => {
                let cols = scale.len();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * scale[i % cols])
                    .collect();
                acc(*input, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::MulScalar(a, s) => {
                let sv = val(*s).item();
                acc(*a, g.map(|v| v * sv));
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                acc(*s, Tensor::full(val(*s).shape(), ds));
            }
            Op::AddRowBias(x, b) => {
                acc(*x, g.clone());
                let cols = val(*b).len();
                let mut gb = vec![0.0; cols];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % cols] += v;
                }
                acc(*b, Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.data()[i * n + j] * vb.data()[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    acc(*a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = va.data()[i * k + p];
                            let row = &mut gb[p * n..(p + 1) * n];
                            for (o, gv) in row.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                                *o += av * gv;
                            }
                        }
                    }
                    acc(*b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::Conv2d(x, k) => {
                let (gx, gk) = conv2d_backward(
                    val(*x),
                    val(*k),
                    g,
                    self.nodes[x.0].requires_grad,
                    self.nodes[k.0].requires_grad,
                );
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                if let Some(gk) = gk {
                    acc(*k, gk);
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = val(*gain).len();
                let rows = inv_std.len();
                let gd = val(*gain).data();
                let mut gx = vec![0.0; rows * d];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let go = &g.data()[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = go[j] * gd[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                        ggain[j] += go[j] * xh[j];
                        gbias[j] += go[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = go[j] * gd[j];
                        gx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                acc(*input, Tensor::new(val(*input).shape().to_vec(), gx).unwrap());
                acc(*gain, Tensor::new(val(*gain).shape().to_vec(), ggain).unwrap());
                acc(*bias, Tensor::new(val(*bias).shape().to_vec(), gbias).unwrap());
            }
            Op::Gelu(a) => acc(*a, zip_map(g, val(*a), |gv, x| gv * gelu_grad(x))),
            Op::Relu(a) => acc(*a, zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Exp(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * y)),
            Op::Log(a) => acc(*a, zip_map(g, val(*a), |gv, x| gv / x)),
            Op::Sqrt(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * 0.5 / y)),
            Op::Recip(a) => acc(*a, zip_map(g, &node.value, |gv, y| -gv * y * y)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::MeanRows(a) => {
                let (n, d) = (val(*a).shape()[0], val(*a).shape()[1]);
                let mut out = Vec::with_capacity(n * d);
                for _ in 0..n {
                    out.extend(g.data().iter().map(|v| v / n as f64));
                }
                acc(*a, Tensor::new(vec![n, d], out).unwrap());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape().to_vec();
                    let len = val(p).len();
                    let piece = g.data()[offset..offset + len].to_vec();
                    acc(p, Tensor::new(shape, piece).unwrap());
                    offset += len;
                }
            }
            Op::Stack(scalars) => {
                for (i, &s) in scalars.iter().enumerate() {
                    acc(s, Tensor::full(val(s).shape(), g.data()[i]));
                }
            }
            Op::Reshape(a) => {
                acc(*a, g.clone().reshaped(val(*a).shape().to_vec()).unwrap());
            }
            Op::PadRows(a) => {
                let n = val(*a).len();
                acc(
                    *a,
                    Tensor::new(val(*a).shape().to_vec(), g.data()[..n].to_vec()).unwrap(),
                );
            }
            Op::CenterKernel(a) => {
                let s = val(*a).shape();
                let (k, size, inner) = (s[0], g.shape()[0], s[2] * s[3]);
                let off = (size - k) / 2;
                let mut data = Vec::with_capacity(val(*a).len());
                for r in 0..k {
                    let start = ((r + off) * size + off) * inner;
                    data.extend_from_slice(&g.data()[start..start + k * inner]);
                }
                acc(*a, Tensor::new(s.to_vec(), data).unwrap());
            }
            Op::TruncateRows(a) => {
                let mut data = g.data().to_vec();
                data.resize(val(*a).len(), 0.0);
                acc(*a, Tensor::new(val(*a).shape().to_vec(), data).unwrap());
            }
            Op::Slice { input, start } => {
                let mut data = vec![0.0; val(*input).len()];
                data[*start..*start + g.len()].copy_from_slice(g.data());
                acc(*input, Tensor::new(val(*input).shape().to_vec(), data).unwrap());
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                acc(*a, val(*b).map(|v| v * gv));
                acc(*b, val(*a).map(|v| v * gv));
            }
            Op::LogSumExp { input, softmax } => {
                let gv = g.item();
                let data = softmax.iter().map(|p| p * gv).collect();
                acc(*input, Tensor::new(val(*input).shape().to_vec(), data).unwrap());
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
