//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Tape`] records each primitive as it is evaluated; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints. One tape serves one
//! forward pass. Tapes are independent values, so separate samples can be
//! processed on separate threads and their gradients summed afterwards.
//!
//! Shape errors inside primitives are programming errors and panic; the
//! public kernels in [`super::kernels`] validate shapes up front.

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive logit for disallowed attention entries.
pub const MASK_LOGIT: f64 = -1e30;
/// Softmax weights below this are flushed to exactly zero.
pub const WEIGHT_FLUSH: f64 = 1e-300;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Swish(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Rows(Var, usize),
    SumAll(Var),
    LogCoshMean(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Swish(_) => "swish",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout(..) => "dropout",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Rows(..) => "rows",
            Op::SumAll(_) => "sum",
            Op::LogCoshMean(..) => "logcosh",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<String>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `log(cosh(e))` without overflow: `|e| + log(1 + exp(-2|e|)) - log 2`.
pub fn logcosh(e: f64) -> f64 {
    let a = e.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Error naming the first primitive that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match &self.fault {
            Some(op) => Err(Error::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.name().to_string());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf value; `requires_grad` decides whether backward reports it.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A trainable parameter leaf tagged with its index in a parameter store.
    pub fn param(&mut self, id: usize, value: Tensor) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ([n, k], [k2, m]) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul {n}x{k} by {k2}x{m}");
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::from_vec(n, m, out).unwrap(), Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let ([n, k], [m, k2]) = (self.shape(a), self.shape(b));
        assert_eq!(k, k2, "matmul_nt {n}x{k} by ({m}x{k2})^T");
        let mut out = vec![0.0; n * m];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::from_vec(n, m, out).unwrap(), Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let [r, c] = self.shape(a);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::Add(a, b), ng)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let ([r, c], [one, c2]) = (self.shape(a), self.shape(row));
        assert!(one == 1 && c == c2, "add_row {r}x{c} + {one}x{c2}");
        let bias = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let ng = self.ng(&[a, row]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::AddRow(a, row), ng)
    }

    /// Dense layer `x * w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let [r, c] = self.shape(a);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let [r, c] = self.shape(a);
        let data = self.value(a).data().iter().map(|x| x * k).collect();
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::Scale(a, k), ng)
    }

    fn unary(&mut self, a: Var, f: fn(f64) -> f64, op: Op) -> Var {
        let [r, c] = self.shape(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, relu, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn swish(&mut self, a: Var) -> Var {
        self.unary(a, swish, Op::Swish(a))
    }

    /// Row-wise softmax. Entries with `allow[i] == false` get a
    /// [`MASK_LOGIT`] added before the max-subtracted exponent; resulting
    /// weights below [`WEIGHT_FLUSH`] become exactly zero.
    pub fn masked_softmax(&mut self, a: Var, allow: Option<&[bool]>) -> Var {
        let [r, c] = self.shape(a);
        if let Some(m) = allow {
            assert_eq!(m.len(), r * c, "mask size");
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            for j in 0..c {
                let masked = allow.is_some_and(|m| !m[i * c + j]);
                row[j] = x[i * c + j] + if masked { MASK_LOGIT } else { 0.0 };
            }
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
                if *v < WEIGHT_FLUSH {
                    *v = 0.0;
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, c, out).unwrap(), Op::MaskedSoftmax(a), ng)
    }

    /// Per-row layer normalization with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let [r, c] = self.shape(x);
        assert_eq!(self.shape(gain), [1, c], "layer_norm gain");
        assert_eq!(self.shape(bias), [1, c], "layer_norm bias");
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(&[x, gain, bias]);
        self.push(
            Tensor::from_vec(r, c, out).unwrap(),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Multiplies by a fixed mask of `0` / `1/(1-rate)` factors.
    pub fn dropout_mask(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let [r, c] = self.shape(a);
        assert_eq!(factors.len(), r * c, "dropout mask size");
        let data = self.value(a).data().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::Dropout(a, factors), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let [r, c] = self.shape(a);
        assert!(start + len <= c, "slice_cols {start}+{len} > {c}");
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(r, len, data).unwrap(), Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let [pr, pc] = self.shape(p);
                assert_eq!(pr, r, "concat_cols row mismatch");
                pc
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let ng = self.ng(parts);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut r = 0;
        for &p in parts {
            let [pr, pc] = self.shape(p);
            assert_eq!(pc, c, "concat_rows column mismatch");
            data.extend_from_slice(self.value(p).data());
            r += pr;
        }
        let ng = self.ng(parts);
        self.push(Tensor::from_vec(r, c, data).unwrap(), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows `start..start + len`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let [r, c] = self.shape(a);
        assert!(start + len <= r, "rows {start}+{len} > {r}");
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(&[a]);
        self.push(Tensor::from_vec(len, c, data).unwrap(), Op::Rows(a, start), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Mean log-cosh error between `pred` and a constant target of equal size.
    pub fn logcosh_mean(&mut self, pred: Var, target: &[f64]) -> Var {
        let p = self.value(pred).data();
        assert_eq!(p.len(), target.len(), "logcosh length mismatch");
        assert!(!p.is_empty(), "logcosh of empty vectors");
        let l = p.iter().zip(target).map(|(a, b)| logcosh(a - b)).sum::<f64>() / p.len() as f64;
        let ng = self.ng(&[pred]);
        self.push(Tensor::scalar(l), Op::LogCoshMean(pred, target.to_vec()), ng)
    }

    /// Sign pattern (`input > 0`) of every relu element on the tape, in
    /// recording order. Two evaluations with equal patterns lie on the same
    /// linear piece of every relu.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(a) = n.op {
                out.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ([n, k], m) = (self.shape(*a), node.value.cols());
                if wants(*a) {
                    acc(*a, &mut |s| matmul_nt_into(g, val(*b), s, n, m, k));
                }
                if wants(*b) {
                    acc(*b, &mut |s| matmul_tn_into(val(*a), g, s, n, k, m));
                }
            }
            Op::MatMulNt(a, b) => {
                let ([n, k], [m, _]) = (self.shape(*a), self.shape(*b));
                if wants(*a) {
                    acc(*a, &mut |s| matmul_into(g, val(*b), s, n, m, k));
                }
                if wants(*b) {
                    acc(*b, &mut |s| matmul_tn_into(g, val(*a), s, n, m, k));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let c = node.value.cols();
                acc(*row, &mut |s| {
                    for chunk in g.chunks(c) {
                        s.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += k * y)),
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Swish(a) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let sg = sigmoid(x[i]);
                        s[i] += g[i] * (sg + x[i] * sg * (1.0 - sg));
                    }
                });
            }
            Op::MaskedSoftmax(a) => {
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, gy)| y * gy).sum();
                        for j in 0..c {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gv = val(*gain);
                acc(*x, &mut |s| {
                    for (i, &is) in inv_std.iter().enumerate() {
                        let gr = &g[i * c..(i + 1) * c];
                        let xh = &xhat[i * c..(i + 1) * c];
                        let dxh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let m1 = dxh.iter().sum::<f64>() / c as f64;
                        let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            s[i * c + j] += is * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (gr, xh) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            s[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(c) {
                        s.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Dropout(a, f) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * f[i];
                }
            }),
            Op::SliceCols(a, start) => {
                let (c, w) = (self.shape(*a)[1], node.value.cols());
                acc(*a, &mut |s| {
                    for (i, gr) in g.chunks(w).enumerate() {
                        let dst = &mut s[i * c + start..i * c + start + w];
                        dst.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let c = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    acc(p, &mut |s| {
                        for (i, gr) in g.chunks(c).enumerate() {
                            let src = &gr[off..off + w];
                            s[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(p, &mut |s| s.iter_mut().zip(&g[off..off + n]).for_each(|(x, y)| *x += y));
                    off += n;
                }
            }
            Op::Rows(a, start) => {
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    s[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::LogCoshMean(pred, target) => {
                let p = val(*pred);
                let n = p.len() as f64;
                acc(*pred, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[0] * (p[i] - target[i]).tanh() / n;
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of a node, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of a node, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }

    /// Adds `scale * grad` of every parameter leaf into `out[param_id]`.
    pub fn accumulate_params(&self, out: &mut [Vec<f64>], scale: f64) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (o, v) in out[id].iter_mut().zip(g) {
                    *o += scale * v;
                }
            }
        }
    }
}
