//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs are earlier nodes, so the node
//! list is already in topological order and backward is a single reverse
//! sweep.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Tanh approximation.
    Gelu,
    Sigmoid,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

const GELU_C: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    Scale { x: Var, factor: T },
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Act { x: Var, kind: Activation },
    Bce { p: Var, clamped: Vec<T>, targets: Vec<T> },
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    MeanRows(Var),
    Gather { table: Var, ids: Vec<usize> },
    Sum(Var),
    Reshape(Var),
    Dropout { x: Var, mask: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Softmax(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Act { .. } => "activation",
            Op::Bce { .. } => "bce_loss",
            Op::Concat { .. } => "concat",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::MeanRows(_) => "mean_pool_rows",
            Op::Gather { .. } => "embedding_lookup",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::Dropout { .. } => "dropout",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// The tape. Values are immutable once recorded.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Matrix product, optionally transposing either operand first.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b), ta, tb)?;
        self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix_dims()?;
        if self.shape(row) != [n] {
            return Err(Error::shape(format!(
                "add_row: row {:?} does not broadcast over {:?}",
                self.shape(row),
                self.shape(x)
            )));
        }
        let r = self.value(row).data();
        let mut out = self.value(x).clone();
        for i in 0..m {
            for (o, &b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow { x, row }, &[x, row])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).as_matrix_dims()?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n).take(m) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let inv = T::one() / total;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Per-row standardization (population variance, `eps` under the root)
    /// followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::Precondition("layer_norm eps must be positive".into()));
        }
        let (m, n) = self.value(x).as_matrix_dims()?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::shape(format!(
                "layer_norm: gain {:?} / bias {:?} vs input {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            )));
        }
        let inv_n = T::one() / T::of(n as f64);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let src = self.value(x).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in src.chunks(n) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), out);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Gelu => self.value(x).map(gelu),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push(out, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `targets`.
    pub fn bce_loss(&mut self, p: Var, targets: &[T]) -> Result<Var> {
        let probs = self.value(p);
        if probs.rank() != 1 || probs.numel() != targets.len() {
            return Err(Error::shape(format!(
                "bce_loss: probabilities {:?} vs {} labels",
                probs.shape(),
                targets.len()
            )));
        }
        let lo = T::of(PROB_CLAMP);
        let hi = T::one() - lo;
        let clamped: Vec<T> = probs.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let n = T::of(targets.len() as f64);
        let total: T = clamped
            .iter()
            .zip(targets)
            .map(|(&q, &y)| -(y * q.ln() + (T::one() - y) * (T::one() - q).ln()))
            .sum();
        let out = Tensor::scalar(total / n);
        self.push(
            out,
            Op::Bce {
                p,
                clamped,
                targets: targets.to_vec(),
            },
            &[p],
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&values, axis)?;
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, end)?;
        self.push(out, Op::SliceRows { x, start }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, end)?;
        self.push(out, Op::SliceCols { x, start }, &[x])
    }

    /// Splits a matrix at `at` along `axis`.
    pub fn split(&mut self, x: Var, axis: usize, at: usize) -> Result<(Var, Var)> {
        let (m, n) = self.value(x).dims2()?;
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || at == 0 || at >= extent {
            return Err(Error::Bounds(format!(
                "split point {at} on axis {axis} of shape {:?}",
                self.shape(x)
            )));
        }
        if axis == 0 {
            Ok((self.slice_rows(x, 0, at)?, self.slice_rows(x, at, m)?))
        } else {
            Ok((self.slice_cols(x, 0, at)?, self.slice_cols(x, at, n)?))
        }
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push(out, Op::Transpose(x), &[x])
    }

    /// Column means: `m×n` to a length-`n` vector.
    pub fn mean_pool_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mean_rows()?;
        self.push(out, Op::MeanRows(x), &[x])
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = self.value(table).gather_rows(ids)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or 1).
    pub fn dropout(&mut self, x: Var, keep: &[bool], rate: T) -> Result<Var> {
        if keep.len() != self.value(x).numel() {
            return Err(Error::shape("dropout mask length differs from input"));
        }
        let scale = T::one() / (T::one() - rate);
        let mask: Vec<T> = keep
            .iter()
            .map(|&k| if k { scale } else { T::zero() })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// requires them. Gradients from multiple uses of a node are summed.
    /// The tape can be swept once; later calls fail.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let seed = self.value(loss).map(|_| T::one());
        self.nodes[loss.0].grad = Some(seed);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &upstream)?;
            self.nodes[i].grad = Some(upstream);
            for (target, g) in contributions {
                let node = &mut self.nodes[target.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = self.value(a);
                let bv = self.value(b);
                if self.wants(a) {
                    // C = op(A)·op(B)
                    let ga = if ta {
                        bv.matmul_t(dy, tb, true)?
                    } else {
                        dy.matmul_t(bv, false, !tb)?
                    };
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let gb = if tb {
                        dy.matmul_t(av, true, ta)?
                    } else {
                        av.matmul_t(dy, !ta, false)?
                    };
                    out.push((b, gb));
                }
            }
            &Op::Add(a, b) => {
                out.push((a, dy.clone()));
                out.push((b, dy.clone()));
            }
            &Op::Sub(a, b) => {
                out.push((a, dy.clone()));
                out.push((b, dy.map(|v| -v)));
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    out.push((a, dy.zip_map(self.value(b), |g, y| g * y)));
                }
                if self.wants(b) {
                    out.push((b, dy.zip_map(self.value(a), |g, x| g * x)));
                }
            }
            &Op::AddRow { x, row } => {
                out.push((x, dy.clone()));
                if self.wants(row) {
                    let n = self.value(row).numel();
                    let mut g = vec![T::zero(); n];
                    for chunk in dy.data().chunks(n) {
                        for (acc, &v) in g.iter_mut().zip(chunk) {
                            *acc += v;
                        }
                    }
                    out.push((row, Tensor::from_parts(vec![n], g)));
                }
            }
            &Op::Scale { x, factor } => out.push((x, dy.map(|v| v * factor))),
            &Op::Softmax(x) => {
                let y = &node.value;
                let (_, n) = y.as_matrix_dims()?;
                let mut g = dy.clone();
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow) {
                        *gv = yv * (*gv - dot);
                    }
                }
                out.push((x, g));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).numel();
                let g = self.value(*gain).data();
                if self.wants(*x) {
                    let inv_n = T::one() / T::of(n as f64);
                    let mut dx = Vec::with_capacity(dy.numel());
                    for ((drow, hrow), &r) in dy.data().chunks(n).zip(xhat.chunks(n)).zip(rstd) {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..n {
                            let d = drow[j] * g[j];
                            mean_d += d;
                            mean_dh += d * hrow[j];
                        }
                        mean_d *= inv_n;
                        mean_dh *= inv_n;
                        for j in 0..n {
                            let d = drow[j] * g[j];
                            dx.push(r * (d - mean_d - hrow[j] * mean_dh));
                        }
                    }
                    out.push((*x, Tensor::from_parts(dy.shape().to_vec(), dx)));
                }
                if self.wants(*gain) || self.wants(*bias) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for (drow, hrow) in dy.data().chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += drow[j] * hrow[j];
                            db[j] += drow[j];
                        }
                    }
                    out.push((*gain, Tensor::from_parts(vec![n], dg)));
                    out.push((*bias, Tensor::from_parts(vec![n], db)));
                }
            }
            &Op::Act { x, kind } => {
                let g = match kind {
                    Activation::Relu => dy.zip_map(self.value(x), |g, v| {
                        if v > T::zero() {
                            g
                        } else {
                            T::zero()
                        }
                    }),
                    Activation::Gelu => dy.zip_map(self.value(x), |g, v| g * gelu_grad(v)),
                    Activation::Sigmoid => {
                        dy.zip_map(&node.value, |g, s| g * s * (T::one() - s))
                    }
                };
                out.push((x, g));
            }
            Op::Bce {
                p,
                clamped,
                targets,
            } => {
                // Evaluated at the clamped probability so saturated outputs
                // still receive a finite, non-zero signal.
                let scale = dy.data()[0] / T::of(targets.len() as f64);
                let g: Vec<T> = clamped
                    .iter()
                    .zip(targets)
                    .map(|(&q, &y)| scale * (-y / q + (T::one() - y) / (T::one() - q)))
                    .collect();
                out.push((*p, Tensor::from_parts(vec![g.len()], g)));
            }
            Op::Concat { parts, axis } => {
                if dy.rank() == 1 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        let g = dy.data()[offset..offset + len].to_vec();
                        out.push((p, Tensor::from_parts(vec![len], g)));
                        offset += len;
                    }
                } else {
                    let mut offset = 0;
                    for &p in parts {
                        let (m, n) = self.value(p).dims2()?;
                        let g = if *axis == 0 {
                            dy.slice_rows(offset, offset + m)?
                        } else {
                            dy.slice_cols(offset, offset + n)?
                        };
                        offset += if *axis == 0 { m } else { n };
                        out.push((p, g));
                    }
                }
            }
            &Op::SliceRows { x, start } => {
                let (_, n) = self.value(x).dims2()?;
                let mut g = self.value(x).zeros_like();
                let len = dy.numel();
                g.data_mut()[start * n..start * n + len].copy_from_slice(dy.data());
                out.push((x, g));
            }
            &Op::SliceCols { x, start } => {
                let (_, n) = self.value(x).dims2()?;
                let (_, w) = dy.dims2()?;
                let mut g = self.value(x).zeros_like();
                for (i, chunk) in dy.data().chunks(w).enumerate() {
                    g.data_mut()[i * n + start..i * n + start + w].copy_from_slice(chunk);
                }
                out.push((x, g));
            }
            &Op::Transpose(x) => out.push((x, dy.transpose()?)),
            &Op::MeanRows(x) => {
                let (m, n) = self.value(x).dims2()?;
                let inv = T::one() / T::of(m as f64);
                let mut g = Vec::with_capacity(m * n);
                for _ in 0..m {
                    g.extend(dy.data().iter().map(|&v| v * inv));
                }
                out.push((x, Tensor::from_parts(vec![m, n], g)));
            }
            Op::Gather { table, ids } => {
                let (_, d) = self.value(*table).dims2()?;
                let mut g = self.value(*table).zeros_like();
                for (k, &id) in ids.iter().enumerate() {
                    let dst = &mut g.data_mut()[id * d..(id + 1) * d];
                    for (a, &b) in dst.iter_mut().zip(&dy.data()[k * d..(k + 1) * d]) {
                        *a += b;
                    }
                }
                out.push((*table, g));
            }
            &Op::Sum(x) => {
                let s = dy.data()[0];
                out.push((x, self.value(x).map(|_| s)));
            }
            &Op::Reshape(x) => out.push((x, dy.reshape(self.shape(x))?)),
            Op::Dropout { x, mask } => {
                let mut g = dy.clone();
                for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                out.push((*x, g));
            }
        }
        Ok(out)
    }
}

/// Logistic function clamped to the open unit interval.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(T::one() - half_eps)
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}
