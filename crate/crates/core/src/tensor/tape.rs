use rand::Rng;

use super::kernels::{gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn, sigmoid};
use super::recurrent::{self, ScanCache, ScanDims, ScanGrads};
use super::{broadcast_index_map, broadcast_shape, numel, Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Tanh,
    Sigmoid,
    Gelu,
    Exp,
    Log,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Gelu => "gelu",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Scalar),
    Unary(Var, Unary),
    MatMul {
        a: Var,
        b: Var,
        batched: bool,
    },
    Transpose(Var),
    Reshape(Var),
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Scalar>,
        rstd: Vec<Scalar>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<Scalar>,
    },
    Sum(Var),
    Mean(Var),
    LstmScan {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        valid: Vec<bool>,
        reverse: bool,
        dims: ScanDims,
        cache: ScanCache,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<Scalar>>,
    requires_grad: bool,
    op: Op,
}

/// Records primitives in execution order. Node indices are topologically
/// sorted by construction: an op can only reference vars that already exist.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// (outer, len, inner) decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn add_into(dst: &mut [Scalar], src: &[Scalar]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check. Used only by callers that probe
    /// overflow behaviour deliberately.
    pub fn without_finite_check(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
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

    pub fn grad(&self, v: Var) -> Option<&[Scalar]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<Scalar>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
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

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(Scalar, Scalar) -> Scalar,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let (ma, mb) = (
            broadcast_index_map(&sa, &out_shape),
            broadcast_index_map(&sb, &out_shape),
        );
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: Scalar) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|x| x * c).collect())?;
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let src = self.value(a);
        let f: fn(Scalar) -> Scalar = match kind {
            Unary::Tanh => Scalar::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Gelu => gelu,
            Unary::Exp => Scalar::exp,
            Unary::Log => Scalar::ln,
        };
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())?;
        self.push(kind.name(), value, Op::Unary(a, kind), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]`. If `b` is `[k, n]` every leading row of `a` is
    /// multiplied by the same matrix; otherwise `b` must be `[.., k, n]` with
    /// leading dimensions identical to `a`'s.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        let m = sa[sa.len() - 2];
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batched = sb.len() > 2;
        if batched && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; numel(&out_shape)];
        if batched {
            let groups = numel(&sa[..sa.len() - 2]);
            for g in 0..groups {
                gemm_nn(
                    m,
                    k,
                    n,
                    &da[g * m * k..(g + 1) * m * k],
                    &db[g * k * n..(g + 1) * k * n],
                    &mut out[g * m * n..(g + 1) * m * n],
                );
            }
        } else {
            gemm_nn(da.len() / k, k, n, da, db, &mut out);
        }
        let value = Tensor::new(out_shape, out)?;
        self.push("matmul", value, Op::MatMul { a, b, batched }, &[a, b])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape();
        if shape.len() < 2 {
            return Err(TensorError::Axis {
                op: "transpose",
                axis: 1,
                rank: shape.len(),
            });
        }
        let (m, n) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut out_shape = shape.to_vec();
        let r = out_shape.len();
        out_shape.swap(r - 2, r - 1);
        let data = transpose_last(src.data(), m, n);
        let value = Tensor::new(out_shape, data)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = src.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| x[idx(j)])
                    .fold(Scalar::NEG_INFINITY, Scalar::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[idx(j)] - max).exp();
                    y[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    y[idx(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, y)?;
        self.push("softmax", value, Op::Softmax { a, axis }, &[a])
    }

    /// Softmax over the last axis where masked-out entries receive exactly
    /// zero weight, as if their score were −∞.
    ///
    /// `valid` holds one flag per last-axis entry for each of `G` groups;
    /// consecutive rows of `a` are split evenly across the groups. For
    /// attention scores `[B, Sq, Sk]` and a key mask of length `B·Sk`, each
    /// batch element's query rows share that element's key mask.
    pub fn masked_softmax(&mut self, a: Var, valid: &[bool]) -> Result<Var> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        let len = *shape.last().ok_or(TensorError::Axis {
            op: "masked_softmax",
            axis: 0,
            rank: 0,
        })?;
        let rows = src.len() / len;
        if valid.is_empty() || !valid.len().is_multiple_of(len) || !rows.is_multiple_of(valid.len() / len) {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![valid.len()],
            });
        }
        let rows_per_group = rows / (valid.len() / len);
        let x = src.data();
        let mut y = vec![0.0; x.len()];
        for r in 0..rows {
            let mask = &valid[(r / rows_per_group) * len..(r / rows_per_group + 1) * len];
            let row = &x[r * len..(r + 1) * len];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(Scalar::NEG_INFINITY, Scalar::max);
            if max == Scalar::NEG_INFINITY {
                return Err(TensorError::Contract(format!(
                    "masked_softmax row {r} has no valid entries"
                )));
            }
            let out = &mut y[r * len..(r + 1) * len];
            let mut total = 0.0;
            for j in 0..len {
                if mask[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(shape.clone(), y)?;
        let axis = shape.len() - 1;
        self.push("masked_softmax", value, Op::Softmax { a, axis }, &[a])
    }

    /// Standardizes over the last axis, then applies `gamma·x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Scalar) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let h = *shape.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p) != [h] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (xs, g, b) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rows = xs.len() / h;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut y = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * h..(r + 1) * h];
            let mean = row.iter().sum::<Scalar>() / h as Scalar;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Scalar>() / h as Scalar;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                y[r * h + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(shape, y)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        self.push("layer_norm", value, op, &[x, gamma, beta])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *parts
                    .first()
                    .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Copies `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if start >= end || end > shape[axis] {
            return Err(TensorError::Index {
                op: "slice",
                index: end,
                bound: shape[axis] + 1,
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let width = (end - start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor::new(out_shape, data)?;
        self.push("slice", value, Op::Slice { a, axis, start }, &[a])
    }

    /// Row lookup: `table` is `[V, H]`, result is `[ids.len(), H]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Axis {
                op: "gather",
                axis: 1,
                rank: shape.len(),
            });
        }
        let (rows, h) = (shape[0], shape[1]);
        if ids.is_empty() {
            return Err(TensorError::Contract("gather with no ids".into()));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(&src[id * h..(id + 1) * h]);
        }
        let value = Tensor::new(vec![ids.len(), h], data)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push("gather", value, op, &[table])
    }

    /// Mean cross-entropy of `logits [n, C]` against class indices.
    ///
    /// With `valid` (one flag per logit), masked classes are excluded from the
    /// normalizer; a target must be a valid class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], valid: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(mask) = valid {
            if mask.len() != n * c {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    lhs: shape,
                    rhs: vec![mask.len()],
                });
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let t = targets[r];
            let ok = |j: usize| valid.is_none_or(|m| m[r * c + j]);
            if t >= c || !ok(t) {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = (0..c)
                .filter(|&j| ok(j))
                .map(|j| row[j])
                .fold(Scalar::NEG_INFINITY, Scalar::max);
            let total: Scalar = (0..c).filter(|&j| ok(j)).map(|j| (row[j] - max).exp()).sum();
            let lse = max + total.ln();
            for j in (0..c).filter(|&j| ok(j)) {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[t];
        }
        let value = Tensor::scalar(loss / n as Scalar);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", value, op, &[logits])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a).data();
        let value = Tensor::scalar(src.iter().sum::<Scalar>() / src.len() as Scalar);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Inverted dropout as a multiply by a constant mask drawn from `rng`.
    pub fn dropout(&mut self, x: Var, rate: Scalar, rng: &mut impl Rng) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(TensorError::Contract(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 - rate;
        let shape = self.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.random::<Scalar>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// One LSTM direction over `x [B, S, In]` (or `[S, In]`), zero initial
    /// state. Steps whose `valid` flag is false are skipped.
    pub fn lstm_scan(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        valid: &[bool],
        reverse: bool,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, seq, input) = match sx.len() {
            2 => (1, sx[0], sx[1]),
            3 => (sx[0], sx[1], sx[2]),
            _ => {
                return Err(TensorError::Axis {
                    op: "lstm_scan",
                    axis: 2,
                    rank: sx.len(),
                })
            }
        };
        let sw = self.shape(w_hh).to_vec();
        let hidden = sw.first().copied().unwrap_or(0);
        let shape_err = |rhs: &[usize]| TensorError::Shape {
            op: "lstm_scan",
            lhs: sx.clone(),
            rhs: rhs.to_vec(),
        };
        if sw != [hidden, 4 * hidden] {
            return Err(shape_err(&sw));
        }
        if self.shape(w_ih) != [input, 4 * hidden] {
            return Err(shape_err(self.shape(w_ih)));
        }
        if self.shape(bias) != [4 * hidden] {
            return Err(shape_err(self.shape(bias)));
        }
        if valid.len() != batch * seq {
            return Err(shape_err(&[valid.len()]));
        }
        let dims = ScanDims {
            batch,
            seq,
            input,
            hidden,
        };
        let (out, cache) = recurrent::forward(
            dims,
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(bias).data(),
            valid,
            reverse,
        );
        let mut out_shape = sx;
        *out_shape.last_mut().unwrap() = hidden;
        let value = Tensor::new(out_shape, out)?;
        let op = Op::LstmScan {
            x,
            w_ih,
            w_hh,
            bias,
            valid: valid.to_vec(),
            reverse,
            dims,
            cache,
        };
        self.push("lstm_scan", value, op, &[x, w_ih, w_hh, bias])
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<Scalar>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => add_into(g, &contribution),
            None => node.grad = Some(contribution),
        }
    }

    /// Populates gradients of every `requires_grad` node reachable from
    /// `loss`. Gradients accumulate across multiple uses of a value and
    /// across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(TensorError::NotScalar {
                shape: shape.to_vec(),
            });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.accumulate(loss, vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, c) in contributions {
                self.accumulate(v, c);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &[Scalar]) -> Vec<(Var, Vec<Scalar>)> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let is_mul = matches!(node.op, Op::Mul(..));
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ma, mb) = (
                    broadcast_index_map(sa, out_shape),
                    broadcast_index_map(sb, out_shape),
                );
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut ga = vec![0.0; da.len()];
                    for (o, &gi) in g.iter().enumerate() {
                        ga[ma[o]] += if is_mul { gi * db[mb[o]] } else { gi };
                    }
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; db.len()];
                    for (o, &gi) in g.iter().enumerate() {
                        gb[mb[o]] += if is_mul { gi * da[ma[o]] } else { sign * gi };
                    }
                    res.push((*b, gb));
                }
            }
            Op::Scale(a, c) => res.push((*a, g.iter().map(|v| v * c).collect())),
            Op::Unary(a, kind) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga = (0..g.len())
                    .map(|j| {
                        g[j] * match kind {
                            Unary::Tanh => 1.0 - y[j] * y[j],
                            Unary::Sigmoid => y[j] * (1.0 - y[j]),
                            Unary::Gelu => gelu_grad(x[j]),
                            Unary::Exp => y[j],
                            Unary::Log => 1.0 / x[j],
                        }
                    })
                    .collect();
                res.push((*a, ga));
            }
            Op::MatMul { a, b, batched } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let k = sa[sa.len() - 1];
                let n = sb[sb.len() - 1];
                if *batched {
                    let m = sa[sa.len() - 2];
                    let groups = da.len() / (m * k);
                    let mut ga = self.wants(*a).then(|| vec![0.0; da.len()]);
                    let mut gb = self.wants(*b).then(|| vec![0.0; db.len()]);
                    for grp in 0..groups {
                        let gs = &g[grp * m * n..(grp + 1) * m * n];
                        if let Some(ga) = ga.as_mut() {
                            let bs = &db[grp * k * n..(grp + 1) * k * n];
                            gemm_nt(m, n, k, gs, bs, &mut ga[grp * m * k..(grp + 1) * m * k]);
                        }
                        if let Some(gb) = gb.as_mut() {
                            let as_ = &da[grp * m * k..(grp + 1) * m * k];
                            gemm_tn(m, k, n, as_, gs, &mut gb[grp * k * n..(grp + 1) * k * n]);
                        }
                    }
                    res.extend(ga.map(|v| (*a, v)));
                    res.extend(gb.map(|v| (*b, v)));
                } else {
                    let rows = da.len() / k;
                    if self.wants(*a) {
                        let mut ga = vec![0.0; da.len()];
                        gemm_nt(rows, n, k, g, db, &mut ga);
                        res.push((*a, ga));
                    }
                    if self.wants(*b) {
                        let mut gb = vec![0.0; db.len()];
                        gemm_tn(rows, k, n, da, g, &mut gb);
                        res.push((*b, gb));
                    }
                }
            }
            Op::Transpose(a) => {
                let r = out_shape.len();
                let (m, n) = (out_shape[r - 2], out_shape[r - 1]);
                res.push((*a, transpose_last(g, m, n)));
            }
            Op::Reshape(a) => res.push((*a, g.to_vec())),
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(out_shape, *axis);
                let mut ga = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: Scalar = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            ga[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                res.push((*a, ga));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let h = *out_shape.last().unwrap();
                let gam = self.value(*gamma).data();
                let rows = g.len() / h;
                if self.wants(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let (gr, xr) = (&g[r * h..(r + 1) * h], &xhat[r * h..(r + 1) * h]);
                        let dxh: Vec<Scalar> = (0..h).map(|j| gr[j] * gam[j]).collect();
                        let m1 = dxh.iter().sum::<Scalar>() / h as Scalar;
                        let m2 = dxh.iter().zip(xr).map(|(d, x)| d * x).sum::<Scalar>() / h as Scalar;
                        for j in 0..h {
                            gx[r * h + j] = rstd[r] * (dxh[j] - m1 - xr[j] * m2);
                        }
                    }
                    res.push((*x, gx));
                }
                if self.wants(*gamma) {
                    let mut gg = vec![0.0; h];
                    for (j, (gv, xv)) in g.iter().zip(xhat).enumerate() {
                        gg[j % h] += gv * xv;
                    }
                    res.push((*gamma, gg));
                }
                if self.wants(*beta) {
                    let mut gb = vec![0.0; h];
                    for (j, gv) in g.iter().enumerate() {
                        gb[j % h] += gv;
                    }
                    res.push((*beta, gb));
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        res.push((p, gp));
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let sa = self.shape(*a);
                let (outer, len, inner) = split_axis(sa, *axis);
                let width = out_shape[*axis] * inner;
                let mut ga = vec![0.0; numel(sa)];
                for o in 0..outer {
                    let base = (o * len + start) * inner;
                    ga[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                res.push((*a, ga));
            }
            Op::Gather { table, ids } => {
                let st = self.shape(*table);
                let h = st[1];
                let mut gt = vec![0.0; numel(st)];
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * h..(id + 1) * h], &g[r * h..(r + 1) * h]);
                }
                res.push((*table, gt));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = g[0] / n as Scalar;
                let mut gl: Vec<Scalar> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] -= scale;
                }
                res.push((*logits, gl));
            }
            Op::Sum(a) => res.push((*a, vec![g[0]; numel(self.shape(*a))])),
            Op::Mean(a) => {
                let n = numel(self.shape(*a));
                res.push((*a, vec![g[0] / n as Scalar; n]));
            }
            Op::LstmScan {
                x,
                w_ih,
                w_hh,
                bias,
                valid,
                reverse,
                dims,
                cache,
            } => {
                let buf = |v: Var| self.wants(v).then(|| vec![0.0; numel(self.shape(v))]);
                let (mut gx, mut gih, mut ghh, mut gb) = (buf(*x), buf(*w_ih), buf(*w_hh), buf(*bias));
                recurrent::backward(
                    *dims,
                    g,
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    valid,
                    *reverse,
                    cache,
                    ScanGrads {
                        x: gx.as_deref_mut(),
                        w_ih: gih.as_deref_mut(),
                        w_hh: ghh.as_deref_mut(),
                        bias: gb.as_deref_mut(),
                    },
                );
                res.extend(gx.map(|v| (*x, v)));
                res.extend(gih.map(|v| (*w_ih, v)));
                res.extend(ghh.map(|v| (*w_hh, v)));
                res.extend(gb.map(|v| (*bias, v)));
            }
        }
        res
    }
}

/// Transposes the last two axes of a buffer whose trailing matrix is `m×n`.
fn transpose_last(src: &[Scalar], m: usize, n: usize) -> Vec<Scalar> {
    let mut out = vec![0.0; src.len()];
    for (blk, chunk) in src.chunks(m * n).enumerate() {
        let dst = &mut out[blk * m * n..(blk + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = chunk[i * n + j];
            }
        }
    }
    out
}
