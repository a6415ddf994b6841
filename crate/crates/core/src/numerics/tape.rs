//! Reverse-mode differentiation over a linear op record.
//!
//! A [`Tape`] owns every intermediate value. Ops append a node holding the
//! forward result plus whatever the backward rule needs; [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Tensor),
    Relu(usize),
    Gelu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv2dValid {
        input: usize,
        filters: usize,
    },
    ChannelBias {
        x: usize,
        bias: usize,
    },
    MaxPoolFull {
        x: usize,
        argmax: Vec<usize>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    SelectRows {
        x: usize,
        rows: Vec<usize>,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    StackColumns(Vec<usize>),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    MeanRows {
        x: usize,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of primitive ops for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(outer, len, inner)` strides for reducing along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite forward value from {op:?}");
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Forward value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    /// Records a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn two_d(&self, i: usize, op: &'static str) -> Result<(usize, usize)> {
        self.val(i)
            .dims2()
            .ok_or_else(|| Error::shape(op, self.val(i).shape(), &[0, 0]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.two_d(ia, "matmul")?;
        let (k2, n) = self.two_d(ib, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.val(ia).shape(), self.val(ib).shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(ia, ib)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.two_d(ia, "matmul_bt")?;
        let (n, k2) = self.two_d(ib, "matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", self.val(ia).shape(), self.val(ib).shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(ia, ib)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.two_d(ix, "transpose")?;
        let src = self.val(ix).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(ix)))
    }

    fn same_shape(&self, ia: usize, ib: usize, op: &'static str) -> Result<()> {
        if self.val(ia).shape() != self.val(ib).shape() {
            return Err(Error::shape(op, self.val(ia).shape(), self.val(ib).shape()));
        }
        Ok(())
    }

    fn zip_with(&self, ia: usize, ib: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = self.val(ia);
        let data = a.data().iter().zip(self.val(ib).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(ia, ib, "add")?;
        let out = self.zip_with(ia, ib, |x, y| x + y);
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(ia, ib, "sub")?;
        let out = self.zip_with(ia, ib, |x, y| x - y);
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape(ia, ib, "mul")?;
        let out = self.zip_with(ia, ib, |x, y| x * y);
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    /// Adds a length-`n` bias to every trailing row of `x` (`[.., n]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let n = *self.val(ix).shape().last().unwrap_or(&0);
        if self.val(ib).len() != n || n == 0 {
            return Err(Error::shape("add_bias", self.val(ix).shape(), self.val(ib).shape()));
        }
        let b = self.val(ib).data();
        let mut out = self.val(ix).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &bv) in chunk.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(ix, ib)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v * k);
        Ok(self.push(out, Op::Scale(ix, k)))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, k: Tensor) -> Result<Var> {
        let ix = self.check(x)?;
        if self.val(ix).shape() != k.shape() {
            return Err(Error::shape("mul_const", self.val(ix).shape(), k.shape()));
        }
        let data = self.val(ix).data().iter().zip(k.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::new(k.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(ix, k)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(ix)))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(gelu);
        Ok(self.push(out, Op::Gelu(ix)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(ix)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(ix)))
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(x, axis, None)
    }

    /// Softmax along `axis`; positions along that axis with `keep[i] == false`
    /// behave as if their logit were −∞ and receive probability exactly 0.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, keep: Option<&[bool]>) -> Result<Var> {
        let ix = self.check(x)?;
        let shape = self.val(ix).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_layout(&shape, axis);
        if let Some(k) = keep {
            if k.len() != len || !k.iter().any(|&b| b) {
                return Err(Error::shape("softmax mask", &shape, &[k.len()]));
            }
        }
        let kept = |i: usize| keep.is_none_or(|k| k[i]);
        let src = self.val(ix).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for inn in 0..inner {
                let at = |i: usize| (o * len + i) * inner + inn;
                let max = (0..len)
                    .filter(|&i| kept(i))
                    .map(|i| src[at(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in (0..len).filter(|&i| kept(i)) {
                    let e = (src[at(i)] - max).exp();
                    out[at(i)] = e;
                    total += e;
                }
                for i in (0..len).filter(|&i| kept(i)) {
                    out[at(i)] /= total;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x: ix, axis }))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let shape = self.val(ix).shape().to_vec();
        let n = *shape.last().unwrap_or(&0);
        if n == 0 || self.val(ig).len() != n || self.val(ib).len() != n {
            return Err(Error::shape("layer_norm", &shape, self.val(ig).shape()));
        }
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let src = self.val(ix).data();
        let rows = src.len() / n;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                inv_std,
            },
        ))
    }

    /// Valid (unpadded) 2-D convolution, stride 1.
    ///
    /// `input` is `[H, W]`, `filters` is `[F, h, w]`; the result is
    /// `[F, H-h+1, W-w+1]` with `out[f,i,j] = Σ input[i+a, j+b]·filters[f,a,b]`.
    pub fn conv2d_valid(&mut self, input: Var, filters: Var) -> Result<Var> {
        let (ii, iff) = (self.check(input)?, self.check(filters)?);
        let (ih, iw) = self.two_d(ii, "conv2d_valid")?;
        let fshape = self.val(iff).shape().to_vec();
        let [nf, fh, fw] = fshape[..] else {
            return Err(Error::shape("conv2d_valid", &[ih, iw], &fshape));
        };
        if fh > ih || fw > iw || fh == 0 || fw == 0 {
            return Err(Error::shape("conv2d_valid", &[ih, iw], &fshape));
        }
        let (oh, ow) = (ih - fh + 1, iw - fw + 1);
        let x = self.val(ii).data();
        let w = self.val(iff).data();
        let mut out = vec![0.0; nf * oh * ow];
        for f in 0..nf {
            let wf = &w[f * fh * fw..(f + 1) * fh * fw];
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for a in 0..fh {
                        let xr = &x[(i + a) * iw + j..(i + a) * iw + j + fw];
                        let wr = &wf[a * fw..(a + 1) * fw];
                        s += xr.iter().zip(wr).map(|(p, q)| p * q).sum::<f64>();
                    }
                    out[(f * oh + i) * ow + j] = s;
                }
            }
        }
        let out = Tensor::new(vec![nf, oh, ow], out)?;
        Ok(self.push(out, Op::Conv2dValid { input: ii, filters: iff }))
    }

    /// Adds `bias[f]` to every element of channel `f` of `x` (`[F, ..]`).
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let shape = self.val(ix).shape().to_vec();
        let nf = *shape.first().unwrap_or(&0);
        if self.val(ib).len() != nf || nf == 0 {
            return Err(Error::shape("channel_bias", &shape, self.val(ib).shape()));
        }
        let per = self.val(ix).len() / nf;
        let b = self.val(ib).data().to_vec();
        let mut out = self.val(ix).clone();
        for (f, chunk) in out.data_mut().chunks_mut(per).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[f]);
        }
        Ok(self.push(out, Op::ChannelBias { x: ix, bias: ib }))
    }

    /// Global max pooling of each map.
    ///
    /// For `[F, ..]` input the result is `[F]`, the maximum of each channel;
    /// a 1-D input is a single map and yields `[1]`. Ties go to the first
    /// maximal position, which alone receives the gradient.
    pub fn max_pool_full(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if t.is_empty() {
            return Err(Error::shape("max_pool_full", t.shape(), &[1]));
        }
        let maps = if t.ndim() >= 2 { t.shape()[0] } else { 1 };
        let per = t.len() / maps;
        let mut argmax = Vec::with_capacity(maps);
        let mut out = Vec::with_capacity(maps);
        for m in 0..maps {
            let chunk = &t.data()[m * per..(m + 1) * per];
            let best = super::tensor::argmax(chunk);
            argmax.push(m * per + best);
            out.push(chunk[best]);
        }
        Ok(self.push(Tensor::vector(out), Op::MaxPoolFull { x: ix, argmax }))
    }

    /// Rows of `table` (`[V, d]`) gathered by id, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let (v, d) = self.two_d(it, "embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange {
                    id: id as u32,
                    vocab_size: v,
                });
            }
            out.extend_from_slice(self.val(it).row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of softmax(`logits`) over rows with a
    /// target. `logits` is `[n, C]` (or `[C]` for a single row).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let il = self.check(logits)?;
        let t = self.val(il);
        let c = *t.shape().last().unwrap_or(&0);
        let rows = if c == 0 { 0 } else { t.len() / c };
        if rows != targets.len() || c == 0 {
            return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        let present = targets.iter().flatten().count();
        if present == 0 {
            return Err(Error::shape("cross_entropy", t.shape(), &[0]));
        }
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            if let Some(y) = targets[r] {
                if y >= c {
                    return Err(Error::LabelOutOfRange { label: y, n_classes: c });
                }
                loss += lse - row[y];
            }
        }
        loss /= present as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.two_d(ix, "select_rows")?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(Error::shape("select_rows", &[r, c], &[row]));
            }
            out.extend_from_slice(self.val(ix).row(row));
        }
        let out = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                x: ix,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.two_d(ix, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::shape("slice_cols", &[r, c], &[start, end]));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.val(ix).row(i)[start..end]);
        }
        let out = Tensor::new(vec![r, w], out)?;
        Ok(self.push(out, Op::SliceCols { x: ix, start }))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *idx.first().ok_or_else(|| Error::shape("concat_cols", &[], &[]))?;
        let (r, _) = self.two_d(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (ri, ci) = self.two_d(i, "concat_cols")?;
            if ri != r {
                return Err(Error::shape("concat_cols", self.val(first).shape(), self.val(i).shape()));
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for &i in &idx {
                out.extend_from_slice(self.val(i).row(row));
            }
        }
        let out = Tensor::new(vec![r, total], out)?;
        Ok(self.push(out, Op::ConcatCols(idx)))
    }

    /// Stacks `n` vectors of length `H` (shape `[H]` or `[1, H]`) as the
    /// columns of an `[H, n]` matrix, in argument order.
    pub fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let idx = cols.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = *idx.first().ok_or_else(|| Error::shape("stack_columns", &[], &[]))?;
        let h = self.val(first).len();
        for &i in &idx {
            if self.val(i).len() != h {
                return Err(Error::shape("stack_columns", self.val(first).shape(), self.val(i).shape()));
            }
        }
        let n = idx.len();
        let mut out = vec![0.0; h * n];
        for (j, &i) in idx.iter().enumerate() {
            for (r, &v) in self.val(i).data().iter().enumerate() {
                out[r * n + j] = v;
            }
        }
        let out = Tensor::new(vec![h, n], out)?;
        Ok(self.push(out, Op::StackColumns(idx)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(ix)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let s = self.val(ix).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(ix)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if t.is_empty() {
            return Err(Error::shape("mean", t.shape(), &[1]));
        }
        let m = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(ix)))
    }

    /// Mean of the first `count` rows of a 2-D tensor, as `[1, C]`.
    pub fn mean_rows(&mut self, x: Var, count: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let (r, c) = self.two_d(ix, "mean_rows")?;
        if count == 0 || count > r {
            return Err(Error::shape("mean_rows", &[r, c], &[count]));
        }
        let mut out = vec![0.0; c];
        for i in 0..count {
            for (o, &v) in out.iter_mut().zip(self.val(ix).row(i)) {
                *o += v / count as f64;
            }
        }
        let out = Tensor::new(vec![1, c], out)?;
        Ok(self.push(out, Op::MeanRows { x: ix, count }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.val(il).len() != 1 {
            return Err(Error::shape("backward", self.val(il).shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::filled(self.val(il).shape().to_vec(), 1.0));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.val(*a).dims2().unwrap();
                let n = self.val(*b).shape()[1];
                let mut ga = vec![0.0; m * k];
                matmul_bt_into(gd, self.val(*b).data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_at_into(self.val(*a).data(), gd, &mut gb, m, k, n);
                accumulate(grads, *a, ga, self.val(*a).shape());
                accumulate(grads, *b, gb, self.val(*b).shape());
            }
            Op::MatMulBt(a, b) => {
                // y = a bᵀ: ga = g b, gb = gᵀ a
                let (m, k) = self.val(*a).dims2().unwrap();
                let n = self.val(*b).shape()[0];
                let mut ga = vec![0.0; m * k];
                matmul_into(gd, self.val(*b).data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; n * k];
                matmul_at_into(gd, self.val(*a).data(), &mut gb, m, n, k);
                accumulate(grads, *a, ga, self.val(*a).shape());
                accumulate(grads, *b, gb, self.val(*b).shape());
            }
            Op::Transpose(x) => {
                let (r, c) = self.val(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        gx[a * c + b] = gd[b * r + a];
                    }
                }
                accumulate(grads, *x, gx, self.val(*x).shape());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, gd.to_vec(), y.shape());
                accumulate(grads, *b, gd.to_vec(), y.shape());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, gd.to_vec(), y.shape());
                accumulate(grads, *b, gd.iter().map(|v| -v).collect(), y.shape());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                let ga = gd.iter().zip(bv).map(|(g, b)| g * b).collect();
                let gb = gd.iter().zip(av).map(|(g, a)| g * a).collect();
                accumulate(grads, *a, ga, y.shape());
                accumulate(grads, *b, gb, y.shape());
            }
            Op::AddBias(x, b) => {
                let n = self.val(*b).len();
                let mut gb = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (o, v) in gb.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, gd.to_vec(), y.shape());
                accumulate(grads, *b, gb, self.val(*b).shape());
            }
            Op::Scale(x, k) => {
                accumulate(grads, *x, gd.iter().map(|v| v * k).collect(), y.shape());
            }
            Op::MulConst(x, k) => {
                let gx = gd.iter().zip(k.data()).map(|(g, k)| g * k).collect();
                accumulate(grads, *x, gx, y.shape());
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                let gx = gd.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *x, gx, y.shape());
            }
            Op::Gelu(x) => {
                let xv = self.val(*x).data();
                let gx = gd.iter().zip(xv).map(|(g, &x)| g * gelu_grad(x)).collect();
                accumulate(grads, *x, gx, y.shape());
            }
            Op::Tanh(x) => {
                let gx = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                accumulate(grads, *x, gx, y.shape());
            }
            Op::Sigmoid(x) => {
                let gx = gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(grads, *x, gx, y.shape());
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_layout(y.shape(), *axis);
                let yv = y.data();
                let mut gx = vec![0.0; yv.len()];
                for o in 0..outer {
                    for inn in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + inn;
                        let dot: f64 = (0..len).map(|k| gd[at(k)] * yv[at(k)]).sum();
                        for k in 0..len {
                            gx[at(k)] = yv[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, gx, y.shape());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.val(*gain).data();
                let n = gv.len();
                let rows = xhat.len() / n;
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for r in 0..rows {
                    let gr = &gd[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let nf = n as f64;
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        gx[r * n + j] = inv_std[r] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, gx, y.shape());
                accumulate(grads, *gain, gg, self.val(*gain).shape());
                accumulate(grads, *bias, gb, self.val(*bias).shape());
            }
            Op::Conv2dValid { input, filters } => {
                let (ih, iw) = self.val(*input).dims2().unwrap();
                let fs = self.val(*filters).shape();
                let (nf, fh, fw) = (fs[0], fs[1], fs[2]);
                let (oh, ow) = (ih - fh + 1, iw - fw + 1);
                let xv = self.val(*input).data();
                let wv = self.val(*filters).data();
                let mut gx = vec![0.0; ih * iw];
                let mut gw = vec![0.0; nf * fh * fw];
                for f in 0..nf {
                    for i in 0..oh {
                        for j in 0..ow {
                            let go = gd[(f * oh + i) * ow + j];
                            if go == 0.0 {
                                continue;
                            }
                            for a in 0..fh {
                                for b in 0..fw {
                                    let xi = (i + a) * iw + j + b;
                                    let wi = (f * fh + a) * fw + b;
                                    gx[xi] += go * wv[wi];
                                    gw[wi] += go * xv[xi];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *input, gx, self.val(*input).shape());
                accumulate(grads, *filters, gw, self.val(*filters).shape());
            }
            Op::ChannelBias { x, bias } => {
                let nf = self.val(*bias).len();
                let per = gd.len() / nf;
                let gb = gd.chunks(per).map(|c| c.iter().sum()).collect();
                accumulate(grads, *x, gd.to_vec(), y.shape());
                accumulate(grads, *bias, gb, self.val(*bias).shape());
            }
            Op::MaxPoolFull { x, argmax } => {
                let mut gx = vec![0.0; self.val(*x).len()];
                for (m, &pos) in argmax.iter().enumerate() {
                    gx[pos] += gd[m];
                }
                accumulate(grads, *x, gx, self.val(*x).shape());
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.val(*table).dims2().unwrap();
                let mut gt = vec![0.0; v * d];
                for (r, &id) in ids.iter().enumerate() {
                    for k in 0..d {
                        gt[id * d + k] += gd[r * d + k];
                    }
                }
                accumulate(grads, *table, gt, self.val(*table).shape());
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = probs.len() / targets.len();
                let present = targets.iter().flatten().count() as f64;
                let scale = gd[0] / present;
                let mut gl = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(y) = t {
                        for j in 0..c {
                            gl[r * c + j] = scale * probs[r * c + j];
                        }
                        gl[r * c + y] -= scale;
                    }
                }
                accumulate(grads, *logits, gl, self.val(*logits).shape());
            }
            Op::SelectRows { x, rows } => {
                let (r, c) = self.val(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for (k, &row) in rows.iter().enumerate() {
                    for j in 0..c {
                        gx[row * c + j] += gd[k * c + j];
                    }
                }
                accumulate(grads, *x, gx, self.val(*x).shape());
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.val(*x).dims2().unwrap();
                let w = y.shape()[1];
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                accumulate(grads, *x, gx, self.val(*x).shape());
            }
            Op::ConcatCols(parts) => {
                let total = y.shape()[1];
                let rows = y.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.val(p).shape()[1];
                    let mut gp = vec![0.0; rows * w];
                    for r in 0..rows {
                        gp[r * w..(r + 1) * w]
                            .copy_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, gp, self.val(p).shape());
                    offset += w;
                }
            }
            Op::StackColumns(cols) => {
                let n = cols.len();
                for (j, &p) in cols.iter().enumerate() {
                    let h = self.val(p).len();
                    let gp = (0..h).map(|r| gd[r * n + j]).collect();
                    accumulate(grads, p, gp, self.val(p).shape());
                }
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, gd.to_vec(), self.val(*x).shape());
            }
            Op::Sum(x) => {
                let n = self.val(*x).len();
                accumulate(grads, *x, vec![gd[0]; n], self.val(*x).shape());
            }
            Op::Mean(x) => {
                let n = self.val(*x).len();
                accumulate(grads, *x, vec![gd[0] / n as f64; n], self.val(*x).shape());
            }
            Op::MeanRows { x, count } => {
                let (r, c) = self.val(*x).dims2().unwrap();
                let mut gx = vec![0.0; r * c];
                for i in 0..*count {
                    for j in 0..c {
                        gx[i * c + j] = gd[j] / *count as f64;
                    }
                }
                accumulate(grads, *x, gx, self.val(*x).shape());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Vec<f64>, shape: &[usize]) {
    match &mut grads[idx] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape")),
    }
}

/// Result of a reverse sweep: `d loss / d v` for every recorded variable.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::NotOnTape);
        }
        Ok(self.grads[v.index]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.index].clone())))
    }

    /// Moves out the gradient of `v` (zero when unreachable).
    pub fn take(&mut self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::NotOnTape);
        }
        Ok(self.grads[v.index]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.index].clone())))
    }
}
