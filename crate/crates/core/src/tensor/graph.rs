//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in construction order. Each op's
//! inputs are earlier nodes, so walking the tape backwards is a valid
//! topological order for the chain rule. [`Graph::backward`] consumes the
//! graph, which makes a tape usable for exactly one gradient pass.

use rand::Rng;

use super::value::{strides, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        a_batch: Vec<usize>,
        b_batch: Vec<usize>,
    },
    /// `out[i] = in[map[i]]`; covers permute, slice and expand.
    Gather {
        x: Var,
        map: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Concat {
        inputs: Vec<(Var, Vec<usize>)>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    MulConst {
        x: Var,
        c: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: Axis,
    },
    LogSoftmax {
        x: Var,
        axis: Axis,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Nll {
        logp: Var,
        labels: Vec<usize>,
        classes: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Ste {
        proxy: Var,
    },
}

/// Outer/axis/inner decomposition of a reduction axis.
#[derive(Clone, Copy, Debug)]
struct Axis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Axis {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Index(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(Axis {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    fn lanes(self) -> impl Iterator<Item = (usize, usize)> {
        let (inner, len) = (self.inner, self.len);
        (0..self.outer).flat_map(move |o| (0..inner).map(move |i| (o * len * inner + i, inner)))
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batchnorm, for updating
/// running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (population variance when only one sample).
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
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

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]`.
    /// Leading batch dimensions broadcast numpy-style.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::dim(format!("matmul: cannot multiply {sa:?} by {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut out_batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                out_batch.push(x);
            } else if x == 1 {
                out_batch.push(y);
            } else {
                return Err(mismatch());
            }
        }
        let total: usize = out_batch.iter().product();
        let (sta, stb) = (strides(&pa), strides(&pb));
        let mut a_batch = Vec::with_capacity(total);
        let mut b_batch = Vec::with_capacity(total);
        let ostr = strides(&out_batch);
        for flat in 0..total {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                let idx = (flat / ostr[d]) % out_batch[d];
                if pa[d] != 1 {
                    ia += idx * sta[d];
                }
                if pb[d] != 1 {
                    ib += idx * stb[d];
                }
            }
            a_batch.push(ia);
            b_batch.push(ib);
        }

        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0; total * m * n];
        for t in 0..total {
            let ao = a_batch[t] * m * k;
            let bo = b_batch[t] * k * n;
            let co = t * m * n;
            for i in 0..m {
                let crow = &mut out[co + i * n..co + (i + 1) * n];
                for p in 0..k {
                    let av = da[ao + i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &db[bo + p * n..bo + (p + 1) * n];
                    for (c, &bv) in crow.iter_mut().zip(brow) {
                        *c += av * bv;
                    }
                }
            }
        }
        check_finite(&out, "matmul")?;
        let mut shape = out_batch;
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                a_batch,
                b_batch,
            },
            rg,
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::dim(format!(
                "permute: {axes:?} is not a permutation of {} axes",
                shape.len()
            )));
        }
        let in_str = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out_str = strides(&out_shape);
        let numel: usize = shape.iter().product();
        let map = (0..numel)
            .map(|o| {
                axes.iter()
                    .enumerate()
                    .map(|(d, &a)| ((o / out_str[d]) % out_shape[d]) * in_str[a])
                    .sum()
            })
            .collect();
        self.gather(x, out_shape, map)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let ax = Axis::new(&shape, axis)?;
        if start >= end || end > ax.len {
            return Err(Error::Index(format!(
                "slice {start}..{end} out of range for axis {axis} of {shape:?}"
            )));
        }
        let w = end - start;
        let mut map = Vec::with_capacity(ax.outer * w * ax.inner);
        for o in 0..ax.outer {
            for j in start..end {
                let base = (o * ax.len + j) * ax.inner;
                map.extend(base..base + ax.inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = w;
        self.gather(x, out_shape, map)
    }

    /// Replicates a tensor with leading axis of size 1 to size `n`.
    pub fn expand(&mut self, x: Var, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&1) || n == 0 {
            return Err(Error::dim(format!(
                "expand: leading axis of {shape:?} must be 1"
            )));
        }
        let per: usize = shape[1..].iter().product();
        let map = (0..n).flat_map(|_| 0..per).collect();
        let mut out_shape = shape;
        out_shape[0] = n;
        self.gather(x, out_shape, map)
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, map: Vec<usize>) -> Result<Var> {
        let src = self.data(x);
        let out = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather { x, map }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        Axis::new(&base, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * total * inner];
        let mut inputs = Vec::with_capacity(xs.len());
        let mut offset = 0;
        for &v in xs {
            let len = self.shape(v)[axis];
            let src = self.data(v);
            let mut pos = Vec::with_capacity(src.len());
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        let dst = (o * total + offset + j) * inner + i;
                        out[dst] = src[(o * len + j) * inner + i];
                        pos.push(dst);
                    }
                }
            }
            offset += len;
            inputs.push((v, pos));
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Concat { inputs }, rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, name)?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite(&out, name)?;
        Tensor::new(self.shape(a).to_vec(), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    /// Adds a `[n]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.data(bias);
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        check_finite(&out, "add_bias")?;
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        check_finite(t.data(), "scale")?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Scale { x, c }, rg))
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).numel() {
            return Err(Error::dim("mul_const: mask length mismatch"));
        }
        let out: Vec<f64> = self.data(x).iter().zip(&c).map(|(a, b)| a * b).collect();
        check_finite(&out, "mul_const")?;
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst { x, c }, rg))
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability {p} not in [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        Ok(self.push(t, Op::Relu { x }, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ax = Axis::new(self.shape(x), axis)?;
        let mut out = self.data(x).to_vec();
        for (start, stride) in ax.lanes() {
            let idx = |j: usize| start + j * stride;
            let max = (0..ax.len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..ax.len {
                let e = (out[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e;
            }
            for j in 0..ax.len {
                out[idx(j)] /= sum;
            }
        }
        check_finite(&out, "softmax")?;
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis: ax }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ax = Axis::new(self.shape(x), axis)?;
        let mut out = self.data(x).to_vec();
        for (start, stride) in ax.lanes() {
            let idx = |j: usize| start + j * stride;
            let max = (0..ax.len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..ax.len).map(|j| (out[idx(j)] - max).exp()).sum::<f64>().ln();
            for j in 0..ax.len {
                out[idx(j)] -= lse;
            }
        }
        check_finite(&out, "log_softmax")?;
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::LogSoftmax { x, axis: ax }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean { x }, rg))
    }

    /// Mean negative log-likelihood of `labels` under `[batch, classes]`
    /// log-probabilities.
    pub fn nll_loss(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logp).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::dim(format!(
                "nll_loss: log-probs {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let d = self.data(logp);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| d[i * classes + l])
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(logp);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                logp,
                labels: labels.to_vec(),
                classes,
            },
            rg,
        ))
    }

    /// Batch normalization over the last (channel) axis of a
    /// `[batch, channels]` or `[batch, tokens, channels]` input.
    ///
    /// In training mode the batch statistics are used and returned so the
    /// caller can fold them into running estimates. In inference mode
    /// `running_mean`/`running_var` are used and nothing is returned.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
        training: bool,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::dim(format!(
                "batchnorm expects rank 2 or 3 input, got {shape:?}"
            )));
        }
        let c = shape[shape.len() - 1];
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::dim(format!(
                    "batchnorm: {name} has {len} channels, input {shape:?}"
                )));
            }
        }
        let xd = self.data(x);
        let rows = xd.len() / c;
        let (mean, var, stats) = if training {
            let mut mean = vec![0.0; c];
            for r in 0..rows {
                for j in 0..c {
                    mean[j] += xd[r * c + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for j in 0..c {
                    let d = xd[r * c + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let unbiased = if rows > 1 {
                var.iter().map(|v| v * rows as f64 / (rows - 1) as f64).collect()
            } else {
                var.clone()
            };
            let stats = BatchStats {
                mean: mean.clone(),
                var: unbiased,
                count: rows,
            };
            (mean, var, Some(stats))
        } else {
            (running_mean.to_vec(), running_var.to_vec(), None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, (&v, (h, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let j = i % c;
            *h = (v - mean[j]) * inv_std[j];
            *o = g[j] * *h + b[j];
        }
        check_finite(&out, "batchnorm")?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Straight-through estimator: the forward value is `forward`, the
    /// backward pass hands the upstream gradient to `proxy` unchanged.
    pub fn ste(&mut self, forward: Tensor, proxy: Var) -> Result<Var> {
        if forward.shape() != self.shape(proxy) {
            return Err(Error::dim(format!(
                "ste: forward {:?} vs proxy {:?}",
                forward.shape(),
                self.shape(proxy)
            )));
        }
        check_finite(forward.data(), "ste")?;
        let rg = self.rg(proxy);
        Ok(self.push(forward, Op::Ste { proxy }, rg))
    }

    /// Runs reverse accumulation from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            let keep_leaf = matches!(node.op, Op::Leaf);
            self.backprop(node, &gy, &mut grads)?;
            if keep_leaf {
                grads[id] = Some(gy);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.rg(v) {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                a_batch,
                b_batch,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |ga| {
                    for (t, &ab) in a_batch.iter().enumerate() {
                        let bo = b_batch[t] * k * n;
                        for i in 0..m {
                            let grow = &gy[t * m * n + i * n..t * m * n + (i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[bo + p * n..bo + (p + 1) * n];
                                ga[ab * m * k + i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (t, &bb) in b_batch.iter().enumerate() {
                        let ao = a_batch[t] * m * k;
                        for i in 0..m {
                            let grow = &gy[t * m * n + i * n..t * m * n + (i + 1) * n];
                            for p in 0..k {
                                let av = ad[ao + i * k + p];
                                let dst = &mut gb[bb * k * n + p * n..bb * k * n + (p + 1) * n];
                                for (d, g) in dst.iter_mut().zip(grow) {
                                    *d += av * g;
                                }
                            }
                        }
                    }
                });
            }
            Op::Gather { x, map } => acc(*x, &mut |gx| {
                for (&src, g) in map.iter().zip(gy) {
                    gx[src] += g;
                }
            }),
            Op::Reshape { x } => acc(*x, &mut |gx| add_into(gx, gy)),
            Op::Concat { inputs } => {
                for (v, pos) in inputs {
                    acc(*v, &mut |gx| {
                        for (d, &p) in gx.iter_mut().zip(pos) {
                            *d += gy[p];
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    for (d, s) in g.iter_mut().zip(gy) {
                        *d -= s;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |g| {
                    for ((d, s), y) in g.iter_mut().zip(gy).zip(bd) {
                        *d += s * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((d, s), x) in g.iter_mut().zip(gy).zip(ad) {
                        *d += s * x;
                    }
                });
            }
            Op::AddBias { x, bias } => {
                acc(*x, &mut |g| add_into(g, gy));
                acc(*bias, &mut |g| {
                    let n = g.len();
                    for (i, s) in gy.iter().enumerate() {
                        g[i % n] += s;
                    }
                });
            }
            Op::Scale { x, c } => acc(*x, &mut |g| {
                for (d, s) in g.iter_mut().zip(gy) {
                    *d += c * s;
                }
            }),
            Op::MulConst { x, c } => acc(*x, &mut |g| {
                for ((d, s), m) in g.iter_mut().zip(gy).zip(c) {
                    *d += s * m;
                }
            }),
            Op::Relu { x } => {
                let xd = self.data(*x);
                acc(*x, &mut |g| {
                    for ((d, s), &v) in g.iter_mut().zip(gy).zip(xd) {
                        if v > 0.0 {
                            *d += s;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for (start, stride) in axis.lanes() {
                        let idx = |j: usize| start + j * stride;
                        let dot: f64 = (0..axis.len).map(|j| gy[idx(j)] * y[idx(j)]).sum();
                        for j in 0..axis.len {
                            g[idx(j)] += y[idx(j)] * (gy[idx(j)] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { x, axis } => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for (start, stride) in axis.lanes() {
                        let idx = |j: usize| start + j * stride;
                        let total: f64 = (0..axis.len).map(|j| gy[idx(j)]).sum();
                        for j in 0..axis.len {
                            g[idx(j)] += gy[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |g| g.iter_mut().for_each(|d| *d += gy[0])),
            Op::Mean { x } => acc(*x, &mut |g| {
                let s = gy[0] / g.len() as f64;
                g.iter_mut().for_each(|d| *d += s);
            }),
            Op::Nll {
                logp,
                labels,
                classes,
            } => acc(*logp, &mut |g| {
                let s = gy[0] / labels.len() as f64;
                for (i, &l) in labels.iter().enumerate() {
                    g[i * classes + l] -= s;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (i, (&d, &h)) in gy.iter().zip(xhat).enumerate() {
                    sum_dy[i % c] += d;
                    sum_dy_xhat[i % c] += d * h;
                }
                acc(*gamma, &mut |g| add_into(g, &sum_dy_xhat));
                acc(*beta, &mut |g| add_into(g, &sum_dy));
                let gam = self.data(*gamma);
                acc(*x, &mut |g| {
                    let nf = rows as f64;
                    for (i, (d, &h)) in g.iter_mut().zip(xhat).enumerate() {
                        let j = i % c;
                        let scale = gam[j] * inv_std[j];
                        *d += if *training {
                            scale * (gy[i] - sum_dy[j] / nf - h * sum_dy_xhat[j] / nf)
                        } else {
                            scale * gy[i]
                        };
                    }
                });
            }
            Op::Ste { proxy } => acc(*proxy, &mut |g| add_into(g, gy)),
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Graph::param`]. `None` when the
    /// loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient as a flat slice, zero-length when absent.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }
}
