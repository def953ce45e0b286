use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::{AutodiffError, Tensor};
use crate::signal::{center_offset, conv_same_into, conv_same_kernel_grad, correlate_same_into};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// Train mode uses batch statistics and active dropout; eval mode uses
/// running statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance carried across batches by a batchnorm layer.
///
/// Update `t` (1-based) blends in the batch statistics with weight
/// `max(1 - momentum, 1 / t)`, so the estimate is a plain average of the
/// first batches and an exponential moving average afterwards.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub updates: u64,
}

impl RunningStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    SliceChannel {
        x: Var,
        channel: usize,
    },
    ConcatChannels(Vec<Var>),
    Conv1d {
        x: Var,
        w: Var,
    },
    Relu(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` for values that
    /// do not require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// Copies the gradient of `var` into `tensor.grad`.
    pub fn fill(&self, var: Var, tensor: &mut Tensor) -> Result<(), AutodiffError> {
        match self.get(var) {
            Some(g) => tensor.set_grad(g.to_vec()),
            None => {
                tensor.clear_grad();
                Ok(())
            }
        }
    }
}

/// Tape of recorded operations. Nodes are appended in forward order, so the
/// node list is already topologically sorted.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// Interprets `[C, N]` as a batch of one and `[B, C, N]` as-is.
fn dims3(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), AutodiffError> {
    match *shape {
        [c, n] => Ok((1, c, n)),
        [b, c, n] => Ok((b, c, n)),
        _ => Err(mismatch(
            op,
            format!("expected [C, N] or [B, C, N], got {shape:?}"),
        )),
    }
}

fn with_dims3(shape: &[usize], b: usize, c: usize, n: usize) -> Vec<usize> {
    if shape.len() == 2 {
        vec![c, n]
    } else {
        vec![b, c, n]
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

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf holding a copy of `t`; it requires gradients iff `t` does.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            t.is_requires_grad(),
            Op::Leaf,
        )
    }

    pub fn leaf(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var, AutodiffError> {
        let t = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        Ok(self.input(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph nodes hold valid tensors")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, shape, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, shape, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(value, shape, rg, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![s], vec![1], rg, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() || shape.contains(&0) {
            return Err(mismatch(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(value, shape, rg, Op::Reshape(a)))
    }

    /// Flattens `[B, ...]` to `[B, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(a);
        let b = shape[0];
        let rest = self.value(a).len() / b;
        self.reshape(a, vec![b, rest])
    }

    /// Selects one channel of `[B, C, N]` as `[B, 1, N]`.
    pub fn slice_channel(&mut self, x: Var, channel: usize) -> Result<Var, AutodiffError> {
        let (b, c, n) = dims3("slice_channel", self.shape(x))?;
        if channel >= c {
            return Err(mismatch(
                "slice_channel",
                format!("channel {channel} out of {c}"),
            ));
        }
        let src = self.value(x);
        let mut value = Vec::with_capacity(b * n);
        for bi in 0..b {
            let off = (bi * c + channel) * n;
            value.extend_from_slice(&src[off..off + n]);
        }
        let shape = with_dims3(self.shape(x), b, 1, n);
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape, rg, Op::SliceChannel { x, channel }))
    }

    /// Concatenates `[B, C_i, N]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| mismatch("concat_channels", "no inputs".into()))?;
        let (b, _, n) = dims3("concat_channels", self.shape(first))?;
        let mut total_c = 0;
        for &p in parts {
            let (pb, pc, pn) = dims3("concat_channels", self.shape(p))?;
            if pb != b || pn != n {
                return Err(mismatch(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            total_c += pc;
        }
        let mut value = Vec::with_capacity(b * total_c * n);
        for bi in 0..b {
            for &p in parts {
                let pc = self.shape(p)[self.shape(p).len() - 2];
                let off = bi * pc * n;
                value.extend_from_slice(&self.value(p)[off..off + pc * n]);
            }
        }
        let shape = with_dims3(self.shape(first), b, total_c, n);
        let rg = self.rg(parts);
        Ok(self.push(value, shape, rg, Op::ConcatChannels(parts.to_vec())))
    }

    /// Multi-channel same-length centered convolution.
    ///
    /// `x` is `[C_in, N]` or `[B, C_in, N]`, `w` is `[C_out, C_in, K]`, and
    /// `out[b, o, n] = sum_c sum_i w[o, c, i] * x[b, c, n + floor((K-1)/2) - i]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let (b, c_in, n) = dims3("conv1d", self.shape(x))?;
        let (c_out, wc, k) = match *self.shape(w) {
            [o, c, k] => (o, c, k),
            ref s => {
                return Err(mismatch(
                    "conv1d",
                    format!("kernel must be [C_out, C_in, K], got {s:?}"),
                ))
            }
        };
        if wc != c_in {
            return Err(mismatch(
                "conv1d",
                format!("kernel expects {wc} input channels, input has {c_in}"),
            ));
        }
        let off = center_offset(k);
        let xs = self.value(x);
        let ws = self.value(w);
        let mut value = vec![0.0; b * c_out * n];
        for bi in 0..b {
            for o in 0..c_out {
                let out = &mut value[(bi * c_out + o) * n..(bi * c_out + o + 1) * n];
                for c in 0..c_in {
                    let xin = &xs[(bi * c_in + c) * n..(bi * c_in + c + 1) * n];
                    let ker = &ws[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    conv_same_into(xin, ker, off, out);
                }
            }
        }
        let shape = with_dims3(self.shape(x), b, c_out, n);
        let rg = self.rg(&[x, w]);
        Ok(self.push(value, shape, rg, Op::Conv1d { x, w }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(value, shape, rg, Op::Relu(x))
    }

    /// Non-overlapping max pooling of width 2 along the last axis; a trailing
    /// odd sample is dropped. Ties go to the earlier position.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        if n < 2 {
            return Err(mismatch(
                "maxpool2",
                format!("last axis too short: {shape:?}"),
            ));
        }
        let rows = self.value(x).len() / n;
        let half = n / 2;
        let xs = self.value(x);
        let mut value = Vec::with_capacity(rows * half);
        let mut argmax = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &xs[r * n..(r + 1) * n];
            for j in 0..half {
                let (a, b) = (row[2 * j], row[2 * j + 1]);
                if b > a {
                    value.push(b);
                    argmax.push(r * n + 2 * j + 1);
                } else {
                    value.push(a);
                    argmax.push(r * n + 2 * j);
                }
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = half;
        let rg = self.rg(&[x]);
        Ok(self.push(value, out_shape, rg, Op::MaxPool2 { x, argmax }))
    }

    /// Per-channel batch normalization over `[B, C]` or `[B, C, N]`.
    ///
    /// Train mode normalizes with the (biased) batch statistics and folds
    /// them into `stats` with its momentum; eval mode uses `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let (b, c, n) = match *shape.as_slice() {
            [b, c] => (b, c, 1),
            [b, c, n] => (b, c, n),
            _ => {
                return Err(mismatch(
                    "batchnorm",
                    format!("expected [B, C] or [B, C, N], got {shape:?}"),
                ))
            }
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.channels() != c {
            return Err(mismatch(
                "batchnorm",
                format!(
                    "{c} channels but gamma {:?}, beta {:?}, stats {}",
                    self.shape(gamma),
                    self.shape(beta),
                    stats.channels()
                ),
            ));
        }
        let xs = self.value(x);
        let count = (b * n) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let row = &xs[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                        mean[ci] += row.iter().sum::<f64>();
                    }
                }
                for m in &mut mean {
                    *m /= count;
                }
                for bi in 0..b {
                    for ci in 0..c {
                        let row = &xs[(bi * c + ci) * n..(bi * c + ci + 1) * n];
                        var[ci] += row.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                for v in &mut var {
                    *v /= count;
                }
                stats.updates += 1;
                let m = stats.momentum.min(1.0 - 1.0 / stats.updates as f64);
                for ci in 0..c {
                    stats.mean[ci] = m * stats.mean[ci] + (1.0 - m) * mean[ci];
                    stats.var[ci] = m * stats.var[ci] + (1.0 - m) * var[ci];
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = vec![0.0; xs.len()];
        let mut value = vec![0.0; xs.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * n;
                for j in base..base + n {
                    let h = (xs[j] - mean[ci]) * inv_std[ci];
                    xhat[j] = h;
                    value[j] = g[ci] * h + bt[ci];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            shape,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Eval mode
    /// returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidProbability(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape, rg, Op::Dropout { x, mask }))
    }

    /// Affine layer: `x [B, In]`, `w [Out, In]`, `b [Out]` -> `[B, Out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (batch, fan_in) = match *self.shape(x) {
            [bt, i] => (bt, i),
            ref s => {
                return Err(mismatch(
                    "dense",
                    format!("input must be [B, In], got {s:?}"),
                ))
            }
        };
        let (fan_out, wi) = match *self.shape(w) {
            [o, i] => (o, i),
            ref s => {
                return Err(mismatch(
                    "dense",
                    format!("weight must be [Out, In], got {s:?}"),
                ))
            }
        };
        if wi != fan_in || self.shape(b) != [fan_out] {
            return Err(mismatch(
                "dense",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            ));
        }
        let xs = self.value(x);
        let ws = self.value(w);
        let bs = self.value(b);
        let mut value = vec![0.0; batch * fan_out];
        for bi in 0..batch {
            let row = &xs[bi * fan_in..(bi + 1) * fan_in];
            for o in 0..fan_out {
                let wrow = &ws[o * fan_in..(o + 1) * fan_in];
                value[bi * fan_out + o] =
                    bs[o] + row.iter().zip(wrow).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, vec![batch, fan_out], rg, Op::Dense { x, w, b }))
    }

    /// Row-wise softmax over the last axis of `[B, C]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (rows, cols) = match *self.shape(x) {
            [r, c] => (r, c),
            [c] => (1, c),
            ref s => return Err(mismatch("softmax", format!("expected [B, C], got {s:?}"))),
        };
        let xs = self.value(x);
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut value[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(value, shape, rg, Op::Softmax(x)))
    }

    /// Mean over the batch of `-sum_c t[c] ln p[c]`. Each target row must be
    /// a probability distribution.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let (rows, cols) = match *self.shape(probs) {
            [r, c] => (r, c),
            [c] => (1, c),
            ref s => {
                return Err(mismatch(
                    "cross_entropy",
                    format!("expected [B, C], got {s:?}"),
                ))
            }
        };
        if targets.len() != rows * cols {
            return Err(mismatch(
                "cross_entropy",
                format!("{} targets for {rows}x{cols} predictions", targets.len()),
            ));
        }
        for (r, row) in targets.chunks(cols).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&t| !(t >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(AutodiffError::InvalidTarget(r));
            }
        }
        let ps = self.value(probs);
        let loss = ps
            .iter()
            .zip(targets)
            .filter(|(_, &t)| t > 0.0)
            .map(|(&p, &t)| -t * p.max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / rows as f64;
        let rg = self.rg(&[probs]);
        Ok(self.push(
            vec![loss],
            vec![1],
            rg,
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::NoForwardPass);
        }
        let loss_node = self.node(loss);
        if loss_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        v: Var,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.accumulate(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.accumulate(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += f * y);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.accumulate(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::SliceChannel { x, channel } => {
                let (b, c, n) = dims3("slice_channel", self.shape(*x)).unwrap();
                if let Some(gx) = self.accumulate(grads, *x) {
                    for bi in 0..b {
                        let dst = &mut gx[(bi * c + channel) * n..(bi * c + channel + 1) * n];
                        dst.iter_mut()
                            .zip(&g[bi * n..(bi + 1) * n])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::ConcatChannels(parts) => {
                let (b, total_c, n) = dims3("concat_channels", &node.shape).unwrap();
                let mut c_off = 0;
                for &p in parts {
                    let pc = self.shape(p)[self.shape(p).len() - 2];
                    if let Some(gp) = self.accumulate(grads, p) {
                        for bi in 0..b {
                            let src =
                                &g[(bi * total_c + c_off) * n..(bi * total_c + c_off + pc) * n];
                            gp[bi * pc * n..(bi + 1) * pc * n]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    c_off += pc;
                }
            }
            Op::Conv1d { x, w } => {
                let (b, c_in, n) = dims3("conv1d", self.shape(*x)).unwrap();
                let (c_out, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let off = center_offset(k);
                let (xs, ws) = (self.value(*x), self.value(*w));
                if let Some(gw) = self.accumulate(grads, *w) {
                    for bi in 0..b {
                        for o in 0..c_out {
                            let up = &g[(bi * c_out + o) * n..(bi * c_out + o + 1) * n];
                            for c in 0..c_in {
                                let xin = &xs[(bi * c_in + c) * n..(bi * c_in + c + 1) * n];
                                let gk = &mut gw[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                                conv_same_kernel_grad(xin, up, off, gk);
                            }
                        }
                    }
                }
                if let Some(gx) = self.accumulate(grads, *x) {
                    for bi in 0..b {
                        for o in 0..c_out {
                            let up = &g[(bi * c_out + o) * n..(bi * c_out + o + 1) * n];
                            for c in 0..c_in {
                                let ker = &ws[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                                let dst = &mut gx[(bi * c_in + c) * n..(bi * c_in + c + 1) * n];
                                correlate_same_into(up, ker, off, dst);
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xs = self.value(*x);
                if let Some(gx) = self.accumulate(grads, *x) {
                    for i in 0..g.len() {
                        if xs[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for (j, &src) in argmax.iter().enumerate() {
                        gx[src] += g[j];
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (b, c) = (shape[0], shape[1]);
                let n = if shape.len() == 3 { shape[2] } else { 1 };
                let count = (b * n) as f64;
                let gam = self.value(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * n;
                        for j in base..base + n {
                            sum_g[ci] += g[j];
                            sum_gx[ci] += g[j] * xhat[j];
                        }
                    }
                }
                if let Some(gg) = self.accumulate(grads, *gamma) {
                    gg.iter_mut().zip(&sum_gx).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.accumulate(grads, *beta) {
                    gb.iter_mut().zip(&sum_g).for_each(|(x, y)| *x += y);
                }
                if let Some(gx) = self.accumulate(grads, *x) {
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * n;
                            let scale = gam[ci] * inv_std[ci];
                            for j in base..base + n {
                                gx[j] += if *train {
                                    scale
                                        * (g[j] - sum_g[ci] / count - xhat[j] * sum_gx[ci] / count)
                                } else {
                                    scale * g[j]
                                };
                            }
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let (batch, fan_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fan_out = self.shape(*w)[0];
                let (xs, ws) = (self.value(*x), self.value(*w));
                if let Some(gw) = self.accumulate(grads, *w) {
                    for bi in 0..batch {
                        let row = &xs[bi * fan_in..(bi + 1) * fan_in];
                        for o in 0..fan_out {
                            let up = g[bi * fan_out + o];
                            if up == 0.0 {
                                continue;
                            }
                            gw[o * fan_in..(o + 1) * fan_in]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(d, v)| *d += up * v);
                        }
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for bi in 0..batch {
                        for o in 0..fan_out {
                            gb[o] += g[bi * fan_out + o];
                        }
                    }
                }
                if let Some(gx) = self.accumulate(grads, *x) {
                    for bi in 0..batch {
                        let dst = &mut gx[bi * fan_in..(bi + 1) * fan_in];
                        for o in 0..fan_out {
                            let up = g[bi * fan_out + o];
                            if up == 0.0 {
                                continue;
                            }
                            dst.iter_mut()
                                .zip(&ws[o * fan_in..(o + 1) * fan_in])
                                .for_each(|(d, v)| *d += up * v);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = *node.shape.last().unwrap();
                let y = &node.value;
                if let Some(gx) = self.accumulate(grads, *x) {
                    for r in 0..y.len() / cols {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, targets } => {
                let rows = match self.shape(*probs) {
                    [r, _] => *r,
                    _ => 1,
                };
                let ps = self.value(*probs);
                if let Some(gp) = self.accumulate(grads, *probs) {
                    for i in 0..ps.len() {
                        if targets[i] > 0.0 {
                            gp[i] -= g[0] * targets[i] / ps[i].max(f64::MIN_POSITIVE) / rows as f64;
                        }
                    }
                }
            }
        }
    }
}
