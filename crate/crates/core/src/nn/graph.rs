use super::param::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::{SELU_ALPHA, SELU_LAMBDA};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeReduction {
    /// Divide by the sum of the applied class weights.
    WeightedMean,
    /// Divide by the number of samples.
    WeightedSumOverN,
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    Train { eps: f64 },
    Eval { mean: &'a [T], var: &'a [T], eps: f64 },
}

/// Per-channel batch statistics observed in train mode. `var` is unbiased.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Leaf {
    Constant,
    Input,
    Param(ParamId),
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf(Leaf),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Selu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Delta(Var),
    SwapLast(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    TimeStep {
        x: Var,
        step: usize,
    },
    StackTime(Vec<Var>),
    AttentionPool {
        keys: Var,
        values: Var,
        queries: Var,
        weights: Vec<T>,
    },
    WeightedCe {
        logits: Var,
        labels: Vec<usize>,
        scale: Vec<T>,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of the leaves that required them, after [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Tape of recorded operations for one forward pass.
#[derive(Debug, Clone)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Real>(t: &Tensor<T>, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} produced a non-finite value")))
    }
}

fn selu_scalar<T: Real>(x: T) -> T {
    let lambda = T::lit(SELU_LAMBDA);
    if x > T::zero() {
        lambda * x
    } else {
        lambda * T::lit(SELU_ALPHA) * x.exp_m1()
    }
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Graph whose parameters are recorded as constants; `backward` yields nothing.
    pub fn no_grad() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Attention weights `[n, heads, t]` saved by an attention-pool node.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::AttentionPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, leaf: Leaf, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(leaf),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, Leaf::Constant, false)
    }

    /// Leaf whose gradient is reported by `backward` but not stored anywhere.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        let g = self.grad_enabled;
        self.leaf(value, Leaf::Input, g)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let g = self.grad_enabled;
        self.leaf(store.get(id).value.clone(), Leaf::Param(id), g)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Config(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>, name: &str) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(src.shape().to_vec(), data)?;
        finite(&out, name)?;
        Ok(self.push(out, op, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        finite(&out, "add")?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        finite(&out, "mul")?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .sum();
        let out = Tensor::scalar(T::lit(s));
        finite(&out, "sum")?;
        Ok(self.push(out, Op::Sum(x), &[x]))
    }

    pub fn selu(&mut self, x: Var) -> Result<Var> {
        self.map(x, selu_scalar, Op::Selu(x), "selu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, sigmoid_scalar, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| v.tanh(), Op::Tanh(x), "tanh")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// `x [m, in]`, `w [out, in]`, `b [out]` -> `x wᵀ + b` of shape `[m, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Config(format!(
                "linear: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (m, k, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::Config(format!(
                    "linear: bias {:?} does not match {o} outputs",
                    self.shape(b)
                )));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); m * o];
        for r in 0..m {
            let xr = &xv[r * k..(r + 1) * k];
            let yr = &mut out[r * o..(r + 1) * o];
            for (c, y) in yr.iter_mut().enumerate() {
                let wr = &wv[c * k..(c + 1) * k];
                let mut acc = bv.map_or(T::zero(), |b| b[c]);
                for (a, w) in xr.iter().zip(wr) {
                    acc += *a * *w;
                }
                *y = acc;
            }
        }
        let out = Tensor::new([m, o], out)?;
        finite(&out, "linear")?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// `x [n, c_in, t]`, `w [c_out, c_in, k]`, `b [c_out]`, zero padding on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::Config(format!(
                "conv1d: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (n, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if self.shape(b) != [cout] {
            return Err(Error::Config(format!(
                "conv1d: bias {:?} does not match {cout} channels",
                self.shape(b)
            )));
        }
        if t + 2 * pad < k {
            return Err(Error::Config(format!(
                "conv1d: kernel {k} longer than padded input {}",
                t + 2 * pad
            )));
        }
        let tout = t + 2 * pad - k + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); n * cout * tout];
        for s in 0..n {
            for o in 0..cout {
                let yrow = &mut out[(s * cout + o) * tout..(s * cout + o + 1) * tout];
                yrow.fill(bv[o]);
                for i in 0..cin {
                    let xrow = &xv[(s * cin + i) * t..(s * cin + i + 1) * t];
                    let wk = &wv[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (kk, &wgt) in wk.iter().enumerate() {
                        // output j reads input j + kk - pad
                        let lo = pad.saturating_sub(kk);
                        let hi = (t + pad).saturating_sub(kk).min(tout);
                        for j in lo..hi {
                            yrow[j] += wgt * xrow[j + kk - pad];
                        }
                    }
                }
            }
        }
        let out = Tensor::new([n, cout, tout], out)?;
        finite(&out, "conv1d")?;
        Ok(self.push(out, Op::Conv1d { x, w, b, pad }, &[x, w, b]))
    }

    /// Batch normalization of `x [n, c, t]` per channel. Returns the batch
    /// statistics in train mode so the caller can update running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Config(format!("batch_norm: expected [n, c, t], got {xs:?}")));
        }
        let (n, c, t) = (xs[0], xs[1], xs[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Config(format!("batch_norm: affine params must have {c} channels")));
        }
        let m = n * t;
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = None;
        let train = matches!(mode, BnMode::Train { .. });
        match mode {
            BnMode::Train { eps } => {
                if m < 2 {
                    return Err(Error::DegenerateBatch(m));
                }
                let mut means = vec![0.0; c];
                let mut vars = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        for v in &xv[(b * c + ch) * t..(b * c + ch + 1) * t] {
                            s += v.to_f64().unwrap_or(f64::NAN);
                        }
                    }
                    let mean = s / m as f64;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        for v in &xv[(b * c + ch) * t..(b * c + ch + 1) * t] {
                            let d = v.to_f64().unwrap_or(f64::NAN) - mean;
                            ss += d * d;
                        }
                    }
                    let var = ss / m as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[ch] = T::lit(is);
                    for b in 0..n {
                        let base = (b * c + ch) * t;
                        for j in 0..t {
                            let v = xv[base + j].to_f64().unwrap_or(f64::NAN);
                            xhat[base + j] = T::lit((v - mean) * is);
                        }
                    }
                    means[ch] = mean;
                    vars[ch] = ss / (m - 1) as f64;
                }
                stats = Some(BatchStats {
                    mean: means,
                    var: vars,
                });
            }
            BnMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::Config(format!(
                        "batch_norm: running stats must have {c} channels"
                    )));
                }
                for ch in 0..c {
                    let is = T::one() / (var[ch] + T::lit(eps)).sqrt();
                    inv_std[ch] = is;
                    for b in 0..n {
                        let base = (b * c + ch) * t;
                        for j in 0..t {
                            xhat[base + j] = (xv[base + j] - mean[ch]) * is;
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * t;
                for j in 0..t {
                    out[base + j] = gv[ch] * xhat[base + j] + bv[ch];
                }
            }
        }
        let out = Tensor::new(xs, out)?;
        finite(&out, "batch_norm")?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok((self.push(out, op, &[x, gamma, beta]), stats))
    }

    /// Frame differences along the last axis: `[n, c, t] -> [n, c, t - 1]`.
    pub fn delta(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Config(format!("delta: expected [n, c, t], got {xs:?}")));
        }
        let (n, c, t) = (xs[0], xs[1], xs[2]);
        if t < 2 {
            return Err(Error::DegenerateSequence(t));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * (t - 1));
        for row in xv.chunks_exact(t) {
            out.extend(row.windows(2).map(|w| w[1] - w[0]));
        }
        let out = Tensor::new([n, c, t - 1], out)?;
        finite(&out, "delta")?;
        Ok(self.push(out, Op::Delta(x), &[x]))
    }

    /// `[n, a, b] -> [n, b, a]`.
    pub fn swap_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Config(format!("swap_last: expected rank 3, got {xs:?}")));
        }
        let (n, a, b) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..n {
            for i in 0..a {
                for j in 0..b {
                    out[(s * b + j) * a + i] = xv[(s * a + i) * b + j];
                }
            }
        }
        let out = Tensor::new([n, b, a], out)?;
        Ok(self.push(out, Op::SwapLast(x), &[x]))
    }

    /// Columns `start..start + len` of a `[m, k]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || start + len > xs[1] || len == 0 {
            return Err(Error::Config(format!(
                "slice_cols: {start}..{} out of range for {xs:?}",
                start + len
            )));
        }
        let (m, k) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv[r * k + start..r * k + start + len]);
        }
        let out = Tensor::new([m, len], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    /// Frame `step` of a `[n, t, d]` sequence as `[n, d]`.
    pub fn time_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || step >= xs[1] {
            return Err(Error::Config(format!("time_step: {step} out of range for {xs:?}")));
        }
        let (n, t, d) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * d);
        for s in 0..n {
            out.extend_from_slice(&xv[(s * t + step) * d..(s * t + step + 1) * d]);
        }
        let out = Tensor::new([n, d], out)?;
        Ok(self.push(out, Op::TimeStep { x, step }, &[x]))
    }

    /// Stack `t` frames of shape `[n, d]` into `[n, t, d]`.
    pub fn stack_time(&mut self, frames: &[Var]) -> Result<Var> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Config("stack_time: no frames".into()))?;
        let fs = self.shape(*first).to_vec();
        if fs.len() != 2 || frames.iter().any(|f| self.shape(*f) != fs.as_slice()) {
            return Err(Error::Config("stack_time: frames must share shape [n, d]".into()));
        }
        let (n, d, t) = (fs[0], fs[1], frames.len());
        let mut out = vec![T::zero(); n * t * d];
        for (step, f) in frames.iter().enumerate() {
            let fv = self.value(*f).data();
            for s in 0..n {
                out[(s * t + step) * d..(s * t + step + 1) * d]
                    .copy_from_slice(&fv[s * d..(s + 1) * d]);
            }
        }
        let out = Tensor::new([n, t, d], out)?;
        Ok(self.push(out, Op::StackTime(frames.to_vec()), frames))
    }

    /// Multi-head attention pooling over time.
    ///
    /// `keys`, `values`: `[n, t, p]`; `queries`: `[h, p / h]`. Each head attends
    /// with its query over its slice of the key features, scaled by
    /// `1/sqrt(p / h)`, and returns the weighted sum of its value slice.
    /// Output `[n, p]` is the concatenation of the heads.
    pub fn attention_pool(&mut self, keys: Var, values: Var, queries: Var) -> Result<Var> {
        self.same_shape(keys, values, "attention_pool")?;
        let ks = self.shape(keys).to_vec();
        let qs = self.shape(queries).to_vec();
        if ks.len() != 3 || qs.len() != 2 || qs[0] * qs[1] != ks[2] {
            return Err(Error::Config(format!(
                "attention_pool: keys {ks:?} incompatible with queries {qs:?}"
            )));
        }
        let (n, t, p) = (ks[0], ks[1], ks[2]);
        let (h, dh) = (qs[0], qs[1]);
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let kv = self.value(keys).data();
        let vv = self.value(values).data();
        let qv = self.value(queries).data();
        let mut weights = vec![T::zero(); n * h * t];
        let mut out = vec![T::zero(); n * p];
        for s in 0..n {
            for head in 0..h {
                let q = &qv[head * dh..(head + 1) * dh];
                let a = &mut weights[(s * h + head) * t..(s * h + head + 1) * t];
                for (tau, slot) in a.iter_mut().enumerate() {
                    let k = &kv[(s * t + tau) * p + head * dh..(s * t + tau) * p + (head + 1) * dh];
                    let mut acc = T::zero();
                    for (qi, ki) in q.iter().zip(k) {
                        acc += *qi * *ki;
                    }
                    *slot = acc * scale;
                }
                softmax_in_place(a);
                let o = &mut out[s * p + head * dh..s * p + (head + 1) * dh];
                for (tau, &w) in a.iter().enumerate() {
                    let v = &vv[(s * t + tau) * p + head * dh..(s * t + tau) * p + (head + 1) * dh];
                    for (oi, vi) in o.iter_mut().zip(v) {
                        *oi += w * *vi;
                    }
                }
            }
        }
        let out = Tensor::new([n, p], out)?;
        finite(&out, "attention_pool")?;
        let op = Op::AttentionPool {
            keys,
            values,
            queries,
            weights,
        };
        Ok(self.push(out, op, &[keys, values, queries]))
    }

    /// Class-weighted softmax cross-entropy over `logits [n, c]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: &[f64],
        reduction: CeReduction,
    ) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::Config(format!(
                "cross_entropy: logits {ls:?} do not match {} labels",
                labels.len()
            )));
        }
        let (n, c) = (ls[0], ls[1]);
        if class_weights.len() != c || class_weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(Error::Config(format!(
                "cross_entropy: need {c} positive class weights, got {class_weights:?}"
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Config(format!("cross_entropy: label {bad} out of range")));
        }
        let lv = self.value(logits);
        if !lv.is_finite() {
            return Err(Error::Numeric("cross_entropy: non-finite logits".into()));
        }
        let lv = lv.data();
        let norm: f64 = match reduction {
            CeReduction::WeightedMean => labels.iter().map(|&l| class_weights[l]).sum(),
            CeReduction::WeightedSumOverN => n as f64,
        };
        let mut probs = vec![T::zero(); n * c];
        let mut scale = vec![T::zero(); n];
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| {
                m.max(v.to_f64().unwrap_or(f64::NAN))
            });
            let lse = max
                + row
                    .iter()
                    .map(|v| (v.to_f64().unwrap_or(f64::NAN) - max).exp())
                    .sum::<f64>()
                    .ln();
            for j in 0..c {
                probs[i * c + j] = T::lit((row[j].to_f64().unwrap_or(f64::NAN) - lse).exp());
            }
            let w = class_weights[labels[i]] / norm;
            scale[i] = T::lit(w);
            loss += w * (lse - row[labels[i]].to_f64().unwrap_or(f64::NAN));
        }
        let out = Tensor::scalar(T::lit(loss));
        finite(&out, "cross_entropy")?;
        let op = Op::WeightedCe {
            logits,
            labels: labels.to_vec(),
            scale,
            probs,
        };
        Ok(self.push(out, op, &[logits]))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `store`; gradients of every grad-requiring leaf are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.value(loss).len() != 1 {
            return Err(Error::Config(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf(leaf) = &node.op {
                if let Leaf::Param(id) = leaf {
                    for (acc, g) in store.get_mut(*id).grad.data_mut().iter_mut().zip(&gy) {
                        *acc += *g;
                    }
                }
                grads[idx] = Some(gy);
                continue;
            }
            self.backward_node(node, &gy, &mut grads);
        }
        // keep only leaf gradients
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf(_)) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |g| add_into(g, gy));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| {
                    for ((g, y), o) in g.iter_mut().zip(gy).zip(bv) {
                        *g += *y * *o;
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for ((g, y), o) in g.iter_mut().zip(gy).zip(av) {
                        *g += *y * *o;
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |g| g.iter_mut().for_each(|v| *v += gy[0]));
            }
            Op::Selu(x) => {
                let xv = self.value(*x).data();
                let lambda = T::lit(SELU_LAMBDA);
                let la = T::lit(SELU_LAMBDA * SELU_ALPHA);
                self.accumulate(grads, *x, |g| {
                    for ((g, y), &v) in g.iter_mut().zip(gy).zip(xv) {
                        let d = if v > T::zero() { lambda } else { la * v.exp() };
                        *g += *y * d;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = node.value.data();
                self.accumulate(grads, *x, |g| {
                    for ((g, y), &s) in g.iter_mut().zip(gy).zip(out) {
                        *g += *y * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(x) => {
                let out = node.value.data();
                self.accumulate(grads, *x, |g| {
                    for ((g, y), &th) in g.iter_mut().zip(gy).zip(out) {
                        *g += *y * (T::one() - th * th);
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |g| add_into(g, gy)),
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (m, k) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                self.accumulate(grads, *x, |g| {
                    for r in 0..m {
                        let gr = &mut g[r * k..(r + 1) * k];
                        for c in 0..o {
                            let d = gy[r * o + c];
                            if d == T::zero() {
                                continue;
                            }
                            for (gi, wi) in gr.iter_mut().zip(&wv[c * k..(c + 1) * k]) {
                                *gi += d * *wi;
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |g| {
                    for r in 0..m {
                        let xr = &xv[r * k..(r + 1) * k];
                        for c in 0..o {
                            let d = gy[r * o + c];
                            if d == T::zero() {
                                continue;
                            }
                            for (gi, xi) in g[c * k..(c + 1) * k].iter_mut().zip(xr) {
                                *gi += d * *xi;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    self.accumulate(grads, *b, |g| {
                        for r in 0..m {
                            add_into(g, &gy[r * o..(r + 1) * o]);
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b, pad } => {
                let pad = *pad;
                let xs = self.shape(*x);
                let (n, cin, t) = (xs[0], xs[1], xs[2]);
                let ws = self.shape(*w);
                let (cout, k) = (ws[0], ws[2]);
                let tout = node.value.shape()[2];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let span = |kk: usize| (pad.saturating_sub(kk), (t + pad).saturating_sub(kk).min(tout));
                self.accumulate(grads, *x, |g| {
                    for s in 0..n {
                        for o in 0..cout {
                            let gyr = &gy[(s * cout + o) * tout..(s * cout + o + 1) * tout];
                            for i in 0..cin {
                                let gx = &mut g[(s * cin + i) * t..(s * cin + i + 1) * t];
                                let wk = &wv[(o * cin + i) * k..(o * cin + i + 1) * k];
                                for (kk, &wgt) in wk.iter().enumerate() {
                                    let (lo, hi) = span(kk);
                                    for j in lo..hi {
                                        gx[j + kk - pad] += wgt * gyr[j];
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |g| {
                    for s in 0..n {
                        for o in 0..cout {
                            let gyr = &gy[(s * cout + o) * tout..(s * cout + o + 1) * tout];
                            for i in 0..cin {
                                let xrow = &xv[(s * cin + i) * t..(s * cin + i + 1) * t];
                                let gw = &mut g[(o * cin + i) * k..(o * cin + i + 1) * k];
                                for (kk, gwk) in gw.iter_mut().enumerate() {
                                    let (lo, hi) = span(kk);
                                    let mut acc = T::zero();
                                    for j in lo..hi {
                                        acc += gyr[j] * xrow[j + kk - pad];
                                    }
                                    *gwk += acc;
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for s in 0..n {
                        for (o, go) in g.iter_mut().enumerate() {
                            *go += gy[(s * cout + o) * tout..(s * cout + o + 1) * tout]
                                .iter()
                                .copied()
                                .sum::<T>();
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (n, c, t) = (xs[0], xs[1], xs[2]);
                let gv = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * t;
                        for j in 0..t {
                            sum_dy[ch] += gy[base + j];
                            sum_dy_xhat[ch] += gy[base + j] * xhat[base + j];
                        }
                    }
                }
                self.accumulate(grads, *gamma, |g| add_into(g, &sum_dy_xhat));
                self.accumulate(grads, *beta, |g| add_into(g, &sum_dy));
                self.accumulate(grads, *x, |g| {
                    let m = T::lit((n * t) as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * t;
                            let k = gv[ch] * inv_std[ch];
                            for j in 0..t {
                                let d = if *train {
                                    k * (gy[base + j]
                                        - sum_dy[ch] / m
                                        - xhat[base + j] * sum_dy_xhat[ch] / m)
                                } else {
                                    k * gy[base + j]
                                };
                                g[base + j] += d;
                            }
                        }
                    }
                });
            }
            Op::Delta(x) => {
                let t = self.shape(*x)[2];
                self.accumulate(grads, *x, |g| {
                    for (grow, gyrow) in g.chunks_exact_mut(t).zip(gy.chunks_exact(t - 1)) {
                        for (j, &d) in gyrow.iter().enumerate() {
                            grow[j + 1] += d;
                            grow[j] -= d;
                        }
                    }
                });
            }
            Op::SwapLast(x) => {
                let xs = self.shape(*x);
                let (n, a, b) = (xs[0], xs[1], xs[2]);
                self.accumulate(grads, *x, |g| {
                    for s in 0..n {
                        for i in 0..a {
                            for j in 0..b {
                                g[(s * a + i) * b + j] += gy[(s * b + j) * a + i];
                            }
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let k = self.shape(*x)[1];
                let len = node.value.shape()[1];
                let start = *start;
                self.accumulate(grads, *x, |g| {
                    for (r, gyr) in gy.chunks_exact(len).enumerate() {
                        add_into(&mut g[r * k + start..r * k + start + len], gyr);
                    }
                });
            }
            Op::TimeStep { x, step } => {
                let xs = self.shape(*x);
                let (n, t, d) = (xs[0], xs[1], xs[2]);
                self.accumulate(grads, *x, |g| {
                    for s in 0..n {
                        let at = (s * t + step) * d;
                        add_into(&mut g[at..at + d], &gy[s * d..(s + 1) * d]);
                    }
                });
            }
            Op::StackTime(frames) => {
                let t = frames.len();
                let fs = self.shape(frames[0]);
                let (n, d) = (fs[0], fs[1]);
                for (step, f) in frames.iter().enumerate() {
                    self.accumulate(grads, *f, |g| {
                        for s in 0..n {
                            let at = (s * t + step) * d;
                            add_into(&mut g[s * d..(s + 1) * d], &gy[at..at + d]);
                        }
                    });
                }
            }
            Op::AttentionPool {
                keys,
                values,
                queries,
                weights,
            } => {
                let ks = self.shape(*keys);
                let (n, t, p) = (ks[0], ks[1], ks[2]);
                let qs = self.shape(*queries);
                let (h, dh) = (qs[0], qs[1]);
                let scale = T::one() / T::lit(dh as f64).sqrt();
                let kv = self.value(*keys).data();
                let vv = self.value(*values).data();
                let qv = self.value(*queries).data();
                // d(score) per (sample, head, frame)
                let mut dscore = vec![T::zero(); n * h * t];
                for s in 0..n {
                    for head in 0..h {
                        let a = &weights[(s * h + head) * t..(s * h + head + 1) * t];
                        let go = &gy[s * p + head * dh..s * p + (head + 1) * dh];
                        let ds = &mut dscore[(s * h + head) * t..(s * h + head + 1) * t];
                        let mut dot = T::zero();
                        for tau in 0..t {
                            let v = &vv[(s * t + tau) * p + head * dh..(s * t + tau) * p + (head + 1) * dh];
                            let da: T = go.iter().zip(v).map(|(g, v)| *g * *v).sum();
                            ds[tau] = da;
                            dot += a[tau] * da;
                        }
                        for tau in 0..t {
                            ds[tau] = a[tau] * (ds[tau] - dot) * scale;
                        }
                    }
                }
                self.accumulate(grads, *values, |g| {
                    for s in 0..n {
                        for head in 0..h {
                            let a = &weights[(s * h + head) * t..(s * h + head + 1) * t];
                            let go = &gy[s * p + head * dh..s * p + (head + 1) * dh];
                            for (tau, &w) in a.iter().enumerate() {
                                let at = (s * t + tau) * p + head * dh;
                                for (gv, gi) in g[at..at + dh].iter_mut().zip(go) {
                                    *gv += w * *gi;
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *keys, |g| {
                    for s in 0..n {
                        for head in 0..h {
                            let q = &qv[head * dh..(head + 1) * dh];
                            for tau in 0..t {
                                let d = dscore[(s * h + head) * t + tau];
                                let at = (s * t + tau) * p + head * dh;
                                for (gk, qi) in g[at..at + dh].iter_mut().zip(q) {
                                    *gk += d * *qi;
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *queries, |g| {
                    for s in 0..n {
                        for head in 0..h {
                            let gq = &mut g[head * dh..(head + 1) * dh];
                            for tau in 0..t {
                                let d = dscore[(s * h + head) * t + tau];
                                let at = (s * t + tau) * p + head * dh;
                                for (gi, ki) in gq.iter_mut().zip(&kv[at..at + dh]) {
                                    *gi += d * *ki;
                                }
                            }
                        }
                    }
                });
            }
            Op::WeightedCe {
                logits,
                labels,
                scale,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                self.accumulate(grads, *logits, |g| {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let target = if j == label { T::one() } else { T::zero() };
                            g[i * c + j] += gy[0] * scale[i] * (probs[i * c + j] - target);
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Numerically stable softmax with max subtraction.
pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
}
