use rand::Rng;

use super::graph::{BatchStats, BnMode, Graph, Var};
use super::param::{init_uniform, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = x wᵀ + b` over the last axis of a `[m, in]` input.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(rng, &[out_dim, in_dim], in_dim),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Length-preserving 1-D convolution over `[n, c, t]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel must be odd, got {kernel}")));
        }
        let weight = store.add(
            format!("{name}.weight"),
            init_uniform(rng, &[out_channels, in_channels, kernel], in_channels * kernel),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_channels]))?;
        Ok(Conv1d {
            weight,
            bias,
            kernel,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, (self.kernel - 1) / 2)
    }
}

/// Batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T = f32> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([channels], T::one()))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([channels]))?;
        Ok(BatchNorm {
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps,
            momentum,
        })
    }

    /// Normalizes `x [n, c, t]` with batch statistics (`train`) or running
    /// statistics. Running statistics are not touched; see [`Self::update_running`].
    pub fn apply(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        train: bool,
    ) -> Result<(Var, Option<BatchStats>)> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let mode = if train {
            BnMode::Train { eps: self.eps }
        } else {
            BnMode::Eval {
                mean: &self.running_mean,
                var: &self.running_var,
                eps: self.eps,
            }
        };
        g.batch_norm(x, gamma, beta, mode)
    }

    /// Exponential moving average of batch statistics.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, s) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = T::lit((1.0 - m) * r.to_f64().unwrap_or(0.0) + m * s);
        }
        for (r, s) in self.running_var.iter_mut().zip(&stats.var) {
            *r = T::lit((1.0 - m) * r.to_f64().unwrap_or(1.0) + m * s);
        }
    }

    pub fn cast<U: Real>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma,
            beta: self.beta,
            running_mean: self.running_mean.iter().map(|v| U::lit(v.to_f64().unwrap_or(0.0))).collect(),
            running_var: self.running_var.iter().map(|v| U::lit(v.to_f64().unwrap_or(1.0))).collect(),
            eps: self.eps,
            momentum: self.momentum,
        }
    }
}

/// Unidirectional LSTM layer. Gate order in the stacked weights is
/// input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

pub struct LstmOutput {
    /// `[n, t, hidden]`
    pub outputs: Var,
    pub h_last: Var,
    pub c_last: Var,
}

impl Lstm {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let w_input = store.add(
            format!("{name}.w_input"),
            init_uniform(rng, &[4 * hidden, in_dim], in_dim),
        )?;
        let w_hidden = store.add(
            format!("{name}.w_hidden"),
            init_uniform(rng, &[4 * hidden, hidden], hidden),
        )?;
        let mut b = vec![T::zero(); 4 * hidden];
        b[hidden..2 * hidden].fill(T::one());
        let bias = store.add(format!("{name}.bias"), Tensor::new([4 * hidden], b)?)?;
        Ok(Lstm {
            w_input,
            w_hidden,
            bias,
            in_dim,
            hidden,
        })
    }

    /// Runs over `x [n, t, in]` from the given initial state (`[n, hidden]`
    /// each; zeros when `None`).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        state: Option<(Var, Var)>,
    ) -> Result<LstmOutput> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != self.in_dim {
            return Err(Error::Config(format!(
                "lstm: expected [n, t, {}], got {xs:?}",
                self.in_dim
            )));
        }
        let (n, t, hd) = (xs[0], xs[1], self.hidden);
        let w_in = g.param(store, self.w_input);
        let w_h = g.param(store, self.w_hidden);
        let bias = g.param(store, self.bias);

        let flat = g.reshape(x, &[n * t, self.in_dim])?;
        let projected = g.linear(flat, w_in, Some(bias))?;
        let projected = g.reshape(projected, &[n, t, 4 * hd])?;

        let (mut h, mut c) = match state {
            Some(s) => s,
            None => (
                g.constant(Tensor::zeros([n, hd])),
                g.constant(Tensor::zeros([n, hd])),
            ),
        };
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let xin = g.time_step(projected, step)?;
            let rec = g.linear(h, w_h, None)?;
            let gates = g.add(xin, rec)?;
            let i = g.slice_cols(gates, 0, hd)?;
            let f = g.slice_cols(gates, hd, hd)?;
            let cand = g.slice_cols(gates, 2 * hd, hd)?;
            let o = g.slice_cols(gates, 3 * hd, hd)?;
            let i = g.sigmoid(i)?;
            let f = g.sigmoid(f)?;
            let cand = g.tanh(cand)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let squashed = g.tanh(c)?;
            h = g.mul(o, squashed)?;
            outputs.push(h);
        }
        let outputs = g.stack_time(&outputs)?;
        Ok(LstmOutput {
            outputs,
            h_last: h,
            c_last: c,
        })
    }
}

/// Attention pooling over time with one learned query per head and learned
/// key/value maps.
#[derive(Debug, Clone)]
pub struct MhaPool {
    pub queries: ParamId,
    pub key: Linear,
    pub value: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MhaPool {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention dim {dim} is not divisible by {heads} heads"
            )));
        }
        let head_dim = dim / heads;
        let queries = store.add(
            format!("{name}.queries"),
            init_uniform(rng, &[heads, head_dim], head_dim),
        )?;
        let key = Linear::new(store, rng, &format!("{name}.key"), dim, dim)?;
        let value = Linear::new(store, rng, &format!("{name}.value"), dim, dim)?;
        Ok(MhaPool {
            queries,
            key,
            value,
            heads,
            dim,
        })
    }

    /// `x [n, t, dim] -> [n, dim]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[2] != self.dim {
            return Err(Error::Config(format!(
                "mha_pool: expected [n, t, {}], got {xs:?}",
                self.dim
            )));
        }
        let (n, t) = (xs[0], xs[1]);
        let flat = g.reshape(x, &[n * t, self.dim])?;
        let k = self.key.forward(g, store, flat)?;
        let v = self.value.forward(g, store, flat)?;
        let k = g.reshape(k, &[n, t, self.dim])?;
        let v = g.reshape(v, &[n, t, self.dim])?;
        let q = g.param(store, self.queries);
        g.attention_pool(k, v, q)
    }
}
