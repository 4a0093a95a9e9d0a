use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm, BatchStats, Conv1d, Graph, Linear, Lstm, MhaPool, ParamStore, Real, Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Residual conv block, optional delta, stacked LSTMs, projection,
/// attention pooling and MLP head.
#[derive(Debug, Clone)]
pub struct DetectorModel<T = f32> {
    config: DetectorConfig,
    params: ParamStore<T>,
    conv1: Conv1d,
    bn1: BatchNorm<T>,
    conv2: Conv1d,
    bn2: BatchNorm<T>,
    lstms: Vec<Lstm>,
    projection: Linear,
    pool: MhaPool,
    mlp_hidden: Linear,
    mlp_out: Linear,
}

/// Batch statistics gathered during a train-mode pass; applied only once the
/// whole forward succeeded.
struct PendingStats([Option<BatchStats>; 2]);

impl<T: Real> DetectorModel<T> {
    /// Freshly initialized model; parameters depend only on `config`.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let c = &config;
        let conv1 = Conv1d::new(&mut p, &mut rng, "conv_block.conv1", c.input_dim, c.conv_channels, c.conv_kernel)?;
        let bn1 = BatchNorm::new(&mut p, "conv_block.bn1", c.conv_channels, c.bn_eps, c.bn_momentum)?;
        let conv2 = Conv1d::new(&mut p, &mut rng, "conv_block.conv2", c.conv_channels, c.conv_channels, c.conv_kernel)?;
        let bn2 = BatchNorm::new(&mut p, "conv_block.bn2", c.conv_channels, c.bn_eps, c.bn_momentum)?;
        let mut lstms = Vec::with_capacity(c.lstm_layers);
        let mut in_dim = c.conv_channels;
        for layer in 0..c.lstm_layers {
            lstms.push(Lstm::new(&mut p, &mut rng, &format!("lstm{}", layer + 1), in_dim, c.lstm_hidden)?);
            in_dim = c.lstm_hidden;
        }
        let projection = Linear::new(&mut p, &mut rng, "projection", c.lstm_hidden, c.projection_dim)?;
        let pool = MhaPool::new(&mut p, &mut rng, "pool", c.projection_dim, c.attention_heads)?;
        let mlp_hidden = Linear::new(&mut p, &mut rng, "mlp.hidden", c.projection_dim, c.mlp_hidden)?;
        let mlp_out = Linear::new(&mut p, &mut rng, "mlp.out", c.mlp_hidden, c.num_classes)?;
        Ok(DetectorModel {
            config,
            params: p,
            conv1,
            bn1,
            conv2,
            bn2,
            lstms,
            projection,
            pool,
            mlp_hidden,
            mlp_out,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Running statistics of both batch norms as `(name, values)` in a fixed
    /// order: bn1 mean, bn1 var, bn2 mean, bn2 var.
    pub fn running_stats(&self) -> [(&'static str, &[T]); 4] {
        [
            ("conv_block.bn1.running_mean", &self.bn1.running_mean),
            ("conv_block.bn1.running_var", &self.bn1.running_var),
            ("conv_block.bn2.running_mean", &self.bn2.running_mean),
            ("conv_block.bn2.running_var", &self.bn2.running_var),
        ]
    }

    pub fn running_stats_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        match name {
            "conv_block.bn1.running_mean" => Some(&mut self.bn1.running_mean),
            "conv_block.bn1.running_var" => Some(&mut self.bn1.running_var),
            "conv_block.bn2.running_mean" => Some(&mut self.bn2.running_mean),
            "conv_block.bn2.running_var" => Some(&mut self.bn2.running_var),
            _ => None,
        }
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<(usize, usize)> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != self.config.input_dim {
            return Err(Error::Config(format!(
                "detector expects input [n, {}, t], got {s:?}",
                self.config.input_dim
            )));
        }
        Ok((s[0], s[2]))
    }

    fn conv_block_inner(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<(Var, PendingStats)> {
        self.check_input(g, x)?;
        let train = mode == Mode::Train;
        let p = &self.params;
        let h = self.conv1.forward(g, p, x)?;
        let (h, s1) = self.bn1.apply(g, p, h, train)?;
        let h = g.selu(h)?;
        let h = self.conv2.forward(g, p, h)?;
        let (h, s2) = self.bn2.apply(g, p, h, train)?;
        let h = if self.config.use_residual { g.add(x, h)? } else { h };
        Ok((g.selu(h)?, PendingStats([s1, s2])))
    }

    fn commit(&mut self, stats: PendingStats) {
        let [s1, s2] = stats.0;
        if let Some(s) = s1 {
            self.bn1.update_running(&s);
        }
        if let Some(s) = s2 {
            self.bn2.update_running(&s);
        }
    }

    /// `SELU(X + BN2(Conv2(SELU(BN1(Conv1(X))))))` over `x [n, d, t]`.
    /// Train mode updates the batch-norm running statistics.
    pub fn conv_block(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let (y, stats) = self.conv_block_inner(g, x, mode)?;
        self.commit(stats);
        Ok(y)
    }

    /// Sequence entering the first LSTM, `[n, t', d]` with `t' = t - 1`
    /// when the delta step is enabled.
    fn sequence_inner(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<(Var, PendingStats)> {
        let (_, t) = self.check_input(g, x)?;
        if self.config.use_delta && t < 2 {
            return Err(Error::DegenerateSequence(t));
        }
        let (h, stats) = self.conv_block_inner(g, x, mode)?;
        let h = if self.config.use_delta { g.delta(h)? } else { h };
        Ok((g.swap_last(h)?, stats))
    }

    /// LSTMs, per-frame projection and attention pooling: `[n, t, d] -> [n, p]`.
    fn pool_sequence(&self, g: &mut Graph<T>, seq: Var) -> Result<Var> {
        let p = &self.params;
        let mut h = seq;
        for lstm in &self.lstms {
            h = lstm.forward(g, p, h, None)?.outputs;
        }
        let s = g.shape(h).to_vec();
        let (n, t) = (s[0], s[1]);
        let flat = g.reshape(h, &[n * t, self.config.lstm_hidden])?;
        let proj = self.projection.forward(g, p, flat)?;
        let proj = g.reshape(proj, &[n, t, self.config.projection_dim])?;
        self.pool.forward(g, p, proj)
    }

    fn head(&self, g: &mut Graph<T>, seq: Var) -> Result<Var> {
        let pooled = self.pool_sequence(g, seq)?;
        let z = self.mlp_hidden.forward(g, &self.params, pooled)?;
        let z = g.selu(z)?;
        self.mlp_out.forward(g, &self.params, z)
    }

    /// Pooled utterance representation `[n, projection_dim]`, eval mode.
    pub fn pooled(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (seq, _) = self.sequence_inner(g, x, Mode::Eval)?;
        self.pool_sequence(g, seq)
    }

    /// Input of the first LSTM layer, eval mode.
    pub fn lstm_input(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(self.sequence_inner(g, x, Mode::Eval)?.0)
    }

    /// Logits `[n, 2]` (spoof, bonafide) for `x [n, d, t]`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let (seq, stats) = self.sequence_inner(g, x, mode)?;
        let logits = self.head(g, seq)?;
        self.commit(stats);
        Ok(logits)
    }

    /// Eval-mode logits without mutating the model.
    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (seq, _) = self.sequence_inner(g, x, Mode::Eval)?;
        self.head(g, seq)
    }

    /// Detection scores for a batch `[n, d, t]`, eval mode.
    pub fn score_batch(&self, inputs: Tensor<T>) -> Result<Vec<f64>> {
        let mut g = Graph::no_grad();
        let x = g.constant(inputs);
        let logits = self.forward_eval(&mut g, x)?;
        Ok(g.value(logits)
            .data()
            .chunks_exact(2)
            .map(|row| score(row))
            .collect())
    }

    pub fn cast<U: Real>(&self) -> DetectorModel<U> {
        DetectorModel {
            config: self.config.clone(),
            params: self.params.cast(),
            conv1: self.conv1.clone(),
            bn1: self.bn1.cast(),
            conv2: self.conv2.clone(),
            bn2: self.bn2.cast(),
            lstms: self.lstms.clone(),
            projection: self.projection.clone(),
            pool: self.pool.clone(),
            mlp_hidden: self.mlp_hidden.clone(),
            mlp_out: self.mlp_out.clone(),
        }
    }
}

/// `logit(bonafide) - logit(spoof)`; higher means more bonafide.
pub fn score<T: Real>(logits: &[T]) -> f64 {
    logits[1].to_f64().unwrap_or(f64::NAN) - logits[0].to_f64().unwrap_or(f64::NAN)
}
