use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub input_dim: usize,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    /// Frame-delta step after the conv block ("Delta" vs "Direct").
    pub use_delta: bool,
    pub use_residual: bool,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub projection_dim: usize,
    pub attention_heads: usize,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl DetectorConfig {
    pub const FULL_PROJECTION_DIM: usize = 1536;
    pub const FULL_LSTM_LAYERS: usize = 2;

    /// Full-size defaults for a `d`-dimensional frontend.
    pub fn new(input_dim: usize) -> Self {
        DetectorConfig {
            input_dim,
            conv_kernel: 3,
            conv_channels: input_dim,
            use_delta: false,
            use_residual: true,
            lstm_hidden: 256,
            lstm_layers: Self::FULL_LSTM_LAYERS,
            projection_dim: Self::FULL_PROJECTION_DIM,
            attention_heads: 4,
            mlp_hidden: 256,
            num_classes: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            seed: 0,
        }
    }

    /// Reduced widths for desk-scale runs and gradient checks.
    pub fn tiny(input_dim: usize) -> Self {
        DetectorConfig {
            lstm_hidden: 16,
            projection_dim: 32,
            attention_heads: 4,
            mlp_hidden: 16,
            ..Self::new(input_dim)
        }
    }

    pub fn is_full_size(&self) -> bool {
        self.lstm_layers == Self::FULL_LSTM_LAYERS && self.projection_dim == Self::FULL_PROJECTION_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return fail("input_dim must be >= 1".into());
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.use_residual && self.conv_channels != self.input_dim {
            return fail(format!(
                "residual connection needs conv_channels == input_dim ({} != {})",
                self.conv_channels, self.input_dim
            ));
        }
        if self.conv_channels == 0 || self.lstm_hidden == 0 || self.mlp_hidden == 0 {
            return fail("layer widths must be >= 1".into());
        }
        if self.lstm_layers == 0 {
            return fail("need at least one LSTM layer".into());
        }
        if self.attention_heads == 0 || !self.projection_dim.is_multiple_of(self.attention_heads) {
            return fail(format!(
                "projection_dim {} is not divisible by {} attention heads",
                self.projection_dim, self.attention_heads
            ));
        }
        if self.num_classes != 2 {
            return fail(format!("num_classes is fixed at 2, got {}", self.num_classes));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "input_dim",
        "conv_kernel",
        "conv_channels",
        "use_delta",
        "use_residual",
        "lstm_hidden",
        "lstm_layers",
        "projection_dim",
        "attention_heads",
        "mlp_hidden",
        "num_classes",
        "bn_eps",
        "bn_momentum",
        "seed",
    ];

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("input_dim", self.input_dim);
        kv.set("conv_kernel", self.conv_kernel);
        kv.set("conv_channels", self.conv_channels);
        kv.set("use_delta", self.use_delta);
        kv.set("use_residual", self.use_residual);
        kv.set("lstm_hidden", self.lstm_hidden);
        kv.set("lstm_layers", self.lstm_layers);
        kv.set("projection_dim", self.projection_dim);
        kv.set("attention_heads", self.attention_heads);
        kv.set("mlp_hidden", self.mlp_hidden);
        kv.set("num_classes", self.num_classes);
        kv.set("bn_eps", self.bn_eps);
        kv.set("bn_momentum", self.bn_momentum);
        kv.set("seed", self.seed);
        kv
    }

    /// Overlays the keys present in `kv` on `self`. When `input_dim` changes
    /// and `conv_channels` is not given, channels follow the input dim.
    pub fn apply_kv(mut self, kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(Self::KEYS, "detector")?;
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get_parsed(stringify!($field))? {
                    self.$field = v;
                }
            };
        }
        let before = self.input_dim;
        take!(input_dim);
        if self.input_dim != before && kv.get("conv_channels").is_none() {
            self.conv_channels = self.input_dim;
        }
        take!(conv_kernel);
        take!(conv_channels);
        take!(use_delta);
        take!(use_residual);
        take!(lstm_hidden);
        take!(lstm_layers);
        take!(projection_dim);
        take!(attention_heads);
        take!(mlp_hidden);
        take!(num_classes);
        take!(bn_eps);
        take!(bn_momentum);
        take!(seed);
        Ok(self)
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = kv
            .get_parsed("input_dim")?
            .ok_or_else(|| Error::Config("detector config lacks input_dim".into()))?;
        let cfg = Self::new(d).apply_kv(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
