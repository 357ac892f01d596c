//! Architecture description and derived layer dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{FogError, Result};

/// Stacked 1D-CNN encoder + MLP classifier head description.
///
/// The encoder is `conv_filters.len()` valid-padding conv layers (ReLU),
/// with one optional max-pool inserted after `maxpool_after` (1-based) and
/// global average pooling after the last conv layer. The classifier head is
/// `dense_units` ReLU layers (dropout after the first) and a single-unit
/// sigmoid output. The pretext head is one linear layer from the embedding
/// back to the flattened window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Samples per window (T').
    pub input_len: usize,
    /// Input channels (3 accelerometer axes).
    pub channels: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    /// 1-based conv layer index after which a max-pool runs, if any.
    pub maxpool_after: Option<usize>,
    pub pool: usize,
    pub dense_units: Vec<usize>,
    /// Dropout fraction applied after the first dense layer during training.
    pub dropout: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            input_len: 120,
            channels: 3,
            conv_filters: vec![64, 128, 256, 128, 64],
            kernel: 3,
            maxpool_after: Some(2),
            pool: 2,
            dense_units: vec![128, 64],
            dropout: 0.4,
        }
    }
}

/// Per-layer dimensions derived from an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDims {
    pub conv: Vec<ConvDims>,
    /// Embedding width D (global average pool over the last conv's filters).
    pub embed_dim: usize,
    /// Flattened window length `T' * C` (pretext reconstruction target).
    pub flat_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_len: usize,
    /// `in_len - kernel + 1` (valid padding).
    pub out_len: usize,
    /// Length after the optional max-pool, if this layer has one.
    pub pooled_len: Option<usize>,
}

impl ConvDims {
    /// Length seen by the next layer.
    pub fn final_len(&self) -> usize {
        self.pooled_len.unwrap_or(self.out_len)
    }
}

impl ArchSpec {
    /// Validate the spec and compute the valid-padding length chain
    /// (default: 120 -> 118 -> 116 -> pool 58 -> 56 -> 54 -> 52 -> GAP).
    pub fn dims(&self) -> Result<LayerDims> {
        if self.input_len == 0 || self.channels == 0 {
            return Err(FogError::Config("input_len and channels must be positive".into()));
        }
        if self.kernel == 0 {
            return Err(FogError::Config("kernel must be positive".into()));
        }
        if self.conv_filters.is_empty() {
            return Err(FogError::Config("at least one conv layer is required".into()));
        }
        if self.conv_filters.iter().any(|&f| f == 0) || self.dense_units.iter().any(|&u| u == 0) {
            return Err(FogError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FogError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if let Some(after) = self.maxpool_after {
            if after == 0 || after > self.conv_filters.len() {
                return Err(FogError::Config(format!(
                    "maxpool_after = {after} is outside the {}-layer conv stack",
                    self.conv_filters.len()
                )));
            }
            if self.pool < 2 {
                return Err(FogError::Config("pool size must be at least 2".into()));
            }
        }

        let mut conv = Vec::with_capacity(self.conv_filters.len());
        let mut len = self.input_len;
        let mut ch = self.channels;
        for (i, &filters) in self.conv_filters.iter().enumerate() {
            if len < self.kernel {
                return Err(FogError::Config(format!(
                    "conv layer {} input length {len} is shorter than kernel {}",
                    i + 1,
                    self.kernel
                )));
            }
            let out_len = len - self.kernel + 1;
            let pooled_len = if self.maxpool_after == Some(i + 1) {
                let p = out_len / self.pool;
                if p == 0 {
                    return Err(FogError::Config(format!(
                        "max-pool after conv layer {} would empty the sequence",
                        i + 1
                    )));
                }
                Some(p)
            } else {
                None
            };
            let dims = ConvDims {
                in_ch: ch,
                out_ch: filters,
                in_len: len,
                out_len,
                pooled_len,
            };
            len = dims.final_len();
            ch = filters;
            conv.push(dims);
        }

        Ok(LayerDims {
            conv,
            embed_dim: ch,
            flat_len: self.input_len * self.channels,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        *self.conv_filters.last().expect("validated: at least one conv layer")
    }

    /// A small architecture for fast tests: 2 conv layers of 8 filters over
    /// 16-sample windows, one 16-unit dense layer.
    pub fn tiny() -> ArchSpec {
        ArchSpec {
            input_len: 16,
            channels: 3,
            conv_filters: vec![8, 8],
            kernel: 3,
            maxpool_after: Some(2),
            pool: 2,
            dense_units: vec![16],
            dropout: 0.4,
        }
    }
}

/// Adam settings. `decay` follows the time-based schedule
/// `lr_t = lr0 / (1 + decay * t)` with `t` the completed step count, unless
/// `decay_mode` selects decoupled weight decay instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub decay_mode: DecayMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayMode {
    /// `lr_t = lr0 / (1 + decay * t)`.
    TimeBasedLr,
    /// Constant rate; `w -= lr * decay * w` after each Adam update.
    DecoupledWeightDecay,
}

impl OptimizerSpec {
    pub fn new(learning_rate: f64, decay: f64, batch_size: usize) -> OptimizerSpec {
        OptimizerSpec {
            learning_rate,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size,
            decay_mode: DecayMode::TimeBasedLr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(FogError::Config("learning_rate must be positive".into()));
        }
        if self.decay < 0.0 {
            return Err(FogError::Config("decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(FogError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Effective rate at a given completed-step count.
    pub fn rate_at(&self, step: u64) -> f64 {
        match self.decay_mode {
            DecayMode::TimeBasedLr => self.learning_rate / (1.0 + self.decay * step as f64),
            DecayMode::DecoupledWeightDecay => self.learning_rate,
        }
    }
}
