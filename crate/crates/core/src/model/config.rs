use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BN_EPS, BN_MOMENTUM};

/// Architecture hyperparameters of a JetFormer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// FFN hidden width; `2 * embed_dim` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_hidden: Option<usize>,
    pub num_features: usize,
    pub num_particles: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Attention and FFN projections become BitLinear layers.
    #[serde(default)]
    pub quantized: bool,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
}

fn default_eps() -> f64 {
    BN_EPS
}

fn default_momentum() -> f64 {
    BN_MOMENTUM
}

impl ModelConfig {
    pub fn new(num_blocks: usize, embed_dim: usize, num_heads: usize) -> Self {
        ModelConfig {
            num_blocks,
            embed_dim,
            num_heads,
            ffn_hidden: None,
            num_features: 3,
            num_particles: 8,
            num_classes: 5,
            dropout: 0.0,
            quantized: false,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// JetFormer-tiny: 4 blocks, width 8, 2 heads on 8 particles x 3 features.
    pub fn tiny() -> Self {
        Self::new(4, 8, 2)
    }

    pub fn with_data_shape(mut self, particles: usize, features: usize, classes: usize) -> Self {
        self.num_particles = particles;
        self.num_features = features;
        self.num_classes = classes;
        self
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(2 * self.embed_dim)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_blocks == 0 {
            return fail("num_blocks must be >= 1".into());
        }
        if self.num_heads == 0 || self.embed_dim == 0 {
            return fail("embed_dim and num_heads must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.head_dim() < 4 {
            return fail(format!(
                "embed_dim / num_heads = {} is below the minimum of 4 dims per head",
                self.head_dim()
            ));
        }
        if self.ffn_width() == 0 || self.num_features == 0 || self.num_particles == 0 {
            return fail("ffn_hidden, num_features and num_particles must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} must be >= 2", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("batchnorm eps must be > 0 and momentum in [0, 1]".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            num_features: self.num_features,
            num_particles: self.num_particles,
            num_classes: self.num_classes,
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            blocks: vec![
                BlockDims {
                    head_dim: self.head_dim(),
                    ffn_hidden: self.ffn_width(),
                };
                self.num_blocks
            ],
        }
    }
}

/// Per-block widths; these diverge from the config after pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub head_dim: usize,
    pub ffn_hidden: usize,
}

/// Concrete layer widths of a (possibly pruned) model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub num_features: usize,
    pub num_particles: usize,
    pub num_classes: usize,
    /// Residual-stream width.
    pub embed_dim: usize,
    pub num_heads: usize,
    pub blocks: Vec<BlockDims>,
}

impl Architecture {
    pub fn attn_width(&self, block: usize) -> usize {
        self.num_heads * self.blocks[block].head_dim
    }
}
