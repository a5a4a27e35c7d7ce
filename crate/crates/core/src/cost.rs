//! Parameter and FLOP accounting.
//!
//! Counting convention, for a single jet:
//! - one multiply-accumulate in a matmul is 2 FLOPs (bias adds are not counted);
//! - residual adds and ReLU are 1 FLOP per element, as is the attention scaling;
//! - softmax and log-softmax are 5 FLOPs per element;
//! - inference batchnorm is 2 FLOPs per element (folded scale and shift).
//!
//! The particle embedding runs on `seq_len - 1` tokens; everything inside
//! the blocks sees the class token too.

use serde::{Deserialize, Serialize};

use crate::model::{Architecture, ModelConfig};

const MAC: u64 = 2;
const SOFTMAX: u64 = 5;
const NORM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    fn from_layers(layers: Vec<LayerCost>) -> Self {
        CostReport {
            params: layers.iter().map(|l| l.params).sum(),
            flops: layers.iter().map(|l| l.flops).sum(),
            layers,
        }
    }

    /// Sum over layers whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .fold((0, 0), |(p, f), l| (p + l.params, f + l.flops))
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<w$}  {:>10}  {:>12}\n", "layer", "params", "flops");
        for l in &self.layers {
            s.push_str(&format!("{:<w$}  {:>10}  {:>12}\n", l.name, l.params, l.flops));
        }
        s.push_str(&format!("{:<w$}  {:>10}  {:>12}\n", "total", self.params, self.flops));
        s
    }
}

/// FLOPs of a dense layer applied to `tokens` rows.
pub fn linear_flops(tokens: u64, fan_in: u64, fan_out: u64) -> u64 {
    tokens * MAC * fan_in * fan_out
}

pub fn linear_params(fan_in: u64, fan_out: u64) -> u64 {
    fan_in * fan_out + fan_out
}

/// Per-layer breakdown for `arch` with `seq_len` tokens (particles plus
/// the class token).
pub fn cost_report(arch: &Architecture, seq_len: usize) -> CostReport {
    let t = seq_len as u64;
    let p = t.saturating_sub(1);
    let d = arch.embed_dim as u64;
    let f = arch.num_features as u64;
    let c = arch.num_classes as u64;
    let h = arch.num_heads as u64;
    let layer = |name: String, params: u64, flops: u64| LayerCost {
        name,
        params,
        flops,
    };

    let mut layers = vec![
        layer("embedding".into(), linear_params(f, d), linear_flops(p, f, d)),
        layer("class_token".into(), d, 0),
    ];
    for (i, b) in arch.blocks.iter().enumerate() {
        let hd = b.head_dim as u64;
        let a = h * hd;
        let u = b.ffn_hidden as u64;
        let n = |s: &str| format!("blocks.{i}.{s}");
        layers.extend([
            layer(n("attn_norm"), 2 * d, NORM * t * d),
            layer(n("query"), linear_params(d, a), linear_flops(t, d, a)),
            layer(n("key"), linear_params(d, a), linear_flops(t, d, a)),
            layer(n("value"), linear_params(d, a), linear_flops(t, d, a)),
            layer(n("attn_scores"), 0, h * t * t * hd * MAC),
            layer(n("attn_scale"), 0, h * t * t),
            layer(n("attn_softmax"), 0, SOFTMAX * h * t * t),
            layer(n("attn_values"), 0, h * t * t * hd * MAC),
            layer(n("out"), linear_params(a, d), linear_flops(t, a, d)),
            layer(n("attn_residual"), 0, t * d),
            layer(n("ffn_norm"), 2 * d, NORM * t * d),
            layer(n("ffn1"), linear_params(d, u), linear_flops(t, d, u)),
            layer(n("ffn_relu"), 0, t * u),
            layer(n("ffn2"), linear_params(u, d), linear_flops(t, u, d)),
            layer(n("ffn_residual"), 0, t * d),
        ]);
    }
    layers.extend([
        layer("head.norm".into(), 2 * d, NORM * d),
        layer("head.linear".into(), linear_params(d, c), linear_flops(1, d, c)),
        layer("head.log_softmax".into(), 0, SOFTMAX * c),
    ]);
    CostReport::from_layers(layers)
}

pub fn count_params(arch: &Architecture) -> u64 {
    cost_report(arch, arch.num_particles + 1).params
}

pub fn count_flops(arch: &Architecture, seq_len: usize) -> u64 {
    cost_report(arch, seq_len).flops
}

/// FLOPs of an unpruned config at its own sequence length.
pub fn config_flops(config: &ModelConfig) -> u64 {
    count_flops(&config.architecture(), config.num_particles + 1)
}

pub fn config_params(config: &ModelConfig) -> u64 {
    count_params(&config.architecture())
}
