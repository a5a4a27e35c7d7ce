use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{Architecture, BlockDims, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{BatchNormState, BatchStats, Tensor};

/// Dense projection `y = x W^T + b` with `W: [out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
    /// Forward through 1-bit weights and 8-bit activations.
    pub quantized: bool,
}

impl Linear {
    fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, quantized: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_out, fan_in], w).expect("linear shape"),
            bias: Tensor::zeros(&[fan_out]),
            quantized,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub attn_norm: BatchNormState,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ffn_norm: BatchNormState,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

impl Block {
    pub fn head_dim(&self, num_heads: usize) -> usize {
        self.query.out_features() / num_heads
    }

    pub fn linears(&self) -> [(&'static str, &Linear); 6] {
        [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("out", &self.out),
            ("ffn1", &self.ffn1),
            ("ffn2", &self.ffn2),
        ]
    }
}

/// Learned parameters and batchnorm statistics of a JetFormer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub embedding: Linear,
    /// `[1, embed_dim]`
    pub class_token: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: BatchNormState,
    pub head: Linear,
}

fn bn(channels: usize, config: &ModelConfig) -> BatchNormState {
    BatchNormState {
        eps: config.bn_eps,
        momentum: config.bn_momentum,
        ..BatchNormState::new(channels)
    }
}

impl ModelState {
    /// Fresh model with uniform `±1/sqrt(fan_in)` weights, zero biases and
    /// a `N(0, 0.02)` class token. Deterministic in `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "model.init");
        let d = config.embed_dim;
        let f = config.ffn_width();
        let q = config.quantized;
        let embedding = Linear::init(&mut rng, config.num_features, d, false);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let class_token =
            Tensor::new(vec![1, d], (0..d).map(|_| normal.sample(&mut rng)).collect())?;
        let blocks = (0..config.num_blocks)
            .map(|_| Block {
                attn_norm: bn(d, config),
                query: Linear::init(&mut rng, d, d, q),
                key: Linear::init(&mut rng, d, d, q),
                value: Linear::init(&mut rng, d, d, q),
                out: Linear::init(&mut rng, d, d, q),
                ffn_norm: bn(d, config),
                ffn1: Linear::init(&mut rng, d, f, q),
                ffn2: Linear::init(&mut rng, f, d, q),
            })
            .collect();
        let head = Linear::init(&mut rng, d, config.num_classes, false);
        Ok(ModelState {
            config: config.clone(),
            embedding,
            class_token,
            blocks,
            final_norm: bn(d, config),
            head,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.class_token.numel()
    }

    /// Widths read off the parameter shapes.
    pub fn architecture(&self) -> Architecture {
        let heads = self.config.num_heads;
        Architecture {
            num_features: self.embedding.in_features(),
            num_particles: self.config.num_particles,
            num_classes: self.head.out_features(),
            embed_dim: self.embed_dim(),
            num_heads: heads,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDims {
                    head_dim: b.head_dim(heads),
                    ffn_hidden: b.ffn1.out_features(),
                })
                .collect(),
        }
    }

    /// Trainable tensors in canonical order, with their names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embedding.weight".to_string(), &self.embedding.weight),
            ("embedding.bias".to_string(), &self.embedding.bias),
            ("class_token".to_string(), &self.class_token),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.attn_norm.gamma"), &b.attn_norm.gamma));
            out.push((format!("blocks.{i}.attn_norm.beta"), &b.attn_norm.beta));
            for (name, l) in [
                ("query", &b.query),
                ("key", &b.key),
                ("value", &b.value),
                ("out", &b.out),
            ] {
                out.push((format!("blocks.{i}.{name}.weight"), &l.weight));
                out.push((format!("blocks.{i}.{name}.bias"), &l.bias));
            }
            out.push((format!("blocks.{i}.ffn_norm.gamma"), &b.ffn_norm.gamma));
            out.push((format!("blocks.{i}.ffn_norm.beta"), &b.ffn_norm.beta));
            for (name, l) in [("ffn1", &b.ffn1), ("ffn2", &b.ffn2)] {
                out.push((format!("blocks.{i}.{name}.weight"), &l.weight));
                out.push((format!("blocks.{i}.{name}.bias"), &l.bias));
            }
        }
        out.push(("final_norm.gamma".into(), &self.final_norm.gamma));
        out.push(("final_norm.beta".into(), &self.final_norm.beta));
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Same order as [`named_params`](Self::named_params).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let n = self.named_params().len();
        let mut all = self.tensors_mut();
        all.truncate(n);
        all
    }

    /// Parameters in canonical order followed by buffers in
    /// [`named_buffers`](Self::named_buffers) order.
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let ModelState {
            embedding,
            class_token,
            blocks,
            final_norm,
            head,
            ..
        } = self;
        let mut out = vec![&mut embedding.weight, &mut embedding.bias, class_token];
        let mut buffers = Vec::new();
        for b in blocks.iter_mut() {
            let Block {
                attn_norm,
                query,
                key,
                value,
                out: proj,
                ffn_norm,
                ffn1,
                ffn2,
            } = b;
            out.push(&mut attn_norm.gamma);
            out.push(&mut attn_norm.beta);
            for l in [query, key, value, proj] {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            out.push(&mut ffn_norm.gamma);
            out.push(&mut ffn_norm.beta);
            for l in [ffn1, ffn2] {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            buffers.push(&mut attn_norm.running_mean);
            buffers.push(&mut attn_norm.running_var);
            buffers.push(&mut ffn_norm.running_mean);
            buffers.push(&mut ffn_norm.running_var);
        }
        out.push(&mut final_norm.gamma);
        out.push(&mut final_norm.beta);
        out.push(&mut head.weight);
        out.push(&mut head.bias);
        buffers.push(&mut final_norm.running_mean);
        buffers.push(&mut final_norm.running_var);
        out.extend(buffers);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Non-trainable batchnorm statistics, by name.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, n) in [("attn_norm", &b.attn_norm), ("ffn_norm", &b.ffn_norm)] {
                out.push((format!("blocks.{i}.{name}.running_mean"), &n.running_mean));
                out.push((format!("blocks.{i}.{name}.running_var"), &n.running_var));
            }
        }
        out.push(("final_norm.running_mean".into(), &self.final_norm.running_mean));
        out.push(("final_norm.running_var".into(), &self.final_norm.running_var));
        out
    }

    /// Parameters then buffers, mutable, with the names used by
    /// [`named_params`](Self::named_params) and
    /// [`named_buffers`](Self::named_buffers).
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self
            .named_params()
            .into_iter()
            .chain(self.named_buffers())
            .map(|(n, _)| n)
            .collect();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    /// Number of learnable scalars.
    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Norms in forward order: per block (attention, ffn), then the final one.
    pub fn norms_mut(&mut self) -> Vec<&mut BatchNormState> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.attn_norm);
            out.push(&mut b.ffn_norm);
        }
        out.push(&mut self.final_norm);
        out
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        let norms = self.norms_mut();
        if norms.len() != stats.len() {
            return Err(Error::contract(format!(
                "{} batch statistics for {} norms",
                stats.len(),
                norms.len()
            )));
        }
        for (n, s) in norms.into_iter().zip(stats) {
            n.update_running(s);
        }
        Ok(())
    }

    /// All linear layers with names, in forward order.
    pub fn named_linears(&self) -> Vec<(String, &Linear)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, l) in b.linears() {
                out.push((format!("blocks.{i}.{name}"), l));
            }
        }
        out.push(("head".into(), &self.head));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let c = ModelConfig::tiny();
        assert_eq!(ModelState::build(&c, 3).unwrap(), ModelState::build(&c, 3).unwrap());
        assert_ne!(ModelState::build(&c, 3).unwrap(), ModelState::build(&c, 4).unwrap());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(matches!(
            ModelState::build(&ModelConfig::new(2, 8, 3), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn param_orders_agree() {
        let mut s = ModelState::build(&ModelConfig::new(2, 8, 2), 0).unwrap();
        let shapes: Vec<Vec<usize>> = s.params().iter().map(|t| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> =
            s.params_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        assert_eq!(s.named_params().len(), 3 + 2 * 16 + 4);
        let names: Vec<String> = s.named_params().into_iter().chain(s.named_buffers()).map(|(n, _)| n).collect();
        let all: Vec<(String, Vec<usize>)> = s
            .named_tensors_mut()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        assert_eq!(all.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(), names);
        assert!(all.iter().zip(&shapes).all(|((_, a), b)| a == b));
    }

    #[test]
    fn init_ranges() {
        let s = ModelState::build(&ModelConfig::tiny(), 1).unwrap();
        let bound = 1.0 / 8f64.sqrt();
        assert!(s.blocks[0].query.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(s.blocks[0].query.bias.data().iter().all(|&b| b == 0.0));
        assert!(s.class_token.max_abs() < 0.2);
        assert!(s
            .named_buffers()
            .iter()
            .filter(|(n, _)| n.ends_with("running_var"))
            .all(|(_, t)| t.data().iter().all(|&v| v > 0.0)));
    }
}
