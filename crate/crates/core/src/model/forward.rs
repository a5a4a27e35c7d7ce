use rand::RngCore;

use super::state::{Linear, ModelState};
use crate::error::{Error, Result};
use crate::quantization::bitlinear;
use crate::tensor::{BatchNormState, BatchStats, Graph, Tensor, Var};

/// Result of recording a forward pass.
pub struct Forward {
    /// `[batch, num_classes]` log-probabilities.
    pub log_probs: Var,
    /// Parameter vars, in [`ModelState::named_params`] order.
    pub params: Vec<Var>,
    /// Training-mode batch statistics, in [`ModelState::norms_mut`] order.
    pub batch_stats: Vec<BatchStats>,
}

struct Ctx<'g, 'r> {
    g: &'g mut Graph,
    params: Vec<Var>,
    stats: Vec<BatchStats>,
    rng: Option<&'r mut dyn RngCore>,
    dropout: f64,
    trainable: bool,
}

impl Ctx<'_, '_> {
    fn bind(&mut self, t: &Tensor) -> Var {
        let v = if self.trainable {
            self.g.param(t.clone())
        } else {
            self.g.constant(t.clone())
        };
        self.params.push(v);
        v
    }

    fn training(&self) -> bool {
        self.rng.is_some()
    }

    fn linear(&mut self, x: Var, layer: &Linear) -> Result<Var> {
        let w = self.bind(&layer.weight);
        let b = self.bind(&layer.bias);
        if layer.quantized {
            return bitlinear(self.g, x, w, b, &layer.weight);
        }
        let wt = self.g.transpose(w)?;
        let y = self.g.matmul(x, wt)?;
        self.g.add_bias(y, b)
    }

    fn norm(&mut self, x: Var, state: &BatchNormState) -> Result<Var> {
        let gamma = self.bind(&state.gamma);
        let beta = self.bind(&state.beta);
        let training = self.training();
        let (y, stats) = state.apply(self.g, x, gamma, beta, training)?;
        self.stats.extend(stats);
        Ok(y)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => self.g.dropout(x, self.dropout, rng),
            _ => Ok(x),
        }
    }

    /// `[b, t, h*hd] -> [b, h, t, hd]`
    fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.g.shape(x).to_vec();
        let x = self.g.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
        self.g.permute(x, &[0, 2, 1, 3])
    }

    fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.g.shape(x).to_vec();
        let x = self.g.permute(x, &[0, 2, 1, 3])?;
        self.g.reshape(x, &[s[0], s[2], s[1] * s[3]])
    }
}

impl ModelState {
    /// Records the forward pass of `features: [batch, particles, features]`.
    ///
    /// Passing `rng` selects training mode (batch statistics, dropout);
    /// `None` runs inference with the fixed running statistics. With
    /// `trainable` the parameters are recorded as gradient leaves.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        features: &Tensor,
        rng: Option<&mut dyn RngCore>,
        trainable: bool,
    ) -> Result<Forward> {
        let shape = features.shape();
        let f = self.embedding.in_features();
        if shape.len() != 3 || shape[2] != f {
            return Err(Error::dim(format!(
                "expected [batch, particles, {f}] features, got {shape:?}"
            )));
        }
        let batch = shape[0];
        let d = self.embed_dim();
        let heads = self.config.num_heads;
        let mut cx = Ctx {
            g,
            params: Vec::new(),
            stats: Vec::new(),
            rng,
            dropout: self.config.dropout,
            trainable,
        };

        let x = cx.g.constant(features.clone());
        let emb = cx.linear(x, &self.embedding)?;
        let tok = cx.bind(&self.class_token);
        let tok = cx.g.expand(tok, batch)?;
        let tok = cx.g.reshape(tok, &[batch, 1, d])?;
        let mut h = cx.g.concat(&[tok, emb], 1)?;

        for block in &self.blocks {
            let n = cx.norm(h, &block.attn_norm)?;
            let q = cx.linear(n, &block.query)?;
            let k = cx.linear(n, &block.key)?;
            let v = cx.linear(n, &block.value)?;
            let q = cx.split_heads(q, heads)?;
            let k = cx.split_heads(k, heads)?;
            let v = cx.split_heads(v, heads)?;
            let kt = cx.g.transpose(k)?;
            let scores = cx.g.matmul(q, kt)?;
            let hd = block.head_dim(heads) as f64;
            let scores = cx.g.scale(scores, 1.0 / hd.sqrt())?;
            let attn = cx.g.softmax(scores, 3)?;
            let ctx = cx.g.matmul(attn, v)?;
            let ctx = cx.merge_heads(ctx)?;
            let a = cx.linear(ctx, &block.out)?;
            let a = cx.dropout(a)?;
            h = cx.g.add(h, a)?;

            let n = cx.norm(h, &block.ffn_norm)?;
            let u = cx.linear(n, &block.ffn1)?;
            let u = cx.g.relu(u)?;
            let u = cx.linear(u, &block.ffn2)?;
            let u = cx.dropout(u)?;
            h = cx.g.add(h, u)?;
        }

        let cls = cx.g.slice(h, 1, 0, 1)?;
        let cls = cx.g.reshape(cls, &[batch, d])?;
        let cls = cx.norm(cls, &self.final_norm)?;
        let logits = cx.linear(cls, &self.head)?;
        let log_probs = cx.g.log_softmax(logits, 1)?;

        // Binding order above is the canonical named_params order.
        Ok(Forward {
            log_probs,
            params: cx.params,
            batch_stats: cx.stats,
        })
    }

    /// Inference-mode log-probabilities, `[batch, num_classes]`.
    pub fn predict(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, features, None, false)?;
        Ok(g.value(out.log_probs).clone())
    }

    /// Mean negative log-likelihood of `labels`.
    pub fn loss(g: &mut Graph, log_probs: Var, labels: &[usize]) -> Result<Var> {
        g.nll_loss(log_probs, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(seed: u64, shape: [usize; 3]) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn output_is_log_probabilities() {
        let s = ModelState::build(&ModelConfig::tiny(), 0).unwrap();
        let out = s.predict(&random_features(1, [16, 8, 3])).unwrap();
        assert_eq!(out.shape(), &[16, 5]);
        for r in 0..16 {
            let total: f64 = out.row(r).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn feature_mismatch_is_dimension_error() {
        let s = ModelState::build(&ModelConfig::tiny(), 0).unwrap();
        assert!(matches!(
            s.predict(&random_features(1, [2, 8, 4])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn inference_is_bit_identical() {
        let s = ModelState::build(&ModelConfig::new(2, 16, 2), 5).unwrap();
        let x = random_features(2, [4, 8, 3]);
        assert_eq!(s.predict(&x).unwrap(), s.predict(&x).unwrap());
    }

    #[test]
    fn param_vars_follow_canonical_order() {
        let s = ModelState::build(&ModelConfig::new(2, 8, 2), 0).unwrap();
        let mut g = Graph::new();
        let out = s
            .forward_graph(&mut g, &random_features(0, [2, 3, 3]), None, true)
            .unwrap();
        let named = s.named_params();
        assert_eq!(out.params.len(), named.len());
        for (v, (name, t)) in out.params.iter().zip(named) {
            assert_eq!(g.value(*v), t, "{name}");
        }
    }

    #[test]
    fn training_mode_returns_batch_stats() {
        let s = ModelState::build(&ModelConfig::new(3, 8, 2), 0).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = s
            .forward_graph(&mut g, &random_features(0, [4, 3, 3]), Some(&mut rng), true)
            .unwrap();
        assert_eq!(out.batch_stats.len(), 3 * 2 + 1);
    }

    #[test]
    fn no_dropout_train_and_eval_differ_only_by_norm_stats() {
        let mut s = ModelState::build(&ModelConfig::new(2, 8, 2), 0).unwrap();
        let x = random_features(3, [6, 5, 3]);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = s.forward_graph(&mut g, &x, Some(&mut rng), false).unwrap();
        let train_lp = g.value(out.log_probs).clone();
        // Running stats set to exactly the batch statistics, without the
        // unbiased correction, reproduce the training-mode output.
        for (st, n) in out.batch_stats.iter().zip(s.norms_mut()) {
            let c = st.count as f64;
            n.running_mean = Tensor::vector(st.mean.clone());
            n.running_var = Tensor::vector(st.var.iter().map(|v| v * (c - 1.0) / c).collect());
        }
        let eval_lp = s.predict(&x).unwrap();
        for (a, b) in train_lp.data().iter().zip(eval_lp.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn zeroed_output_projections_make_blocks_identity() {
        let mut s = ModelState::build(&ModelConfig::new(3, 8, 2), 2).unwrap();
        for b in &mut s.blocks {
            for l in [&mut b.out, &mut b.ffn2] {
                l.weight = Tensor::zeros(l.weight.shape());
            }
        }
        let x = random_features(4, [3, 4, 3]);
        let full = s.predict(&x).unwrap();
        let mut bare = s.clone();
        bare.blocks.clear();
        assert_eq!(full, bare.predict(&x).unwrap());
    }
}
