use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const NUM_TRANSFORMERS: [usize; 6] = [1, 2, 3, 4, 5, 6];
/// (embed_dim, num_heads) pairs, searched as one categorical.
pub const DIM_HEADS: [(usize, usize); 8] = [(8, 2), (16, 2), (32, 2), (64, 2), (64, 4), (128, 2), (128, 4), (128, 8)];
pub const DROPOUTS: [f64; 2] = [0.0, 0.05];

/// One architecture drawn from a [`SearchSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPoint {
    pub num_transformers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub dropout: f64,
}

impl ConfigPoint {
    /// `base` supplies the data shape and batchnorm settings.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            num_blocks: self.num_transformers,
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            ffn_hidden: None,
            dropout: self.dropout,
            ..base.clone()
        }
    }
}

/// Genes of a point: an index into each categorical.
pub type Genes = [usize; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub num_transformers: Vec<usize>,
    pub dim_heads: Vec<(usize, usize)>,
    pub dropout: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            num_transformers: NUM_TRANSFORMERS.to_vec(),
            dim_heads: DIM_HEADS.to_vec(),
            dropout: DROPOUTS.to_vec(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.cardinalities().contains(&0) {
            return Err(Error::Config("every search dimension needs at least one choice".into()));
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> Genes {
        [self.num_transformers.len(), self.dim_heads.len(), self.dropout.len()]
    }

    pub fn len(&self) -> usize {
        self.cardinalities().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, genes: Genes) -> ConfigPoint {
        let (embed_dim, num_heads) = self.dim_heads[genes[1]];
        ConfigPoint {
            num_transformers: self.num_transformers[genes[0]],
            embed_dim,
            num_heads,
            dropout: self.dropout[genes[2]],
        }
    }

    pub fn genes(&self, p: &ConfigPoint) -> Option<Genes> {
        Some([
            self.num_transformers.iter().position(|&n| n == p.num_transformers)?,
            self.dim_heads.iter().position(|&dh| dh == (p.embed_dim, p.num_heads))?,
            self.dropout.iter().position(|&d| d == p.dropout)?,
        ])
    }

    pub fn contains(&self, p: &ConfigPoint) -> bool {
        self.genes(p).is_some()
    }

    /// Every point, first dimension slowest.
    pub fn points(&self) -> Vec<ConfigPoint> {
        let [a, b, c] = self.cardinalities();
        let mut out = Vec::with_capacity(a * b * c);
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    out.push(self.point([i, j, k]));
                }
            }
        }
        out
    }

    pub fn sample_genes<R: Rng>(&self, rng: &mut R) -> Genes {
        self.cardinalities().map(|n| rng.random_range(0..n))
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ConfigPoint {
        self.point(self.sample_genes(rng))
    }
}
