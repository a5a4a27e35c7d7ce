use serde::{Deserialize, Serialize};

use super::JetRecord;
use crate::error::{Error, Result};

/// Floor for the standard deviation of constant features.
pub const STD_EPS: f64 = 1e-8;

/// Single-pass running mean and sum of squared deviations per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Welford {
    pub fn new(num_features: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; num_features],
            m2: vec![0.0; num_features],
        }
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.mean.len() {
            return Err(Error::dim(format!(
                "sample has {} features, expected {}",
                x.len(),
                self.mean.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
        Ok(())
    }

    /// Sample variance `M2 / (count - 1)`.
    pub fn variance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::contract(format!(
                "variance needs at least 2 samples, have {}",
                self.count
            )));
        }
        let d = (self.count - 1) as f64;
        Ok(self.m2.iter().map(|m| m / d).collect())
    }

    pub fn finalize(&self) -> Result<NormStats> {
        Ok(NormStats {
            count: self.count,
            mean: self.mean.clone(),
            std: self
                .variance()?
                .into_iter()
                .map(|v| v.sqrt().max(STD_EPS))
                .collect(),
        })
    }
}

/// Finalized per-feature normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Stable digest of the exact bit patterns, for asserting that the same
    /// statistics were applied to several splits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.count);
        self.mean.iter().chain(&self.std).for_each(|v| eat(v.to_bits()));
        h
    }
}

/// Statistics over the real particles of `records`, after truncation to
/// `num_particles` and `num_features`.
pub fn fit_norm(records: &[JetRecord], num_particles: usize, num_features: usize) -> Result<NormStats> {
    let mut w = Welford::new(num_features);
    for r in records {
        for p in r.particles.iter().take(num_particles) {
            if p.len() < num_features {
                return Err(Error::dim("particle has too few features"));
            }
            w.update(&p[..num_features])?;
        }
    }
    w.finalize()
}
