//! Jet records, zero-padded batches, feature normalization and the
//! synthetic jet generator.

mod csvio;
mod norm;
mod synth;

pub use csvio::{load_csv, write_csv, Manifest};
pub use norm::{fit_norm, NormStats, Welford, STD_EPS};
pub use synth::synth_gen;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

/// One jet: a list of per-particle feature vectors and its class id.
#[derive(Clone, Debug, PartialEq)]
pub struct JetRecord {
    pub particles: Vec<Vec<f64>>,
    pub label: usize,
}

impl JetRecord {
    pub fn num_features(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }
}

/// Keeps the first `num_particles` particles and first `num_features`
/// features, then appends zero rows up to `num_particles`.
pub fn truncate_pad(record: &JetRecord, num_particles: usize, num_features: usize) -> Result<JetRecord> {
    if record.particles.iter().any(|p| p.len() < num_features) {
        return Err(Error::dim(format!(
            "record has {} features, {num_features} requested",
            record.num_features()
        )));
    }
    let mut particles: Vec<Vec<f64>> = record
        .particles
        .iter()
        .take(num_particles)
        .map(|p| p[..num_features].to_vec())
        .collect();
    particles.resize(num_particles, vec![0.0; num_features]);
    Ok(JetRecord {
        particles,
        label: record.label,
    })
}

/// Zero-padded `[batch, particles, features]` block with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Real particles per jet; rows at or beyond this are zero.
    pub true_lengths: Vec<usize>,
}

impl JetBatch {
    pub fn from_records(records: &[JetRecord], num_particles: usize, num_features: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::contract("cannot batch zero records"));
        }
        let mut data = Vec::with_capacity(records.len() * num_particles * num_features);
        let mut true_lengths = Vec::with_capacity(records.len());
        for r in records {
            true_lengths.push(r.particles.len().min(num_particles));
            for p in truncate_pad(r, num_particles, num_features)?.particles {
                data.extend(p);
            }
        }
        Ok(JetBatch {
            features: Tensor::new(vec![records.len(), num_particles, num_features], data)?,
            labels: records.iter().map(|r| r.label).collect(),
            true_lengths,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_particles(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[2]
    }

    /// Sub-batch of the given jets, in order.
    pub fn select(&self, idx: &[usize]) -> Result<JetBatch> {
        let per = self.num_particles() * self.num_features();
        let src = self.features.data();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Index(format!("jet {i} of {}", self.len())));
            }
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        Ok(JetBatch {
            features: Tensor::new(
                vec![idx.len(), self.num_particles(), self.num_features()],
                data,
            )?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            true_lengths: idx.iter().map(|&i| self.true_lengths[i]).collect(),
        })
    }

    /// `(x - mean) / std` on real particles; padded rows stay zero.
    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        let f = self.num_features();
        if stats.mean.len() != f {
            return Err(Error::dim(format!(
                "norm stats have {} features, batch has {f}",
                stats.mean.len()
            )));
        }
        let p = self.num_particles();
        let lengths = self.true_lengths.clone();
        let data = self.features.data_mut();
        for (j, &len) in lengths.iter().enumerate() {
            for k in 0..p {
                let row = &mut data[(j * p + k) * f..(j * p + k + 1) * f];
                if k < len {
                    for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                        *v = (*v - m) / s;
                    }
                } else {
                    row.fill(0.0);
                }
            }
        }
        Ok(())
    }
}

/// Seeded shuffle then split, `train_fraction` of jets first.
pub fn split(records: &[JetRecord], train_fraction: f64, seed: u64) -> (Vec<JetRecord>, Vec<JetRecord>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut substream(seed, "data.split"));
    let cut = ((records.len() as f64) * train_fraction).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}

/// Per-class counts.
pub fn class_histogram(records: &[JetRecord], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for r in records {
        if r.label < num_classes {
            h[r.label] += 1;
        }
    }
    h
}
