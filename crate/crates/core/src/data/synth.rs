//! Synthetic jets.
//!
//! Class `c` of `C` owns the axis at angle `θ_c = π·c/C` in the `(f0, f1)`
//! plane. Every particle picks a side `s = ±1` with equal probability and
//! sits at `s·RADIUS·(cos θ_c, sin θ_c)` plus isotropic Gaussian noise of
//! width `NOISE`. Remaining features are standard normal noise whose width
//! grows slowly with the class id. Each jet carries between `⌈P/2⌉` and
//! `P` particles.
//!
//! Because of the random side, every feature has zero mean in every class:
//! no linear function of the feature means separates the classes, while
//! second moments (the axis orientation) identify them.
//! With a single feature the classes differ by their radius instead.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::JetRecord;
use crate::error::{Error, Result};
use crate::rng::substream;

pub const RADIUS: f64 = 2.0;
pub const NOISE: f64 = 0.6;

pub fn synth_gen(
    seed: u64,
    num_jets: usize,
    num_particles: usize,
    num_features: usize,
    num_classes: usize,
) -> Result<Vec<JetRecord>> {
    if num_classes < 2 || num_particles == 0 || num_features == 0 {
        return Err(Error::contract(
            "synth_gen needs >= 2 classes and positive particle and feature counts",
        ));
    }
    let mut rng = substream(seed, "data.synth");
    let mut labels: Vec<usize> = (0..num_jets).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let min_len = num_particles.div_ceil(2);
    let records = labels
        .into_iter()
        .map(|label| {
            let n = rng.random_range(min_len..=num_particles);
            let theta = std::f64::consts::PI * label as f64 / num_classes as f64;
            let particles = (0..n)
                .map(|_| {
                    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let mut noise = || -> f64 { rng.sample(StandardNormal) };
                    let mut p = Vec::with_capacity(num_features);
                    if num_features == 1 {
                        let r = RADIUS * (1.0 + label as f64) / num_classes as f64;
                        p.push(side * r + NOISE * noise() / num_classes as f64);
                    } else {
                        p.push(side * RADIUS * theta.cos() + NOISE * noise());
                        p.push(side * RADIUS * theta.sin() + NOISE * noise());
                        let width = 1.0 + 0.1 * label as f64;
                        for _ in 2..num_features {
                            p.push(width * noise());
                        }
                    }
                    p
                })
                .collect();
            JetRecord { particles, label }
        })
        .collect();
    Ok(records)
}
