use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<'a>(cfg: AdamWConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamW {
            cfg,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update. `grads[i]` belongs to `params[i]`; a missing gradient
    /// counts as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.len() != self.first[i].len() {
                    return Err(Error::dim(format!("gradient {i} has the wrong length")));
                }
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::contract(format!(
                        "non-finite gradient at element {j} of parameter {i}"
                    )));
                }
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            betas: (b1, b2),
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i].map_or(0.0, |g| g[j]);
                *w -= lr * weight_decay * *w;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p0: f64, wd: f64, steps: usize, lr: f64) -> Vec<f64> {
        let mut p = Tensor::vector(vec![p0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr,
                weight_decay: wd,
                ..Default::default()
            },
            [&p],
        );
        let mut traj = Vec::new();
        for _ in 0..steps {
            let g = vec![2.0 * p.data()[0]];
            opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
            traj.push(p.data()[0]);
        }
        traj
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut p = Tensor::vector(vec![0.5, -2.0]);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            [&p],
        );
        let g = vec![0.0, 0.0];
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        assert_eq!(p.data(), &[0.5, -2.0]);
    }

    #[test]
    fn decay_only_step() {
        let mut p = Tensor::vector(vec![3.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
        opt.step(&mut [&mut p], &[None]).unwrap();
        assert!((p.data()[0] - 3.0 * (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let traj = run(1.0, 0.01, 200, 0.05);
        assert!(traj.last().unwrap().abs() < 0.01, "{:?}", traj.last());
    }

    #[test]
    fn zero_decay_matches_plain_adam() {
        // Reference Adam written out independently.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let (mut p, mut m, mut v) = (1.5f64, 0.0, 0.0);
        let mut adam = Vec::new();
        for t in 1..=50 {
            let g = 2.0 * p;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            adam.push(p);
        }
        let ours = run(1.5, 0.0, 50, 0.01);
        for (a, b) in adam.iter().zip(&ours) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), [&p]);
        let g = vec![f64::NAN];
        let err = opt.step(&mut [&mut p], &[Some(&g)]).unwrap_err();
        assert!(err.to_string().contains("non-finite gradient"));
        assert_eq!(p.data(), &[1.0]);
    }
}
