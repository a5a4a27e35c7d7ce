//! Dense `f64` tensors and a reverse-mode autodiff tape.

mod graph;
mod value;

pub use graph::{BatchStats, Gradients, Graph, Var};
pub use value::Tensor;

use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Affine parameters and running statistics of a 1-D batchnorm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// `running = (1 - m) * running + m * batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    /// Records the op on `g` with `gamma`/`beta` already bound to vars.
    pub fn apply(
        &self,
        g: &mut Graph,
        x: Var,
        gamma: Var,
        beta: Var,
        training: bool,
    ) -> crate::Result<(Var, Option<BatchStats>)> {
        g.batchnorm(
            x,
            gamma,
            beta,
            self.running_mean.data(),
            self.running_var.data(),
            self.eps,
            training,
        )
    }
}
