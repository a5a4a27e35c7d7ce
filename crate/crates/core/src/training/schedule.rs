use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute improvement threshold shared by plateau detection and early
/// stopping.
pub const IMPROVEMENT: f64 = 1e-6;

/// `end + (start - end) * (1 + cos(pi * frac)) / 2`, written so that
/// `frac = 0` gives `start` and `frac = 1` gives `end` exactly.
fn cos_anneal(start: f64, end: f64, frac: f64) -> f64 {
    let w = (1.0 + (PI * frac).cos()) / 2.0;
    start * w + end * (1.0 - w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_start: f64,
    pub div_final: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        OneCycle {
            max_lr: 1e-3,
            pct_start: 0.2,
            div_start: 25.0,
            div_final: 1e4,
        }
    }
}

impl OneCycle {
    /// Cosine warm-up from `max_lr/div_start` to `max_lr` over the first
    /// `pct_start` of the steps, then cosine decay to `max_lr/div_final` at
    /// the last step.
    pub fn lr(&self, step: usize, total_steps: usize) -> Result<f64> {
        if step >= total_steps {
            return Err(Error::contract(format!(
                "step {step} outside a {total_steps}-step cycle"
            )));
        }
        let peak = self.pct_start * total_steps as f64;
        let s = step as f64;
        let lo = self.max_lr / self.div_start;
        let hi = self.max_lr;
        let end = self.max_lr / self.div_final;
        Ok(if s < peak {
            cos_anneal(lo, hi, s / peak)
        } else {
            let span = (total_steps - 1) as f64 - peak;
            let frac = if span > 0.0 { (s - peak) / span } else { 1.0 };
            cos_anneal(hi, end, frac)
        })
    }
}

/// Cosine annealing over `t_max` epochs.
pub fn cosine_lr(epoch: usize, t_max: usize, lr0: f64, min_lr: f64) -> f64 {
    cos_anneal(lr0, min_lr, epoch as f64 / t_max.max(1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl PlateauConfig {
    /// Full-precision training setting.
    pub const TRAIN: PlateauConfig = PlateauConfig {
        factor: 0.5,
        patience: 2,
        min_lr: 1e-4,
    };
    /// Quantization-aware training setting.
    pub const QAT: PlateauConfig = PlateauConfig {
        factor: 0.8,
        patience: 5,
        min_lr: 1e-4,
    };
}

/// Reduce-on-plateau tracker for a minimized metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub cfg: PlateauConfig,
    pub lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr0: f64) -> Self {
        Plateau {
            cfg,
            lr: lr0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best - IMPROVEMENT {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.cfg.patience {
                self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying `history` through a plateau tracker.
pub fn plateau_lr(history: &[f64], cfg: PlateauConfig, lr0: f64) -> f64 {
    let mut p = Plateau::new(cfg, lr0);
    history.iter().fold(lr0, |_, &m| p.observe(m))
}

/// Which learning-rate policy a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    Plateau(PlateauConfig),
    Cosine { min_lr: f64 },
    OneCycle(OneCycle),
}

impl Scheduler {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "plateau" => Ok(Scheduler::Plateau(PlateauConfig::TRAIN)),
            "cosine" => Ok(Scheduler::Cosine { min_lr: 1e-6 }),
            "onecycle" => Ok(Scheduler::OneCycle(OneCycle::default())),
            other => Err(Error::Config(format!("unknown scheduler {other:?}"))),
        }
    }
}
