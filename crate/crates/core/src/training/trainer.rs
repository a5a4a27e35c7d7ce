use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::optim::{AdamW, AdamWConfig};
use super::schedule::{cosine_lr, Plateau, PlateauConfig, Scheduler, IMPROVEMENT};
use crate::data::JetBatch;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::substream;
use crate::tensor::Graph;

/// Early-stop patience for full training runs.
pub const FINAL_PATIENCE: usize = 10;
/// Early-stop patience inside architecture-search trials.
pub const HPO_PATIENCE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub scheduler: Scheduler,
    /// `None` trains for all epochs and keeps the last state.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            optimizer: AdamWConfig::default(),
            scheduler: Scheduler::Plateau(PlateauConfig::TRAIN),
            early_stop_patience: Some(FINAL_PATIENCE),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Search-trial protocol: 25 epochs of OneCycle AdamW, patience 4.
    pub fn hpo_trial(seed: u64) -> Self {
        TrainConfig {
            epochs: 25,
            scheduler: Scheduler::parse("onecycle").expect("known scheduler"),
            early_stop_patience: Some(HPO_PATIENCE),
            seed,
            ..Default::default()
        }
    }

    /// Quantization-aware training: plateau (0.8, 5, 1e-4), 80 epochs,
    /// lr 8e-4.
    pub fn qat(seed: u64) -> Self {
        TrainConfig {
            epochs: 80,
            optimizer: AdamWConfig {
                lr: 8e-4,
                ..Default::default()
            },
            scheduler: Scheduler::Plateau(PlateauConfig::QAT),
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("need epochs >= 1 and batch size >= 2".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {}", self.optimizer.lr)));
        }
        Ok(())
    }

    /// Peak learning rate the scheduler may emit.
    fn max_lr(&self) -> f64 {
        match self.scheduler {
            Scheduler::OneCycle(oc) => oc.max_lr,
            _ => self.optimizer.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Best-validation-loss state, or the final state without early stopping.
    pub model: ModelState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub fn write_history<W: Write>(mut out: W, history: &[EpochRecord]) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            epoch,
            reason: format!("non-finite value in {op}"),
        },
        Error::Contract(msg) if msg.contains("non-finite") => Error::Divergence { epoch, reason: msg },
        other => other,
    }
}

/// Mini-batch AdamW training with per-epoch validation.
pub fn train(model: ModelState, train: &JetBatch, val: &JetBatch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::contract("training needs >= 2 train jets and a validation set"));
    }
    let mut model = model;
    let mut order: Vec<usize> = (0..train.len()).collect();
    // A trailing batch of one jet has no batch variance; fold it away.
    let batches_per_epoch = {
        let full = train.len() / cfg.batch_size;
        let rest = train.len() % cfg.batch_size;
        full + usize::from(rest >= 2)
    };
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut shuffle_rng = substream(cfg.seed, "train.shuffle");
    let mut dropout_rng = substream(cfg.seed, "train.dropout");
    let mut opt = AdamW::new(cfg.optimizer, model.params());
    let mut plateau = match cfg.scheduler {
        Scheduler::Plateau(p) => Some(Plateau::new(p, cfg.optimizer.lr)),
        _ => None,
    };
    let max_lr = cfg.max_lr();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut bad_epochs = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut lr = cfg.optimizer.lr;
        for b in 0..batches_per_epoch {
            let lo = b * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(train.len());
            let batch = train.select(&order[lo..hi])?;
            lr = match cfg.scheduler {
                Scheduler::OneCycle(oc) => oc.lr(step, total_steps)?,
                Scheduler::Cosine { min_lr } => cosine_lr(epoch, cfg.epochs, cfg.optimizer.lr, min_lr),
                Scheduler::Plateau(_) => plateau.as_ref().map_or(cfg.optimizer.lr, |p| p.lr),
            };
            debug_assert!(lr > 0.0 && lr <= max_lr);
            opt.set_lr(lr);

            let mut g = Graph::new();
            let fwd = model
                .forward_graph(&mut g, &batch.features, Some(&mut dropout_rng), true)
                .map_err(|e| diverged(epoch, e))?;
            let loss = ModelState::loss(&mut g, fwd.log_probs, &batch.labels).map_err(|e| diverged(epoch, e))?;
            let loss_value = g.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("loss {loss_value}"),
                });
            }
            let grads = g.backward(loss).map_err(|e| diverged(epoch, e))?;
            let grad_refs: Vec<Option<&[f64]>> = fwd.params.iter().map(|&v| grads.raw(v)).collect();
            opt.step(&mut model.params_mut(), &grad_refs)
                .map_err(|e| diverged(epoch, e))?;
            model.apply_batch_stats(&fwd.batch_stats)?;

            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }

        let report = evaluate(&model, val).map_err(|e| diverged(epoch, e))?;
        if let Some(p) = plateau.as_mut() {
            p.observe(report.loss);
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: report.loss,
            val_accuracy: report.accuracy,
            lr,
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4} lr {:.2e}",
            rec.train_loss,
            rec.val_loss,
            rec.val_accuracy,
            rec.lr
        );
        history.push(rec);

        if let Some(patience) = cfg.early_stop_patience {
            let improved = best.as_ref().is_none_or(|(b, _, _)| report.loss < b - IMPROVEMENT);
            if improved {
                best = Some((report.loss, epoch, model.clone()));
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= patience {
                    stopped_early = epoch + 1 < cfg.epochs;
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, history.len() - 1),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}
