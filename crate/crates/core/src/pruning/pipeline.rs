use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{apply_removal, build_dep_graph, shrink, DependencyGraph};
use super::score::{taylor_scores, SCORE_BATCHES};
use crate::cost::{count_flops, count_params};
use crate::data::JetBatch;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::substream;
use crate::training::{evaluate, train, AdamWConfig, Scheduler, TrainConfig};

/// How much one [`prune_step`] removes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quota {
    /// Remove groups in score order while FLOPs stay at or above `target`.
    Flops { target: u64 },
    /// Remove exactly this many groups.
    Groups { count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub model: ModelState,
    /// Indices into the dependency graph's groups, in removal order.
    pub removed: Vec<usize>,
}

fn flops_of(arch: &crate::model::Architecture) -> u64 {
    count_flops(arch, arch.num_particles + 1)
}

/// Removes the lowest-scoring groups, ties broken by lower group index.
/// Groups at a floor (last channel of a layer, minimum head width) are not
/// eligible; running out of eligible groups before the quota is met is an
/// error.
pub fn prune_step(model: &ModelState, graph: &DependencyGraph, scores: &[f64], quota: Quota) -> Result<StepOutcome> {
    if scores.len() != graph.groups.len() {
        return Err(Error::contract(format!(
            "{} scores for {} groups",
            scores.len(),
            graph.groups.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::contract(format!("group {i} has invalid score {}", scores[i])));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut arch = graph.arch.clone();
    let mut removed = Vec::new();
    let done = |arch: &crate::model::Architecture, removed: usize| match quota {
        Quota::Flops { target } => flops_of(arch) <= target,
        Quota::Groups { count } => removed >= count,
    };
    for g in order {
        if done(&arch, removed.len()) {
            break;
        }
        let Some(next) = shrink(&arch, graph.groups[g].kind) else {
            continue;
        };
        if let Quota::Flops { target } = quota {
            if flops_of(&next) < target {
                break;
            }
        }
        arch = next;
        removed.push(g);
    }
    let met = match quota {
        // stopping short of overshooting the target is a met quota
        Quota::Flops { .. } => true,
        Quota::Groups { count } => removed.len() == count,
    };
    if !met {
        return Err(Error::contract(format!(
            "pruning would empty a layer: only {} of the requested groups are removable",
            removed.len()
        )));
    }
    let model = apply_removal(model, graph, &removed)?;
    debug_assert_eq!(model.architecture(), arch);
    Ok(StepOutcome { model, removed })
}

/// Per-step quota rule of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaKind {
    /// FLOPs after step `k` of `n` at most `F0 * (1 - ratio)^(k/n)`.
    Flops,
    /// Each step removes `1 - (1 - ratio)^(1/n)` of the current groups.
    Groups,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub ratio: f64,
    pub steps: usize,
    pub quota: QuotaKind,
    pub score_batches: usize,
    pub score_batch_size: usize,
    pub fine_tune: TrainConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            ratio: 0.5,
            steps: 5,
            quota: QuotaKind::Flops,
            score_batches: SCORE_BATCHES,
            score_batch_size: 256,
            fine_tune: TrainConfig {
                epochs: 5,
                optimizer: AdamWConfig {
                    lr: 5e-3,
                    ..Default::default()
                },
                scheduler: Scheduler::Cosine { min_lr: 1e-5 },
                early_stop_patience: None,
                ..Default::default()
            },
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) || self.steps == 0 || self.score_batches == 0 {
            return Err(Error::Config(format!(
                "prune ratio {} must be in (0, 1) with at least one step and score batch",
                self.ratio
            )));
        }
        self.fine_tune.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub flops: u64,
    pub params: u64,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneStepRecord {
    pub step: usize,
    pub removed_groups: usize,
    pub flops: u64,
    pub params: u64,
    pub val_accuracy: f64,
}

/// Before/after summary with percentage reductions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub before: ModelMetrics,
    pub after: ModelMetrics,
    pub flops_reduction_pct: f64,
    pub params_reduction_pct: f64,
    /// `after.accuracy - before.accuracy`.
    pub accuracy_change: f64,
    pub steps: Vec<PruneStepRecord>,
}

impl PruneReport {
    /// Rows in the layout of a before/after/change table.
    pub fn table(&self) -> String {
        format!(
            "{:<10}{:>12}{:>12}{:>10}\n{:<10}{:>12}{:>12}{:>10.2}\n{:<10}{:>12}{:>12}{:>10.2}\n{:<10}{:>12.4}{:>12.4}{:>10.2}\n",
            "",
            "original",
            "pruned",
            "change %",
            "FLOPs",
            self.before.flops,
            self.after.flops,
            self.flops_reduction_pct,
            "Params",
            self.before.params,
            self.after.params,
            self.params_reduction_pct,
            "Accuracy",
            self.before.accuracy,
            self.after.accuracy,
            100.0 * self.accuracy_change,
        )
    }
}

pub fn metrics(model: &ModelState, val: &JetBatch) -> Result<ModelMetrics> {
    let arch = model.architecture();
    let rep = evaluate(model, val)?;
    Ok(ModelMetrics {
        flops: flops_of(&arch),
        params: count_params(&arch),
        accuracy: rep.accuracy,
        loss: rep.loss,
    })
}

fn score_batches(train_set: &JetBatch, cfg: &PruneConfig, step: usize) -> Result<Vec<JetBatch>> {
    let mut idx: Vec<usize> = (0..train_set.len()).collect();
    idx.shuffle(&mut substream(cfg.fine_tune.seed.wrapping_add(step as u64), "prune.batches"));
    idx.chunks(cfg.score_batch_size)
        .filter(|c| c.len() >= 2)
        .take(cfg.score_batches)
        .map(|c| train_set.select(c))
        .collect()
}

/// Target FLOPs after step `k` (1-based) of `steps`.
pub fn flop_target(initial: u64, ratio: f64, k: usize, steps: usize) -> u64 {
    (initial as f64 * (1.0 - ratio).powf(k as f64 / steps as f64)).ceil() as u64
}

/// Iterative score, prune and fine-tune.
pub fn prune_pipeline(
    model: ModelState,
    train_set: &JetBatch,
    val_set: &JetBatch,
    cfg: &PruneConfig,
) -> Result<(ModelState, PruneReport)> {
    cfg.validate()?;
    let before = metrics(&model, val_set)?;
    let mut model = model;
    let mut steps = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let graph = build_dep_graph(&model);
        let scores = taylor_scores(&model, &graph, &score_batches(train_set, cfg, k)?)?;
        let quota = match cfg.quota {
            QuotaKind::Flops => Quota::Flops {
                target: flop_target(before.flops, cfg.ratio, k, cfg.steps),
            },
            QuotaKind::Groups => {
                let frac = 1.0 - (1.0 - cfg.ratio).powf(1.0 / cfg.steps as f64);
                Quota::Groups {
                    count: (frac * graph.groups.len() as f64).round() as usize,
                }
            }
        };
        let out = prune_step(&model, &graph, &scores, quota)?;
        let ft = TrainConfig {
            seed: cfg.fine_tune.seed.wrapping_add(k as u64),
            ..cfg.fine_tune.clone()
        };
        model = train(out.model, train_set, val_set, &ft)?.model;
        let m = metrics(&model, val_set)?;
        log::info!(
            "prune step {k}: removed {} groups, flops {} params {} acc {:.4}",
            out.removed.len(),
            m.flops,
            m.params,
            m.accuracy
        );
        steps.push(PruneStepRecord {
            step: k,
            removed_groups: out.removed.len(),
            flops: m.flops,
            params: m.params,
            val_accuracy: m.accuracy,
        });
    }
    let after = metrics(&model, val_set)?;
    let pct = |a: u64, b: u64| 100.0 * (1.0 - b as f64 / a as f64);
    let report = PruneReport {
        flops_reduction_pct: pct(before.flops, after.flops),
        params_reduction_pct: pct(before.params, after.params),
        accuracy_change: after.accuracy - before.accuracy,
        before,
        after,
        steps,
    };
    Ok((model, report))
}
