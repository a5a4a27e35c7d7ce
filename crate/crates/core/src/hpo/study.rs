use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::front::pareto_front;
use super::hv::hv_curve;
use super::sampler::{make_sampler, NsgaConfig, Sampler, SamplerKind};
use super::space::{ConfigPoint, SearchSpace};
use super::store::TrialStore;
use super::trial::{Objectives, Trial};
use crate::cost::config_flops;
use crate::data::JetBatch;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use crate::training::{evaluate, train, TrainConfig};

/// Scores one configuration. `seed` is unique per trial.
pub trait Evaluator: Sync {
    fn evaluate(&self, point: &ConfigPoint, seed: u64) -> Result<Objectives>;
}

/// Deterministic stand-in: accuracy `(60 + blocks) / 100`, exact FLOPs.
#[derive(Clone, Debug)]
pub struct SyntheticObjective {
    pub base: ModelConfig,
}

impl Default for SyntheticObjective {
    fn default() -> Self {
        SyntheticObjective {
            base: ModelConfig::tiny(),
        }
    }
}

impl Evaluator for SyntheticObjective {
    fn evaluate(&self, point: &ConfigPoint, _seed: u64) -> Result<Objectives> {
        Ok(Objectives {
            accuracy: (60 + point.num_transformers) as f64 / 100.0,
            flops: config_flops(&point.model_config(&self.base)),
        })
    }
}

/// Trains each configuration and reports validation accuracy.
pub struct TrainingEvaluator<'a> {
    pub base: ModelConfig,
    pub train: &'a JetBatch,
    pub val: &'a JetBatch,
    /// Seed is replaced per trial.
    pub train_config: TrainConfig,
}

impl Evaluator for TrainingEvaluator<'_> {
    fn evaluate(&self, point: &ConfigPoint, seed: u64) -> Result<Objectives> {
        let cfg = point.model_config(&self.base);
        let model = ModelState::build(&cfg, seed)?;
        let tc = TrainConfig {
            seed,
            ..self.train_config.clone()
        };
        let out = train(model, self.train, self.val, &tc)?;
        Ok(Objectives {
            accuracy: evaluate(&out.model, self.val)?.accuracy,
            flops: config_flops(&cfg),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub sampler: SamplerKind,
    pub n_trials: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default)]
    pub nsga: NsgaConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sampler: SamplerKind::Nsga2,
            n_trials: 80,
            seed: 0,
            workers: 1,
            nsga: NsgaConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    /// All trials by id.
    pub trials: Vec<Trial>,
    pub front: Vec<Trial>,
    /// `(n, HV of the first n trials)` for every n.
    pub hv_curve: Vec<(usize, f64)>,
}

impl StudyReport {
    pub fn from_trials(mut trials: Vec<Trial>) -> Result<Self> {
        trials.sort_by_key(|t| t.id);
        Ok(StudyReport {
            front: pareto_front(&trials),
            hv_curve: hv_curve(&trials)?,
            trials,
        })
    }

    pub fn hv_at(&self, n: usize) -> Option<f64> {
        self.hv_curve.get(n.checked_sub(1)?).map(|&(_, hv)| hv)
    }
}

fn trial_seed(seed: u64, id: u64) -> u64 {
    seed.wrapping_add(id)
}

/// Rebuilds sampler state from stored trials by replaying ask/tell in id
/// order. Exact for single-worker studies.
fn replay(sampler: &mut dyn Sampler, stored: &mut [Trial]) -> Result<()> {
    stored.sort_by_key(|t| t.id);
    for t in stored.iter() {
        let (id, point) = sampler.ask();
        if id != t.id {
            return Err(Error::contract(format!("store has trial {} where {} was expected", t.id, id)));
        }
        if point != t.point {
            log::warn!("trial {id}: stored point differs from the replayed sampler");
        }
        sampler.tell(t)?;
    }
    Ok(())
}

struct Shared {
    sampler: Box<dyn Sampler>,
    asked: usize,
}

/// Runs trials until the store holds `cfg.n_trials`, resuming from
/// whatever it already contains. Evaluation errors become failed trials.
pub fn run_study(
    space: &SearchSpace,
    cfg: &StudyConfig,
    evaluator: &dyn Evaluator,
    store: &TrialStore,
) -> Result<StudyReport> {
    space.validate()?;
    cfg.nsga.validate()?;
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let mut stored = store.load()?;
    let mut sampler = make_sampler(cfg.sampler, space.clone(), cfg.nsga, cfg.seed);
    replay(sampler.as_mut(), &mut stored)?;
    let shared = Mutex::new(Shared {
        sampler,
        asked: stored.len(),
    });
    let done = Mutex::new(stored);

    let worker = || -> Result<()> {
        loop {
            let (id, point) = {
                let mut s = shared.lock().expect("sampler mutex");
                if s.asked >= cfg.n_trials {
                    return Ok(());
                }
                s.asked += 1;
                s.sampler.ask()
            };
            let start = Instant::now();
            let result = evaluator.evaluate(&point, trial_seed(cfg.seed, id));
            let wall = start.elapsed().as_secs_f64();
            let trial = match result {
                Ok(obj) => Trial::complete(id, point, obj, wall),
                Err(e) => {
                    log::warn!("trial {id} failed: {e}");
                    Trial::failed(id, point, e.to_string(), wall)
                }
            };
            store.append(&trial)?;
            shared.lock().expect("sampler mutex").sampler.tell(&trial)?;
            if let Some(o) = trial.objectives {
                log::info!("trial {id}: {:?} acc {:.4} flops {}", point, o.accuracy, o.flops);
            }
            done.lock().expect("trial list").push(trial);
        }
    };
    if cfg.workers == 1 {
        worker()?;
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.workers).map(|_| s.spawn(worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("hpo worker panicked"))
                .collect::<Result<Vec<()>>>()
        })?;
    }
    StudyReport::from_trials(done.into_inner().expect("trial list"))
}
