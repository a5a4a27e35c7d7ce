use std::path::Path;

use jetforge::hpo::{NsgaConfig, SamplerKind, SearchSpace};
use jetforge::model::ModelConfig;
use jetforge::pruning::PruneConfig;
use jetforge::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Jets written by `datagen`.
    pub num_jets: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            num_jets: 10_000,
            train_fraction: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub prune: PruneConfig,
    pub qat: TrainConfig,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            prune: PruneConfig::default(),
            qat: TrainConfig::qat(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub space: SearchSpace,
    pub sampler: SamplerKind,
    pub trials: usize,
    pub nsga: NsgaConfig,
    pub trial_training: TrainConfig,
}

impl Default for HpoConfig {
    fn default() -> Self {
        HpoConfig {
            space: SearchSpace::default(),
            sampler: SamplerKind::Nsga2,
            trials: 80,
            nsga: NsgaConfig::default(),
            trial_training: TrainConfig::hpo_trial(0),
        }
    }
}

/// Everything a run needs. Every section may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub compression: CompressionConfig,
    pub hpo: HpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            model: ModelConfig::tiny(),
            training: TrainConfig::default(),
            data: DataConfig::default(),
            compression: CompressionConfig::default(),
            hpo: HpoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Applies flag overrides and pushes the run seed into every module.
    pub fn resolve(mut self, seed: Option<u64>, workers: Option<usize>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        self.training.seed = self.seed;
        self.compression.prune.fine_tune.seed = self.seed;
        self.compression.qat.seed = self.seed;
        self.hpo.trial_training.seed = self.seed;
        if self.workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::Usage("data.train_fraction must be in (0, 1)".into()));
        }
        self.model.validate()?;
        self.training.validate()?;
        self.compression.prune.validate()?;
        self.compression.qat.validate()?;
        self.hpo.space.validate()?;
        self.hpo.nsga.validate()?;
        Ok(self)
    }
}
