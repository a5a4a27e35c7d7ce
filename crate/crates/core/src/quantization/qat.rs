use serde::{Deserialize, Serialize};

use crate::data::JetBatch;
use crate::error::Result;
use crate::model::{payload_bytes, Format, ModelConfig, ModelState};
use crate::training::{train, TrainConfig, TrainOutcome};

/// Same architecture with every attention and FFN projection as BitLinear.
/// The embedding and the classifier stay full precision.
pub fn quantized_config(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        quantized: true,
        ..config.clone()
    }
}

/// Names of the BitLinear layers and of the full-precision linears.
pub fn layer_census(model: &ModelState) -> (Vec<String>, Vec<String>) {
    let (q, fp): (Vec<_>, Vec<_>) = model.named_linears().into_iter().partition(|(_, l)| l.quantized);
    (
        q.into_iter().map(|(n, _)| n).collect(),
        fp.into_iter().map(|(n, _)| n).collect(),
    )
}

/// Builds a quantized JetFormer from scratch and trains it with `cfg`
/// (normally [`TrainConfig::qat`]).
pub fn quantize_model(
    config: &ModelConfig,
    seed: u64,
    train_set: &JetBatch,
    val_set: &JetBatch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = ModelState::build(&quantized_config(config), seed)?;
    train(model, train_set, val_set, cfg)
}

/// Tensor payload in bytes: 32 bits per full-precision scalar, 1 bit per
/// BitLinear weight plus a 32-bit scale under [`Format::PackedSign`].
/// Batchnorm running statistics are included.
pub fn model_size(model: &ModelState, format: Format) -> usize {
    payload_bytes(model, format)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub full_precision_bytes: usize,
    pub quantized_bytes: usize,
    /// Fractional size reduction.
    pub reduction: f64,
}

pub fn size_report(model: &ModelState) -> SizeReport {
    let full = model_size(model, Format::Float32);
    let packed = model_size(model, Format::PackedSign);
    SizeReport {
        full_precision_bytes: full,
        quantized_bytes: packed,
        reduction: 1.0 - packed as f64 / full as f64,
    }
}
