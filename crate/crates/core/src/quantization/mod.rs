//! 1-bit weight / 8-bit activation quantization and quantization-aware
//! training.

mod qat;
mod quant;

pub use qat::{layer_census, model_size, quantize_model, quantized_config, size_report, SizeReport};
pub use quant::{absmax_quant, bitlinear, pack_signs, unpack_signs, weight_quant, ActQuant, WeightQuant};
