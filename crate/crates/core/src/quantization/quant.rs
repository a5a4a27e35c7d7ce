use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// 1-bit quantization of a weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightQuant {
    /// Mean of the weights.
    pub alpha: f64,
    /// Mean absolute weight, taken before centering.
    pub beta: f64,
    /// `true` for +1. `sign(0)` maps to +1.
    pub signs: Vec<bool>,
    /// `beta * sign(W - alpha)`, same shape as the input.
    pub dequant: Tensor,
}

/// Mean with one refinement pass, clamped to the data range. Exact for
/// constant input, where a plain sum can land one ulp off and flip
/// `sign(W - alpha)`.
fn mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let (lo, hi) = values.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return lo;
    }
    let m = values.clone().sum::<f64>() / n;
    let m = m + values.map(|v| v - m).sum::<f64>() / n;
    m.clamp(lo, hi)
}

/// `alpha = mean(W)`, `beta = mean(|W|)`, `W~ = beta * sign(W - alpha)`.
pub fn weight_quant(w: &Tensor) -> WeightQuant {
    let alpha = mean(w.data().iter().copied());
    let beta = mean(w.data().iter().map(|v| v.abs()));
    let signs: Vec<bool> = w.data().iter().map(|&v| v - alpha >= 0.0).collect();
    let dequant = Tensor::new(
        w.shape().to_vec(),
        signs.iter().map(|&s| if s { beta } else { -beta }).collect(),
    )
    .expect("same shape");
    WeightQuant {
        alpha,
        beta,
        signs,
        dequant,
    }
}

/// Absmax 8-bit quantization of an activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ActQuant {
    /// `127 / max|X|`; `None` for an all-zero input.
    pub gamma: Option<f64>,
    /// Integers in `[-127, 127]`.
    pub quantized: Vec<i8>,
    pub dequant: Tensor,
}

pub fn absmax_quant(x: &Tensor) -> ActQuant {
    let max = x.max_abs();
    if max == 0.0 {
        return ActQuant {
            gamma: None,
            quantized: vec![0; x.numel()],
            dequant: Tensor::zeros(x.shape()),
        };
    }
    let gamma = 127.0 / max;
    let quantized: Vec<i8> = x
        .data()
        .iter()
        .map(|&v| (gamma * v).round().clamp(-127.0, 127.0) as i8)
        .collect();
    // q / gamma == (max / 127) * q, without the extra rounding of 1/gamma.
    let dequant = Tensor::new(
        x.shape().to_vec(),
        quantized.iter().map(|&q| f64::from(q) / gamma).collect(),
    )
    .expect("same shape");
    ActQuant {
        gamma: Some(gamma),
        quantized,
        dequant,
    }
}

/// BitLinear `y = deq(x) deq(W)^T + b` with both quantizers bypassed by the
/// straight-through estimator on the backward pass. `latent` is the value
/// bound to `w`.
pub fn bitlinear(g: &mut Graph, x: Var, w: Var, b: Var, latent: &Tensor) -> Result<Var> {
    if g.shape(w) != latent.shape() {
        return Err(Error::dim("bitlinear: latent weight does not match its var"));
    }
    let wq = g.ste(weight_quant(latent).dequant, w)?;
    let xq = absmax_quant(g.value(x)).dequant;
    let xq = g.ste(xq, x)?;
    let wt = g.transpose(wq)?;
    let y = g.matmul(xq, wt)?;
    g.add_bias(y, b)
}

/// Packs signs LSB-first within each byte, in element order.
pub fn pack_signs(signs: &[bool]) -> Vec<u8> {
    signs
        .chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |byte, (i, &s)| byte | (u8::from(s) << i))
        })
        .collect()
}

pub fn unpack_signs(bytes: &[u8], n: usize) -> Result<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::Checkpoint(format!(
            "{} packed bytes cannot hold exactly {n} signs",
            bytes.len()
        )));
    }
    Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}
