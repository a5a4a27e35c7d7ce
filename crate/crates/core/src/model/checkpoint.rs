//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic   b"JETFORGE"
//! u32     version (1)
//! u32     header length, then that many bytes of JSON {config, architecture}
//! u32     tensor count, then per tensor:
//!   u16   name length, name bytes (UTF-8)
//!   u8    dtype: 0 = f64, 1 = f32, 2 = packed sign
//!   u8    rank, then rank x u32 dims
//!   payload:
//!     f64 / f32: numel values, row-major
//!     packed sign: f32 beta, then ceil(numel / 8) bytes of signs,
//!                  row-major, LSB-first within each byte, 1 = +1
//! ```
//!
//! Packed-sign tensors load back as `beta * sign`, which re-quantizes to the
//! same signs and scale.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Architecture, ModelConfig};
use super::state::{Block, Linear, ModelState};
use crate::error::{Error, Result};
use crate::quantization::{pack_signs, unpack_signs, weight_quant};
use crate::tensor::{BatchNormState, Tensor};

pub const MAGIC: &[u8; 8] = b"JETFORGE";
pub const VERSION: u32 = 1;

/// How tensors are encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Float64,
    Float32,
    /// Quantized linear weights as sign bits plus one scale; everything else
    /// as f32.
    PackedSign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F64 = 0,
    F32 = 1,
    Packed = 2,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    architecture: Architecture,
}

/// Every stored tensor with its dtype under `format`, in file order.
fn layout(model: &ModelState, format: Format) -> Vec<(String, &Tensor, Dtype)> {
    let packed: Vec<String> = model
        .named_linears()
        .into_iter()
        .filter(|(_, l)| l.quantized)
        .map(|(n, _)| format!("{n}.weight"))
        .collect();
    model
        .named_params()
        .into_iter()
        .chain(model.named_buffers())
        .map(|(name, t)| {
            let dtype = match format {
                Format::Float64 => Dtype::F64,
                Format::Float32 => Dtype::F32,
                Format::PackedSign if packed.contains(&name) => Dtype::Packed,
                Format::PackedSign => Dtype::F32,
            };
            (name, t, dtype)
        })
        .collect()
}

fn payload_len(numel: usize, dtype: Dtype) -> usize {
    match dtype {
        Dtype::F64 => 8 * numel,
        Dtype::F32 => 4 * numel,
        Dtype::Packed => 4 + numel.div_ceil(8),
    }
}

/// Bytes of tensor payload under `format`, excluding names and headers.
pub fn payload_bytes(model: &ModelState, format: Format) -> usize {
    layout(model, format)
        .iter()
        .map(|(_, t, d)| payload_len(t.numel(), *d))
        .sum()
}

pub fn write_checkpoint<W: Write>(mut out: W, model: &ModelState, format: Format) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        architecture: model.architecture(),
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let tensors = layout(model, format);
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t, dtype) in tensors {
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[dtype as u8, t.rank() as u8])?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        match dtype {
            Dtype::F64 => t.data().iter().try_for_each(|v| out.write_all(&v.to_le_bytes()))?,
            Dtype::F32 => t
                .data()
                .iter()
                .try_for_each(|&v| out.write_all(&(v as f32).to_le_bytes()))?,
            Dtype::Packed => {
                let q = weight_quant(t);
                out.write_all(&(q.beta as f32).to_le_bytes())?;
                out.write_all(&pack_signs(&q.signs))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn checkpoint_bytes(model: &ModelState, format: Format) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, format)?;
    Ok(buf)
}

pub fn save_checkpoint(path: &Path, model: &ModelState, format: Format) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(file), model, format)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelState> {
    let mut c = Cursor { inner: input };
    if &c.array::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let header: Header = serde_json::from_slice(&c.bytes(len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;

    let count = c.u32()?;
    let mut tensors = HashMap::new();
    for _ in 0..count {
        let n = c.u16()? as usize;
        let name = String::from_utf8(c.bytes(n)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = c.u8()?;
        let rank = c.u8()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = match dtype {
            0 => c
                .bytes(8 * numel)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
            1 => c
                .bytes(4 * numel)?
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect(),
            2 => {
                let beta = f64::from(f32::from_le_bytes(c.array()?));
                let signs = unpack_signs(&c.bytes(numel.div_ceil(8))?, numel)?;
                signs.into_iter().map(|s| if s { beta } else { -beta }).collect()
            }
            other => return Err(Error::Checkpoint(format!("{name}: unknown dtype {other}"))),
        };
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let mut trailing = [0u8; 1];
    if c.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    assemble(header, tensors)
}

fn assemble(header: Header, mut tensors: HashMap<String, Tensor>) -> Result<ModelState> {
    let Header { config, architecture: arch } = header;
    let mut take = |name: String, shape: &[usize]| -> Result<Tensor> {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "{name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let d = arch.embed_dim;
    let mut linear = |prefix: &str, fan_in: usize, fan_out: usize, quantized: bool| -> Result<Linear> {
        Ok(Linear {
            weight: take(format!("{prefix}.weight"), &[fan_out, fan_in])?,
            bias: take(format!("{prefix}.bias"), &[fan_out])?,
            quantized,
        })
    };
    let embedding = linear("embedding", arch.num_features, d, false)?;
    let mut blocks = Vec::with_capacity(arch.blocks.len());
    for (i, dims) in arch.blocks.iter().enumerate() {
        let a = dims.head_dim * arch.num_heads;
        let q = config.quantized;
        let p = |n: &str| format!("blocks.{i}.{n}");
        blocks.push((
            linear(&p("query"), d, a, q)?,
            linear(&p("key"), d, a, q)?,
            linear(&p("value"), d, a, q)?,
            linear(&p("out"), a, d, q)?,
            linear(&p("ffn1"), d, dims.ffn_hidden, q)?,
            linear(&p("ffn2"), dims.ffn_hidden, d, q)?,
        ));
    }
    let head = linear("head", d, arch.num_classes, false)?;
    let mut norm = |prefix: String| -> Result<BatchNormState> {
        Ok(BatchNormState {
            gamma: take(format!("{prefix}.gamma"), &[d])?,
            beta: take(format!("{prefix}.beta"), &[d])?,
            running_mean: take(format!("{prefix}.running_mean"), &[d])?,
            running_var: take(format!("{prefix}.running_var"), &[d])?,
            eps: config.bn_eps,
            momentum: config.bn_momentum,
        })
    };
    let blocks = blocks
        .into_iter()
        .enumerate()
        .map(|(i, (query, key, value, out, ffn1, ffn2))| {
            Ok(Block {
                attn_norm: norm(format!("blocks.{i}.attn_norm"))?,
                query,
                key,
                value,
                out,
                ffn_norm: norm(format!("blocks.{i}.ffn_norm"))?,
                ffn1,
                ffn2,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_norm = norm("final_norm".into())?;
    let class_token = take("class_token".into(), &[1, d])?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(ModelState {
        config,
        embedding,
        class_token,
        blocks,
        final_norm,
        head,
    })
}
