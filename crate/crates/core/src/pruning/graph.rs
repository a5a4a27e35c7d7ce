use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, ModelState};
use crate::tensor::Tensor;

/// Smallest per-head width pruning may leave.
pub const MIN_HEAD_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupKind {
    /// One channel of the residual stream, shared by every block.
    Residual { channel: usize },
    /// Dimension `dim` of every head of one block's Q/K/V.
    HeadDim { block: usize, dim: usize },
    /// One FFN hidden unit.
    Ffn { block: usize, unit: usize },
}

/// One slice `index` along `axis` of a named tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub tensor: String,
    pub axis: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneGroup {
    pub kind: GroupKind,
    pub entries: Vec<Entry>,
}

/// Channel groups that must be removed together.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyGraph {
    pub arch: Architecture,
    pub groups: Vec<PruneGroup>,
}

fn entry(tensor: String, axis: usize, index: usize) -> Entry {
    Entry { tensor, axis, index }
}

pub fn build_dep_graph(model: &ModelState) -> DependencyGraph {
    let arch = model.architecture();
    let heads = arch.num_heads;
    let mut groups = Vec::new();

    for c in 0..arch.embed_dim {
        let mut e = vec![
            entry("embedding.weight".into(), 0, c),
            entry("embedding.bias".into(), 0, c),
            entry("class_token".into(), 1, c),
        ];
        for i in 0..arch.blocks.len() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            for norm in ["attn_norm", "ffn_norm"] {
                for t in ["gamma", "beta", "running_mean", "running_var"] {
                    e.push(entry(p(&format!("{norm}.{t}")), 0, c));
                }
            }
            for proj in ["query", "key", "value", "ffn1"] {
                e.push(entry(p(&format!("{proj}.weight")), 1, c));
            }
            for proj in ["out", "ffn2"] {
                e.push(entry(p(&format!("{proj}.weight")), 0, c));
                e.push(entry(p(&format!("{proj}.bias")), 0, c));
            }
        }
        for t in ["gamma", "beta", "running_mean", "running_var"] {
            e.push(entry(format!("final_norm.{t}"), 0, c));
        }
        e.push(entry("head.weight".into(), 1, c));
        groups.push(PruneGroup {
            kind: GroupKind::Residual { channel: c },
            entries: e,
        });
    }

    for (i, dims) in arch.blocks.iter().enumerate() {
        let a = dims.head_dim;
        let p = |n: &str| format!("blocks.{i}.{n}");
        for j in 0..a {
            let mut e = Vec::new();
            for h in 0..heads {
                let k = h * a + j;
                for proj in ["query", "key", "value"] {
                    e.push(entry(p(&format!("{proj}.weight")), 0, k));
                    e.push(entry(p(&format!("{proj}.bias")), 0, k));
                }
                e.push(entry(p("out.weight"), 1, k));
            }
            groups.push(PruneGroup {
                kind: GroupKind::HeadDim { block: i, dim: j },
                entries: e,
            });
        }
        for u in 0..dims.ffn_hidden {
            groups.push(PruneGroup {
                kind: GroupKind::Ffn { block: i, unit: u },
                entries: vec![
                    entry(p("ffn1.weight"), 0, u),
                    entry(p("ffn1.bias"), 0, u),
                    entry(p("ffn2.weight"), 1, u),
                ],
            });
        }
    }
    DependencyGraph { arch, groups }
}

/// Architecture after removing one group, or `None` if that would breach a
/// floor (an empty layer, or a head narrower than [`MIN_HEAD_DIM`]).
pub fn shrink(arch: &Architecture, kind: GroupKind) -> Option<Architecture> {
    let mut next = arch.clone();
    match kind {
        GroupKind::Residual { .. } => {
            if arch.embed_dim <= 1 {
                return None;
            }
            next.embed_dim -= 1;
        }
        GroupKind::HeadDim { block, .. } => {
            if arch.blocks[block].head_dim <= MIN_HEAD_DIM {
                return None;
            }
            next.blocks[block].head_dim -= 1;
        }
        GroupKind::Ffn { block, .. } => {
            if arch.blocks[block].ffn_hidden <= 1 {
                return None;
            }
            next.blocks[block].ffn_hidden -= 1;
        }
    }
    Some(next)
}

fn keep_along(t: &Tensor, axis: usize, drop: &BTreeSet<usize>) -> Result<Tensor> {
    let shape = t.shape();
    if drop.iter().any(|&i| i >= shape[axis]) {
        return Err(Error::Index(format!("prune index out of range for axis {axis} of {shape:?}")));
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] -= drop.len();
    if new_shape[axis] == 0 {
        return Err(Error::contract("pruning would empty a layer"));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(new_shape.iter().product());
    for o in 0..outer {
        for k in (0..shape[axis]).filter(|k| !drop.contains(k)) {
            let start = (o * shape[axis] + k) * inner;
            data.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    Tensor::new(new_shape, data)
}

/// Removes the listed groups. Every entry of every group is sliced out of its
/// tensor, so all shapes stay consistent.
pub fn apply_removal(model: &ModelState, graph: &DependencyGraph, remove: &[usize]) -> Result<ModelState> {
    let mut cuts: BTreeMap<(String, usize), BTreeSet<usize>> = BTreeMap::new();
    for &g in remove {
        let group = graph
            .groups
            .get(g)
            .ok_or_else(|| Error::Index(format!("group {g} of {}", graph.groups.len())))?;
        for e in &group.entries {
            cuts.entry((e.tensor.clone(), e.axis)).or_default().insert(e.index);
        }
    }
    let mut out = model.clone();
    for (name, t) in out.named_tensors_mut() {
        for ((_, axis), drop) in cuts.range((name.clone(), 0)..=(name.clone(), usize::MAX)) {
            *t = keep_along(t, *axis, drop)?;
        }
    }
    Ok(out)
}
