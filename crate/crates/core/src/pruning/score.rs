use std::collections::HashMap;

use super::graph::DependencyGraph;
use crate::data::JetBatch;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::substream;
use crate::tensor::Graph;

/// Mini-batches whose gradients are accumulated before scoring.
pub const SCORE_BATCHES: usize = 8;

/// Loss gradients summed over `batches`, by parameter name. Forward runs in
/// training mode (batch statistics) without touching the running stats.
pub fn accumulate_grads(
    model: &ModelState,
    batches: &[JetBatch],
    loss_scale: f64,
) -> Result<HashMap<String, Vec<f64>>> {
    if batches.is_empty() {
        return Err(Error::contract("taylor scores need at least one batch"));
    }
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut acc: HashMap<String, Vec<f64>> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, vec![0.0; t.numel()]))
        .collect();
    let mut rng = substream(0, "prune.score");
    for b in batches {
        let mut g = Graph::new();
        let fwd = model.forward_graph(&mut g, &b.features, Some(&mut rng), true)?;
        let loss = ModelState::loss(&mut g, fwd.log_probs, &b.labels)?;
        let loss = g.scale(loss, loss_scale)?;
        let grads = g.backward(loss)?;
        for (name, v) in names.iter().zip(&fwd.params) {
            if let Some(gr) = grads.raw(*v) {
                if gr.iter().any(|x| !x.is_finite()) {
                    return Err(Error::contract(format!("non-finite gradient for {name}")));
                }
                for (a, x) in acc.get_mut(name).expect("named param").iter_mut().zip(gr) {
                    *a += x;
                }
            }
        }
    }
    Ok(acc)
}

/// Group score `sum |w * g|` over the group's parameter entries; buffer
/// entries carry no gradient and contribute nothing.
pub fn group_scores(model: &ModelState, graph: &DependencyGraph, grads: &HashMap<String, Vec<f64>>) -> Vec<f64> {
    let params: HashMap<String, _> = model.named_params().into_iter().collect();
    graph
        .groups
        .iter()
        .map(|group| {
            group
                .entries
                .iter()
                .filter_map(|e| Some((e, params.get(&e.tensor)?, grads.get(&e.tensor)?)))
                .map(|(e, w, g)| {
                    let shape = w.shape();
                    let inner: usize = shape[e.axis + 1..].iter().product();
                    let outer: usize = shape[..e.axis].iter().product();
                    let mut s = 0.0;
                    for o in 0..outer {
                        let base = (o * shape[e.axis] + e.index) * inner;
                        for k in base..base + inner {
                            s += (w.data()[k] * g[k]).abs();
                        }
                    }
                    s
                })
                .sum()
        })
        .collect()
}

/// First-order Taylor importance per group.
pub fn taylor_scores(model: &ModelState, graph: &DependencyGraph, batches: &[JetBatch]) -> Result<Vec<f64>> {
    Ok(group_scores(model, graph, &accumulate_grads(model, batches, 1.0)?))
}
