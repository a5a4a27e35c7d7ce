use serde::{Deserialize, Serialize};

use super::front::pareto_front;
use super::trial::{Objectives, Trial};
use crate::error::{Error, Result};

/// Trial counts at which the hypervolume is usually reported.
pub const HV_CHECKPOINTS: [usize; 4] = [40, 60, 80, 100];

/// 2-D hypervolume of minimization points in the unit square, dominated
/// region bounded by `reference`.
pub fn hypervolume(points: &[(f64, f64)], reference: (f64, f64)) -> Result<f64> {
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if let Some(p) = points.iter().find(|p| !(unit(p.0) && unit(p.1))) {
        return Err(Error::contract(format!("hypervolume point {p:?} outside [0, 1]^2")));
    }
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.0 < reference.0 && p.1 < reference.1)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hv = 0.0;
    let mut floor = reference.1;
    for (x, y) in pts {
        if y < floor {
            hv += (reference.0 - x) * (floor - y);
            floor = y;
        }
    }
    Ok(hv)
}

/// Min-max scaling that maps objectives into minimization form on [0, 1]:
/// accuracy is negated, FLOPs kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub accuracy: (f64, f64),
    pub flops: (f64, f64),
}

impl Normalization {
    /// Ranges over every completed trial. None when there is none.
    pub fn from_trials(trials: &[Trial]) -> Option<Self> {
        let objs: Vec<Objectives> = trials.iter().filter_map(|t| t.objectives).collect();
        if objs.is_empty() {
            return None;
        }
        let range = |vals: Vec<f64>| {
            vals.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        };
        Some(Normalization {
            accuracy: range(objs.iter().map(|o| o.accuracy).collect()),
            flops: range(objs.iter().map(|o| o.flops as f64).collect()),
        })
    }

    pub fn apply(&self, o: &Objectives) -> (f64, f64) {
        let scale = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        (
            scale(-o.accuracy, (-self.accuracy.1, -self.accuracy.0)),
            scale(o.flops as f64, self.flops),
        )
    }
}

/// Hypervolume of the feasible front among the first `n` trials.
pub fn hv_at(trials: &[Trial], n: usize, norm: &Normalization) -> Result<f64> {
    if n > trials.len() {
        return Err(Error::contract(format!("hv_at({n}) with only {} trials", trials.len())));
    }
    let pts: Vec<(f64, f64)> = pareto_front(&trials[..n])
        .iter()
        .filter_map(|t| t.objectives)
        .map(|o| norm.apply(&o))
        .collect();
    hypervolume(&pts, (1.0, 1.0))
}

/// `(n, hv_at(n))` for n = 1..=len, normalized over all trials.
pub fn hv_curve(trials: &[Trial]) -> Result<Vec<(usize, f64)>> {
    let Some(norm) = Normalization::from_trials(trials) else {
        return Ok((1..=trials.len()).map(|n| (n, 0.0)).collect());
    };
    (1..=trials.len()).map(|n| Ok((n, hv_at(trials, n, &norm)?))).collect()
}
