use serde::{Deserialize, Serialize};

use super::space::ConfigPoint;
use crate::error::{Error, Result};

/// Validation accuracy below this makes a trial infeasible.
pub const FEASIBLE_ACCURACY: f64 = 0.65;

/// Maximize `accuracy`, minimize `flops`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objectives {
    pub accuracy: f64,
    pub flops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trial {
    pub id: u64,
    pub point: ConfigPoint,
    /// Absent for failed trials.
    pub objectives: Option<Objectives>,
    pub feasible: bool,
    pub status: TrialStatus,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trial {
    pub fn complete(id: u64, point: ConfigPoint, objectives: Objectives, wall_time_s: f64) -> Self {
        Trial {
            id,
            point,
            objectives: Some(objectives),
            feasible: objectives.accuracy >= FEASIBLE_ACCURACY,
            status: TrialStatus::Complete,
            wall_time_s,
            error: None,
        }
    }

    pub fn failed(id: u64, point: ConfigPoint, error: String, wall_time_s: f64) -> Self {
        Trial {
            id,
            point,
            objectives: None,
            feasible: false,
            status: TrialStatus::Failed,
            wall_time_s,
            error: Some(error),
        }
    }

    /// Checks the feasibility flag and status against the objectives.
    pub fn validate(&self) -> Result<()> {
        let ok = match (self.status, self.objectives) {
            (TrialStatus::Complete, Some(o)) => {
                (0.0..=1.0).contains(&o.accuracy) && self.feasible == (o.accuracy >= FEASIBLE_ACCURACY)
            }
            (TrialStatus::Failed, None) => !self.feasible,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("trial {} is inconsistent", self.id)))
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == TrialStatus::Complete && self.feasible
    }

    /// Distance below the accuracy threshold; failed trials are worst.
    pub fn violation(&self) -> f64 {
        match self.objectives {
            Some(o) => (FEASIBLE_ACCURACY - o.accuracy).max(0.0),
            None => f64::INFINITY,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.objectives.map(|o| o.accuracy)
    }

    pub fn flops(&self) -> Option<u64> {
        self.objectives.map(|o| o.flops)
    }
}

pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    a.accuracy >= b.accuracy && a.flops <= b.flops && (a.accuracy > b.accuracy || a.flops < b.flops)
}

/// Feasible beats infeasible, infeasibles compare by violation, feasibles
/// by [`dominates`].
pub fn constrained_dominates(a: &Trial, b: &Trial) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation() < b.violation(),
        (true, true) => match (a.objectives, b.objectives) {
            (Some(x), Some(y)) => dominates(&x, &y),
            _ => false,
        },
    }
}
