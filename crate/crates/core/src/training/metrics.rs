use serde::{Deserialize, Serialize};

use crate::data::JetBatch;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;

/// Jets per inference chunk in [`evaluate`].
pub const EVAL_CHUNK: usize = 256;

/// Area under the ROC curve by trapezoidal integration over distinct score
/// thresholds. `None` without both positives and negatives.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        // All samples sharing a score cross the threshold together.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// One-vs-rest AUC per class; `None` for classes absent from the data.
    pub auc: Vec<Option<f64>>,
    /// Mean negative log-likelihood.
    pub loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    /// Report from `[n, classes]` log-probabilities (or any scores whose
    /// argmax is the prediction).
    pub fn from_log_probs(log_probs: &Tensor, labels: &[usize]) -> Result<Self> {
        let shape = log_probs.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::dim(format!(
                "log-probs {shape:?} do not match {} labels",
                labels.len()
            )));
        }
        let classes = shape[1];
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut nll = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Index(format!("label {y} of {classes} classes")));
            }
            let row = log_probs.row(r);
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (c, v)| if *v > row[best] { c } else { best });
            confusion[y][pred] += 1;
            nll -= row[y];
        }
        let n = labels.len().max(1) as f64;
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let auc = (0..classes)
            .map(|c| {
                let scores: Vec<f64> = (0..labels.len()).map(|r| log_probs.row(r)[c]).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                roc_auc(&scores, &pos)
            })
            .collect();
        Ok(EvalReport {
            accuracy: correct as f64 / n,
            auc,
            loss: nll / n,
            confusion,
        })
    }

    /// Mean over the classes that have an AUC.
    pub fn mean_auc(&self) -> Option<f64> {
        let v: Vec<f64> = self.auc.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Inference-mode log-probabilities for a whole batch, computed in chunks of
/// [`EVAL_CHUNK`] jets.
pub fn predict_all(model: &ModelState, data: &JetBatch) -> Result<Tensor> {
    let mut out = Vec::with_capacity(data.len() * model.config.num_classes);
    let mut classes = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let lp = model.predict(&data.select(chunk)?.features)?;
        classes = lp.shape()[1];
        out.extend_from_slice(lp.data());
    }
    Tensor::new(vec![data.len(), classes], out)
}

pub fn evaluate(model: &ModelState, data: &JetBatch) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    EvalReport::from_log_probs(&predict_all(model, data)?, &data.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn concordance(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn twenty_sample_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let pos: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let a = roc_auc(&scores, &pos).unwrap();
        assert!((a - concordance(&scores, &pos)).abs() < 1e-12);
    }

    #[test]
    fn matches_concordance_up_to_fifty() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for n in 2..=50 {
            for trial in 0..20 {
                // coarse levels force ties
                let levels = 1 + trial % 6;
                let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
                let mut pos: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
                pos[0] = true;
                pos[1] = false;
                let a = roc_auc(&scores, &pos).unwrap();
                assert!((a - concordance(&scores, &pos)).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn random_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let pos: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        let a = roc_auc(&scores, &pos).unwrap();
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn perfect_classifier() {
        let labels = vec![0, 1, 2, 1, 0];
        let mut lp = vec![(0.01f64).ln(); 15];
        for (r, &y) in labels.iter().enumerate() {
            lp[r * 3 + y] = (0.98f64).ln();
        }
        let rep = EvalReport::from_log_probs(&Tensor::new(vec![5, 3], lp).unwrap(), &labels).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert!(rep.auc.iter().all(|a| *a == Some(1.0)));
        let trace: usize = (0..3).map(|c| rep.confusion[c][c]).sum();
        assert_eq!(trace, 5);
    }

    #[test]
    fn absent_class_has_no_auc() {
        let lp = Tensor::new(vec![2, 3], vec![-0.1, -3.0, -3.0, -3.0, -0.1, -3.0]).unwrap();
        let rep = EvalReport::from_log_probs(&lp, &[0, 1]).unwrap();
        assert_eq!(rep.auc[2], None);
        assert_eq!(rep.auc[0], Some(1.0));
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_none());
    }

    #[test]
    fn accuracy_is_confusion_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
        let lp = Tensor::new(vec![40, 4], (0..160).map(|_| -rng.random::<f64>()).collect()).unwrap();
        let rep = EvalReport::from_log_probs(&lp, &labels).unwrap();
        let trace: usize = (0..4).map(|c| rep.confusion[c][c]).sum();
        let total: usize = rep.confusion.iter().flatten().sum();
        assert_eq!(rep.accuracy, trace as f64 / total as f64);
    }
}
