//! Scoring trained models under every objective, and model averaging.

use hingenet_core::heads::{hinge_sum, mean_cross_entropy, predict, softmax_probs, squared_hinge_sum};
use hingenet_core::dataio::Dataset;
use hingenet_core::{HeadKind, SignTargets, Tensor};
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::model::Model;

/// Constants that turn raw data terms into full objectives. A pair of
/// models compared side by side must be scored with the same constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConstants {
    /// Hinge weight for both SVM objectives.
    pub c: f64,
    /// Softmax weight cost.
    pub weight_decay: f64,
}

/// One model scored under all three objectives. Each loss includes its
/// weight cost on the head's non-bias rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossObjectiveReport {
    pub examples: usize,
    pub error_pct: f64,
    /// Mean cross-entropy of the softmax of the scores, plus `wd·½‖W‖²`.
    pub avg_xent: f64,
    /// `½‖W‖² + C·Σ hinge`.
    pub hinge_sum: f64,
    /// `½‖W‖² + C·Σ hinge²`.
    pub hinge_sq_sum: f64,
    /// `hinge_sq_sum / N`.
    pub hinge_sq_mean: f64,
}

impl CrossObjectiveReport {
    /// The objective a head of this kind minimizes.
    pub fn objective(&self, kind: HeadKind) -> f64 {
        match kind {
            HeadKind::Softmax => self.avg_xent,
            HeadKind::L1Svm => self.hinge_sum,
            HeadKind::L2Svm => self.hinge_sq_sum,
        }
    }

    /// `(kind, error %, loss)` for each objective. Error depends only on
    /// the predictions, so it is the same in every column.
    pub fn columns(&self) -> [(HeadKind, f64, f64); 3] {
        HeadKind::ALL.map(|k| (k, self.error_pct, self.objective(k)))
    }
}

/// Scores an already preprocessed dataset.
pub fn cross_objective_eval(model: &mut Model, data: &Dataset, consts: EvalConstants) -> Result<CrossObjectiveReport> {
    let scores = model.scores(&data.inputs)?;
    report_from_scores(model, &scores, &data.labels, consts)
}

pub(crate) fn report_from_scores(
    model: &Model,
    scores: &Tensor,
    labels: &[usize],
    consts: EvalConstants,
) -> Result<CrossObjectiveReport> {
    let n = labels.len();
    let wrong = predict(scores).iter().zip(labels).filter(|(p, y)| p != y).count();
    let weight_cost = model.head.weights.half_sq_norm();
    let targets = SignTargets::from_labels(labels, model.num_classes())?;
    let hinge_sq_sum = weight_cost + consts.c * squared_hinge_sum(scores, &targets)?;
    Ok(CrossObjectiveReport {
        examples: n,
        error_pct: 100.0 * wrong as f64 / n as f64,
        avg_xent: mean_cross_entropy(scores, labels)? + consts.weight_decay * weight_cost,
        hinge_sum: weight_cost + consts.c * hinge_sum(scores, &targets)?,
        hinge_sq_sum,
        hinge_sq_mean: hinge_sq_sum / n as f64,
    })
}

/// How member outputs were combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Probabilities,
    Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub labels: Vec<usize>,
    pub averaging: Averaging,
    /// Averaged `[N × K]` outputs.
    pub averaged: Tensor,
}

/// Averages member outputs on raw inputs (each member applies its own
/// preprocessing) and takes the argmax. Softmax members are averaged as
/// probabilities, SVM members as raw scores.
pub fn ensemble_predict(members: &mut [Model], raw_inputs: &Tensor) -> Result<EnsemblePrediction> {
    let first = members
        .first()
        .ok_or_else(|| HarnessError::Ensemble("ensemble has no members".into()))?;
    let kind = first.head.spec.kind;
    let k = first.num_classes();
    if let Some(bad) = members.iter().find(|m| m.head.spec.kind != kind || m.num_classes() != k) {
        return Err(HarnessError::Ensemble(format!(
            "members must share head kind and class count: {kind}/{k} versus {}/{}",
            bad.head.spec.kind,
            bad.num_classes()
        )));
    }
    let averaging = if kind.is_svm() {
        Averaging::Scores
    } else {
        Averaging::Probabilities
    };
    let n = raw_inputs.rows();
    let flat = raw_inputs.clone().reshape(&[n, raw_inputs.row_len()])?;
    let mut sum = Tensor::zeros(&[n, k]);
    for m in members.iter_mut() {
        let x = m.preprocessing.apply(&flat)?;
        let s = m.scores(&x)?;
        let out = match averaging {
            Averaging::Probabilities => softmax_probs(&s),
            Averaging::Scores => s,
        };
        sum.add_scaled_inplace(1.0, &out)?;
    }
    let averaged = sum.scale(1.0 / members.len() as f64);
    Ok(EnsemblePrediction {
        labels: predict(&averaged),
        averaging,
        averaged,
    })
}

pub fn error_pct(predicted: &[usize], labels: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, y)| p != y).count();
    100.0 * wrong as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_layers;
    use crate::model::Objective;
    use hingenet_core::dataio::Split;
    use hingenet_core::RunRng;
    use rand::{Rng, SeedableRng};

    fn model(kind: HeadKind, seed: u64, std: f64) -> Model {
        let mut rng = RunRng::seed_from_u64(seed);
        let specs = parse_layers("dense:8,relu").unwrap();
        let obj = Objective {
            kind,
            c: 0.5,
            weight_decay: 0.01,
        };
        Model::build(&specs, &[3], 4, obj, std, &mut rng).unwrap()
    }

    fn data(n: usize, seed: u64) -> Dataset {
        let mut rng = RunRng::seed_from_u64(seed);
        let x = Tensor::new(&[n, 3], (0..3 * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = (0..n).map(|i| i % 4).collect();
        Dataset::new(x, y, 4, Split::Test).unwrap()
    }

    const CONSTS: EvalConstants = EvalConstants { c: 0.5, weight_decay: 0.01 };

    #[test]
    fn tiny_weights_give_log_k_cross_entropy() {
        let mut m = model(HeadKind::L2Svm, 0, 1e-6);
        let r = cross_objective_eval(&mut m, &data(50, 1), CONSTS).unwrap();
        assert!((r.avg_xent - 4f64.ln()).abs() < 1e-6, "{}", r.avg_xent);
    }

    #[test]
    fn error_is_shared_across_columns() {
        let mut m = model(HeadKind::Softmax, 2, 0.5);
        let r = cross_objective_eval(&mut m, &data(30, 3), CONSTS).unwrap();
        let cols = r.columns();
        assert!(cols.iter().all(|c| c.1 == r.error_pct));
        assert!((0.0..=100.0).contains(&r.error_pct));
        assert_eq!(r.hinge_sq_mean * 30.0, r.hinge_sq_sum);
    }

    #[test]
    fn report_matches_head_losses() {
        let mut m = model(HeadKind::L2Svm, 4, 0.5);
        let d = data(12, 5);
        let r = cross_objective_eval(&mut m, &d, CONSTS).unwrap();
        let (out, _) = m.loss_and_grads(&d.inputs, &d.labels, &mut hingenet_core::Mode::Eval).unwrap();
        assert!((out.loss - r.hinge_sq_sum).abs() <= 1e-12 * out.loss);
        let mut s = m.with_objective(Objective { kind: HeadKind::Softmax, c: 0.5, weight_decay: 0.01 }).unwrap();
        let (out, _) = s.loss_and_grads(&d.inputs, &d.labels, &mut hingenet_core::Mode::Eval).unwrap();
        assert!((out.loss - r.avg_xent).abs() <= 1e-12 * out.loss);
    }

    #[test]
    fn ensemble_of_one_and_of_twins() {
        let d = data(40, 6);
        for kind in [HeadKind::Softmax, HeadKind::L2Svm] {
            let mut m = model(kind, 7, 0.5);
            let alone = m.predict(&d.inputs).unwrap();
            let one = ensemble_predict(std::slice::from_mut(&mut m), &d.inputs).unwrap();
            assert_eq!(one.labels, alone);
            let mut twins = vec![m.clone(), m.clone()];
            assert_eq!(ensemble_predict(&mut twins, &d.inputs).unwrap().labels, alone);
            let expected = if kind.is_svm() { Averaging::Scores } else { Averaging::Probabilities };
            assert_eq!(one.averaging, expected);
        }
    }

    #[test]
    fn ensemble_rejects_empty_and_mixed() {
        let d = data(4, 8);
        assert!(matches!(ensemble_predict(&mut [], &d.inputs), Err(HarnessError::Ensemble(_))));
        let mut mixed = vec![model(HeadKind::Softmax, 1, 0.1), model(HeadKind::L2Svm, 1, 0.1)];
        assert!(ensemble_predict(&mut mixed, &d.inputs).is_err());
    }
}
