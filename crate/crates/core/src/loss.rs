//! Set-prediction objective: soft-target focal class loss, L1 time loss,
//! and their sum over decoder layers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcher::{assign, Assignment, MatchingMode, PaddedGroundTruthSet, Prediction};
use crate::math;
use crate::model::{forward_on_tape, ModelParams, TapeOutputs};
use crate::tensor::{GradCheck, Tape, Tensor, Var};

/// Per-class `(c - ĉ)² · [-c·ln ĉ - (1-c)·ln(1-ĉ)]`.
pub fn soft_focal_term(target: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    if target.len() != predicted.len() {
        return Err(invalid(format!(
            "target of length {} against {} scores",
            target.len(),
            predicted.len()
        )));
    }
    target
        .iter()
        .zip(predicted)
        .map(|(&c, &p)| {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("score {p} must lie strictly inside (0, 1)")));
            }
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid(format!("target {c} must lie in [0, 1]")));
            }
            let bce = -c * math::ln(p) - (1.0 - c) * math::ln(1.0 - p);
            Ok((c - p) * (c - p) * bce)
        })
        .collect()
}

fn check(assignment: &Assignment, padded: &PaddedGroundTruthSet, preds: &[Prediction]) -> Result<usize> {
    let n = padded.len();
    if preds.len() != n || assignment.permutation.len() != n {
        return Err(invalid(format!(
            "{} slots, {} predictions, assignment of {}",
            n,
            preds.len(),
            assignment.permutation.len()
        )));
    }
    match padded.num_labels() {
        0 => Err(Error::NoLabels),
        g => Ok(g),
    }
}

/// Focal loss over every slot (φ slots against an all-zero target), divided
/// by the number of real labels.
pub fn class_loss(assignment: &Assignment, padded: &PaddedGroundTruthSet, preds: &[Prediction]) -> Result<f64> {
    let num_labels = check(assignment, padded, preds)?;
    let mut total = 0.0;
    for (slot, &j) in padded.slots().iter().zip(&assignment.permutation) {
        let scores = &preds[j].scores;
        let terms = match slot {
            Some(gt) => soft_focal_term(&gt.classes, scores)?,
            None => soft_focal_term(&vec![0.0; scores.len()], scores)?,
        };
        total += terms.iter().sum::<f64>();
    }
    Ok(total / num_labels as f64)
}

/// Mean `|t - t̂|` over real labels.
pub fn time_loss(assignment: &Assignment, padded: &PaddedGroundTruthSet, preds: &[Prediction]) -> Result<f64> {
    let num_labels = check(assignment, padded, preds)?;
    let total: f64 = padded
        .slots()
        .iter()
        .zip(&assignment.permutation)
        .filter_map(|(slot, &j)| slot.as_ref().map(|gt| (gt.time - preds[j].time).abs()))
        .sum();
    Ok(total / num_labels as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerLoss {
    pub class_loss: f64,
    pub time_loss: f64,
    pub total: f64,
}

/// Loss components summed over decoder layers, with the per-layer values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class_loss: f64,
    pub time_loss: f64,
    pub total: f64,
    pub layers: Vec<LayerLoss>,
}

impl LossBreakdown {
    pub fn from_layers(layers: Vec<LayerLoss>) -> Self {
        Self {
            class_loss: layers.iter().map(|l| l.class_loss).sum(),
            time_loss: layers.iter().map(|l| l.time_loss).sum(),
            total: layers.iter().map(|l| l.total).sum(),
            layers,
        }
    }
}

/// `class + λ·time` for one layer under a given assignment.
pub fn layer_loss(
    assignment: &Assignment,
    padded: &PaddedGroundTruthSet,
    preds: &[Prediction],
    lambda_time: f64,
) -> Result<LayerLoss> {
    let class_loss = class_loss(assignment, padded, preds)?;
    let time_loss = time_loss(assignment, padded, preds)?;
    Ok(LayerLoss { class_loss, time_loss, total: class_loss + lambda_time * time_loss })
}

/// Assigns each layer independently and sums the layer losses.
pub fn total_loss(
    layers: &[Vec<Prediction>],
    padded: &PaddedGroundTruthSet,
    lambda_time: f64,
    mode: MatchingMode,
) -> Result<(LossBreakdown, Vec<Assignment>)> {
    if layers.is_empty() {
        return Err(invalid("loss needs at least one decoder layer"));
    }
    let mut parts = Vec::with_capacity(layers.len());
    let mut assignments = Vec::with_capacity(layers.len());
    for preds in layers {
        let a = assign(mode, padded, preds, lambda_time)?;
        parts.push(layer_loss(&a, padded, preds, lambda_time)?);
        assignments.push(a);
    }
    Ok((LossBreakdown::from_layers(parts), assignments))
}

/// Records the summed layer loss for fixed `assignments` on `tape`.
pub fn loss_on_tape(
    tape: &mut Tape,
    outputs: &TapeOutputs,
    padded: &PaddedGroundTruthSet,
    assignments: &[Assignment],
    lambda_time: f64,
) -> Result<Var> {
    let layers = outputs.class_logits.len();
    if assignments.len() != layers || layers == 0 {
        return Err(invalid(format!("{} assignments for {layers} layers", assignments.len())));
    }
    let num_labels = match padded.num_labels() {
        0 => return Err(Error::NoLabels),
        g => g as f64,
    };
    let mut total: Option<Var> = None;
    for ((&logits, &time), a) in outputs.class_logits.iter().zip(&outputs.time_logits).zip(assignments) {
        let (n, classes) = tape
            .value(logits)
            .dims2()
            .ok_or_else(|| invalid("class logits must be a matrix"))?;
        if a.permutation.len() != n || padded.len() != n {
            return Err(invalid(format!("assignment of {} for {n} queries", a.permutation.len())));
        }
        let mut targets = vec![0.0; n * classes];
        let mut rows = Vec::new();
        let mut times = Vec::new();
        for (slot, &j) in padded.slots().iter().zip(&a.permutation) {
            if let Some(gt) = slot {
                if gt.classes.len() != classes {
                    return Err(invalid("label class count differs from the model"));
                }
                targets[j * classes..(j + 1) * classes].copy_from_slice(&gt.classes);
                rows.push(j);
                times.push(gt.time);
            }
        }
        let focal = tape.soft_focal(logits, &Tensor::new(vec![n, classes], targets)?)?;
        let class_sum = tape.sum(focal)?;
        let class_term = tape.scale(class_sum, 1.0 / num_labels)?;

        let t_hat = tape.sigmoid(time)?;
        let matched = tape.select_rows(t_hat, &rows)?;
        let target = tape.constant(Tensor::new(vec![rows.len(), 1], times)?);
        let diff = tape.sub(matched, target)?;
        let diff = tape.abs(diff)?;
        let time_sum = tape.sum(diff)?;
        let time_term = tape.scale(time_sum, lambda_time / num_labels)?;

        let layer = tape.add(class_term, time_term)?;
        total = Some(match total {
            Some(t) => tape.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one layer"))
}

/// Model loss for one clip with the assignment held at `assignments`.
fn model_loss(
    params: &ModelParams,
    features: &Tensor,
    padded: &PaddedGroundTruthSet,
    assignments: &[Assignment],
    lambda_time: f64,
) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, true);
    let x = tape.constant(features.clone());
    let out = forward_on_tape(&mut tape, &params.config, &vars, x)?;
    let loss = loss_on_tape(&mut tape, &out, padded, assignments, lambda_time)?;
    Ok((tape, vars, loss))
}

/// Compares parameter gradients of the full model loss with central
/// differences at the given `(parameter, entry)` coordinates. Assignments are
/// computed once at `params` and held fixed under perturbation.
pub fn model_grad_check(
    params: &ModelParams,
    features: &Tensor,
    padded: &PaddedGroundTruthSet,
    lambda_time: f64,
    mode: MatchingMode,
    coordinates: &[(usize, usize)],
    step: f64,
) -> Result<GradCheck> {
    if !(step > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let layers = crate::model::forward(features, params)?;
    let (_, assignments) = total_loss(&layers, padded, lambda_time, mode)?;
    let (tape, vars, loss) = model_loss(params, features, padded, &assignments, lambda_time)?;
    let grads = tape.backward(loss)?;
    let eval = |p: &ModelParams| -> Result<f64> {
        let (tape, _, loss) = model_loss(p, features, padded, &assignments, lambda_time)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut analytic = Vec::with_capacity(coordinates.len());
    let mut numeric = Vec::with_capacity(coordinates.len());
    let mut probe = params.clone();
    for &(p, e) in coordinates {
        let original = params
            .params
            .get(p)
            .and_then(|q| q.value.data().get(e).copied())
            .ok_or_else(|| invalid(format!("no parameter entry ({p}, {e})")))?;
        analytic.push(grads.wrt(&tape, vars[p]).data()[e]);
        probe.params[p].value = params.params[p].value.with_value(e, original + step);
        let up = eval(&probe)?;
        probe.params[p].value = params.params[p].value.with_value(e, original - step);
        let down = eval(&probe)?;
        probe.params[p].value = params.params[p].value.clone();
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(GradCheck::from_pairs(analytic, numeric))
}
