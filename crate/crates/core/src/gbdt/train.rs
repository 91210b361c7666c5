use std::collections::BTreeSet;

use super::tree::{grow_tree, ColumnData, GrowParams, Tree};
use super::{GbdtModel, GbdtParams, Objective};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::par;

/// Floor applied to class priors so absent classes keep a finite base score.
pub const PRIOR_FLOOR: f64 = 1e-6;
const HESS_FLOOR: f64 = 1e-16;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a softmax over `margins` against class `target`.
pub fn softmax_log_loss(margins: &[f64], target: usize) -> f64 {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + margins.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
    lse - margins[target]
}

/// Gradient `p - y` and diagonal hessian `p (1 - p)` of
/// [`softmax_log_loss`] with respect to the margins.
pub fn softmax_grad_hess(margins: &[f64], target: usize) -> (Vec<f64>, Vec<f64>) {
    let p = softmax(margins);
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, pk)| pk - if k == target { 1.0 } else { 0.0 })
        .collect();
    let hess = p.iter().map(|pk| pk * (1.0 - pk)).collect();
    (grad, hess)
}

pub fn binary_log_loss(margin: f64, target: usize) -> f64 {
    // log(1 + e^m) - y m, computed without overflow.
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - if target == 1 { margin } else { 0.0 }
}

pub fn binary_grad_hess(margin: f64, target: usize) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - target as f64, p * (1.0 - p))
}

fn mean_loss(objective: Objective, margins: &[f64], targets: &[usize]) -> f64 {
    let k = objective.num_outputs();
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &y)| match objective {
            Objective::Multiclass => softmax_log_loss(&margins[i * k..(i + 1) * k], y),
            Objective::Binary => binary_log_loss(margins[i], y),
        })
        .sum();
    total / targets.len() as f64
}

fn validate(
    matrix: &FeatureMatrix,
    targets: &[usize],
    objective: Objective,
    params: &GbdtParams,
) -> Result<()> {
    params.validate()?;
    let n = matrix.n_rows();
    if targets.len() != n {
        return Err(Error::Validation(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    if matrix.n_cols() == 0 {
        return Err(Error::Validation("feature matrix has no columns".into()));
    }
    if n < 2 * params.min_samples_leaf {
        return Err(Error::Validation(format!(
            "{n} rows is fewer than 2 x min_samples_leaf ({})",
            params.min_samples_leaf
        )));
    }
    let limit = objective.num_classes();
    if let Some((i, y)) = targets.iter().enumerate().find(|(_, y)| **y >= limit) {
        return Err(Error::Validation(format!(
            "row {i}: target {y} outside 0..{limit}"
        )));
    }
    if let Some((row, col)) = matrix.first_non_finite() {
        return Err(Error::Validation(format!(
            "non-finite feature value at row {row}, column `{col}`"
        )));
    }
    let distinct: BTreeSet<usize> = targets.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "all {n} targets are class {:?}",
            distinct.iter().next()
        )));
    }
    Ok(())
}

fn base_scores(objective: Objective, targets: &[usize]) -> Vec<f64> {
    let n = targets.len() as f64;
    match objective {
        Objective::Multiclass => {
            let mut counts = [0usize; NUM_CLASSES];
            for &y in targets {
                counts[y] += 1;
            }
            counts
                .iter()
                .map(|&c| (c as f64 / n).max(PRIOR_FLOOR).ln())
                .collect()
        }
        Objective::Binary => {
            let pos = targets.iter().filter(|&&y| y == 1).count() as f64 / n;
            vec![(pos / (1.0 - pos)).ln()]
        }
    }
}

/// Trains a model. See [`train_with_log`].
pub fn train(
    matrix: &FeatureMatrix,
    targets: &[usize],
    objective: Objective,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    train_with_log(matrix, targets, objective, params).map(|(m, _)| m)
}

/// Newton boosting with exact greedy trees.
///
/// Each round fits one tree per output (four for multiclass, in class order)
/// to the gradient and hessian of the log-loss at the current margins.
/// Returns the model and the mean training log-loss before the first round
/// and after every round.
pub fn train_with_log(
    matrix: &FeatureMatrix,
    targets: &[usize],
    objective: Objective,
    params: &GbdtParams,
) -> Result<(GbdtModel, Vec<f64>)> {
    validate(matrix, targets, objective, params)?;
    let n = matrix.n_rows();
    let k = objective.num_outputs();
    let exec = params.exec;
    let data = ColumnData::new(n, matrix.n_cols(), |i, j| matrix.get(i, j), exec);
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        lambda: params.l2_leaf_regularization,
        learning_rate: params.learning_rate,
    };

    let base = base_scores(objective, targets);
    let mut margins: Vec<f64> = (0..n).flat_map(|_| base.iter().copied()).collect();
    let mut trees: Vec<Tree> = Vec::with_capacity(params.num_rounds * k);
    let mut losses = Vec::with_capacity(params.num_rounds + 1);
    losses.push(mean_loss(objective, &margins, targets));

    for _round in 0..params.num_rounds {
        let (grads, hesses): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match objective {
            Objective::Multiclass => {
                let mut g = vec![vec![0.0; n]; k];
                let mut h = vec![vec![0.0; n]; k];
                for i in 0..n {
                    let (gi, hi) = softmax_grad_hess(&margins[i * k..(i + 1) * k], targets[i]);
                    for c in 0..k {
                        g[c][i] = gi[c];
                        h[c][i] = hi[c].max(HESS_FLOOR);
                    }
                }
                (g, h)
            }
            Objective::Binary => {
                let (g, h) = (0..n)
                    .map(|i| {
                        let (g, h) = binary_grad_hess(margins[i], targets[i]);
                        (g, h.max(HESS_FLOOR))
                    })
                    .unzip();
                (vec![g], vec![h])
            }
        };
        let grown = par::map_range(exec, k, |c| {
            grow_tree(&data, &grads[c], &hesses[c], &grow, exec)
        });
        for (c, (tree, per_row)) in grown.into_iter().enumerate() {
            for (i, v) in per_row.into_iter().enumerate() {
                margins[i * k + c] += v;
            }
            trees.push(tree);
        }
        losses.push(mean_loss(objective, &margins, targets));
    }

    let model = GbdtModel {
        objective,
        trees,
        base_score: base,
        feature_schema: matrix.names().to_vec(),
        params: params.clone(),
    };
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 3.0, 1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[0.0, 1.0, 2.0, 999.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_loss_is_stable() {
        assert!(binary_log_loss(800.0, 1).abs() < 1e-12);
        assert!((binary_log_loss(800.0, 0) - 800.0).abs() < 1e-9);
        assert!((binary_log_loss(0.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn priors_become_base_scores() {
        let b = base_scores(Objective::Multiclass, &[0, 0, 1, 3]);
        assert!((b[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((b[2] - PRIOR_FLOOR.ln()).abs() < 1e-15);
        let b = base_scores(Objective::Binary, &[1, 0, 0, 0]);
        assert!((b[0] - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }
}
