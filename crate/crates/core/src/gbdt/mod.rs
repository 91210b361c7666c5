//! Gradient-boosted decision trees: the fuse-and-calibrate stage.
//!
//! Second-order (Newton) boosting with L2-regularised leaves and exact greedy
//! split search. Two objectives: four-class softmax and binary logistic.
//! Training is deterministic; split search may run across features in
//! parallel, with ties broken by lowest feature index and then lowest
//! threshold so the result matches a sequential run bit for bit.

mod io;
mod train;
mod tree;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::data::{ProbVector, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::{schema_mismatch, FeatureMatrix};
use crate::par::{self, Exec};

pub use io::{load_model, model_from_text, model_to_text, save_model, FORMAT_VERSION};
pub use train::{
    binary_grad_hess, binary_log_loss, sigmoid, softmax, softmax_grad_hess, softmax_log_loss,
    train, train_with_log, PRIOR_FLOOR,
};
pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Softmax over the four relevance classes.
    Multiclass,
    /// Logistic loss on a 0/1 target.
    Binary,
}

impl Objective {
    /// Trees per boosting round.
    pub fn num_outputs(self) -> usize {
        match self {
            Objective::Multiclass => NUM_CLASSES,
            Objective::Binary => 1,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Objective::Multiclass => NUM_CLASSES,
            Objective::Binary => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Multiclass => "multiclass",
            Objective::Binary => "binary",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiclass" => Ok(Objective::Multiclass),
            "binary" => Ok(Objective::Binary),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub num_rounds: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values (lambda).
    pub l2_leaf_regularization: f64,
    /// Recorded with the model. Training itself has no random component.
    pub seed: u64,
    /// Not persisted; results are identical in either mode.
    pub exec: Exec,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            num_rounds: 200,
            max_depth: 6,
            min_samples_leaf: 20,
            learning_rate: 0.1,
            l2_leaf_regularization: 1.0,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_rounds == 0 {
            return bad("num_rounds must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.l2_leaf_regularization >= 0.0 && self.l2_leaf_regularization.is_finite()) {
            return bad("l2_leaf_regularization must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Trained additive tree ensemble.
///
/// For multiclass models `trees` is round-major: round `r`, class `c` is
/// `trees[r * 4 + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub objective: Objective,
    pub trees: Vec<Tree>,
    /// One entry per output.
    pub base_score: Vec<f64>,
    pub feature_schema: Vec<String>,
    pub params: GbdtParams,
}

/// Output of [`GbdtModel::predict_proba`].
#[derive(Debug, Clone, PartialEq)]
pub enum Probabilities {
    Multiclass(Vec<ProbVector>),
    /// Probability of the positive class.
    Binary(Vec<f64>),
}

impl GbdtModel {
    pub fn rounds(&self) -> usize {
        self.trees.len() / self.objective.num_outputs()
    }

    /// The same model restricted to its first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> GbdtModel {
        let mut m = self.clone();
        m.trees.truncate(rounds * self.objective.num_outputs());
        m
    }

    /// `matrix` with its columns in schema order. Columns may arrive in any
    /// order but must match the schema as a set.
    fn aligned<'a>(&self, matrix: &'a FeatureMatrix) -> Result<Cow<'a, FeatureMatrix>> {
        if matrix.names() == self.feature_schema.as_slice() {
            return Ok(Cow::Borrowed(matrix));
        }
        let mut want = self.feature_schema.clone();
        let mut have = matrix.names().to_vec();
        want.sort();
        have.sort();
        if want != have {
            return Err(schema_mismatch(&self.feature_schema, matrix.names()));
        }
        Ok(Cow::Owned(matrix.select_columns(&self.feature_schema)?))
    }

    fn margins_row(&self, row: &[f64]) -> Vec<f64> {
        let k = self.objective.num_outputs();
        let mut m = self.base_score.clone();
        for (t, tree) in self.trees.iter().enumerate() {
            m[t % k] += tree.predict_row(row);
        }
        m
    }

    /// Raw margins, one `Vec` of length `num_outputs` per row.
    pub fn predict_margins(&self, matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.predict_margins_exec(matrix, self.params.exec)
    }

    pub fn predict_margins_exec(
        &self,
        matrix: &FeatureMatrix,
        exec: Exec,
    ) -> Result<Vec<Vec<f64>>> {
        let m = self.aligned(matrix)?;
        Ok(par::map_range(exec, m.n_rows(), |i| {
            self.margins_row(m.row(i))
        }))
    }

    pub fn predict_proba(&self, matrix: &FeatureMatrix) -> Result<Probabilities> {
        let margins = self.predict_margins(matrix)?;
        Ok(match self.objective {
            Objective::Multiclass => Probabilities::Multiclass(
                margins
                    .iter()
                    .map(|m| {
                        let p = softmax(m);
                        ProbVector::new([p[0], p[1], p[2], p[3]])
                    })
                    .collect::<Result<_>>()?,
            ),
            Objective::Binary => {
                Probabilities::Binary(margins.iter().map(|m| sigmoid(m[0])).collect())
            }
        })
    }

    pub fn predict_multiclass(&self, matrix: &FeatureMatrix) -> Result<Vec<ProbVector>> {
        match self.predict_proba(matrix)? {
            Probabilities::Multiclass(p) => Ok(p),
            Probabilities::Binary(_) => Err(Error::Validation(
                "binary model asked for class probabilities".into(),
            )),
        }
    }

    pub fn predict_binary(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        match self.predict_proba(matrix)? {
            Probabilities::Binary(p) => Ok(p),
            Probabilities::Multiclass(_) => Err(Error::Validation(
                "multiclass model asked for a binary probability".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairKey;

    fn matrix(names: &[&str], rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new(
            names.iter().map(|s| s.to_string()).collect(),
            (0..rows.len())
                .map(|i| PairKey::new("q", format!("p{i}")))
                .collect(),
            rows.concat(),
        )
        .unwrap()
    }

    fn params(rounds: usize, depth: usize) -> GbdtParams {
        GbdtParams {
            num_rounds: rounds,
            max_depth: depth,
            min_samples_leaf: 1,
            ..GbdtParams::default()
        }
    }

    #[test]
    fn depth_one_binary_splits_at_midpoint() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let m = matrix(&["x"], &rows);
        let model = train(&m, &y, Objective::Binary, &params(1, 1)).unwrap();
        match *model.trees[0].root() {
            Node::Split {
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!(threshold, 0.5);
                let leaf = |i: u32| match model.trees[0].nodes()[i as usize] {
                    Node::Leaf { value } => value,
                    _ => panic!("expected leaf"),
                };
                assert!(leaf(left) < 0.0 && leaf(right) > 0.0);
            }
            other => panic!("expected split, got {other:?}"),
        }
        let p = model
            .predict_binary(&matrix(&["x"], &[vec![1.0], vec![0.0]]))
            .unwrap();
        assert!(p[0] > 0.5 && p[1] < 0.5);
    }

    #[test]
    fn single_class_targets_are_degenerate() {
        let m = matrix(&["x"], &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        assert!(matches!(
            train(&m, &[0, 0, 0, 0], Objective::Multiclass, &params(1, 1)),
            Err(Error::DegenerateTraining(_))
        ));
    }

    #[test]
    fn non_finite_features_rejected_with_location() {
        let m = matrix(&["a", "b"], &[vec![0.0, 1.0], vec![1.0, f64::NAN]]);
        match train(&m, &[0, 1], Objective::Binary, &params(1, 1)) {
            Err(Error::Validation(msg)) => assert!(msg.contains("row 1") && msg.contains("`b`")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_for_leaf_size() {
        let m = matrix(&["x"], &[vec![0.0], vec![1.0], vec![2.0]]);
        let p = GbdtParams {
            min_samples_leaf: 2,
            ..params(1, 1)
        };
        assert!(train(&m, &[0, 1, 0], Objective::Binary, &p).is_err());
    }

    #[test]
    fn zero_rounds_predict_priors() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y = [0, 0, 0, 0, 1, 1, 2, 3];
        let m = matrix(&["x"], &rows);
        let model = train(&m, &y, Objective::Multiclass, &params(3, 2))
            .unwrap()
            .truncated(0);
        for p in model.predict_multiclass(&m).unwrap() {
            let expected = [0.5, 0.25, 0.125, 0.125];
            for (a, b) in p.as_array().iter().zip(expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn schema_mismatch_lists_columns() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = matrix(&["a", "b"], &rows);
        let model = train(&m, &[0, 1, 0, 1, 1, 0], Objective::Binary, &params(2, 2)).unwrap();
        match model.predict_binary(&matrix(&["a", "c"], &rows)) {
            Err(Error::SchemaMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["b".to_string()]);
                assert_eq!(extra, vec!["c".to_string()]);
            }
            other => panic!("expected schema mismatch, got {other:?}"),
        }
        // Same columns in another order are realigned by name.
        let swapped = m.select_columns(&["b", "a"]).unwrap();
        assert_eq!(
            model.predict_binary(&swapped).unwrap(),
            model.predict_binary(&m).unwrap()
        );
    }
}
