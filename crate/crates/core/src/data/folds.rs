use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExampleSet;
use crate::error::{Error, Result};

/// Query-wise fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn from_map(folds: BTreeMap<String, usize>) -> Result<Self> {
        let k = folds.values().max().map(|m| m + 1).unwrap_or(0);
        if k < 2 {
            return Err(Error::Config(format!(
                "fold assignment needs at least 2 folds, found {k}"
            )));
        }
        Ok(Self { k, folds })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, query_id: &str) -> Option<usize> {
        self.folds.get(query_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.folds.iter().map(|(q, f)| (q.as_str(), *f))
    }

    /// Number of queries per fold.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits queries into `k` folds of near-equal size (differing by at most
/// one query). The assignment depends only on the set of query ids and `seed`.
pub fn split_folds(examples: &ExampleSet, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!(
            "fold count must be at least 2, got {k}"
        )));
    }
    if examples.is_empty() {
        return Err(Error::Config("cannot split an empty example set".into()));
    }
    let mut queries: Vec<&str> = examples.query_ids();
    if k > queries.len() {
        return Err(Error::Config(format!(
            "fold count {k} exceeds the {} distinct queries",
            queries.len()
        )));
    }
    queries.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    queries.shuffle(&mut rng);
    let folds = queries
        .into_iter()
        .enumerate()
        .map(|(i, q)| (q.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, Locale, TaskFile, TaskSet};
    use proptest::prelude::*;

    fn set_with_queries(n: usize, per_query: usize) -> ExampleSet {
        let mut v = Vec::new();
        for q in 0..n {
            for p in 0..per_query {
                v.push(Example {
                    query_id: format!("q{q}"),
                    query_text: String::new(),
                    product_id: format!("P{q}_{p}"),
                    locale: Locale::Us,
                    label: None,
                    tasks: TaskSet::single(TaskFile::T2T3),
                });
            }
        }
        ExampleSet::from_examples(v).unwrap()
    }

    #[test]
    fn four_queries_two_folds() {
        let f = split_folds(&set_with_queries(4, 3), 2, 1).unwrap();
        assert_eq!(f.sizes(), vec![2, 2]);
    }

    #[test]
    fn deterministic_for_seed() {
        let set = set_with_queries(30, 2);
        assert_eq!(
            split_folds(&set, 2, 9).unwrap(),
            split_folds(&set, 2, 9).unwrap()
        );
        assert_ne!(
            split_folds(&set, 2, 9).unwrap(),
            split_folds(&set, 2, 10).unwrap()
        );
    }

    #[test]
    fn odd_query_count_sizes() {
        let mut sizes = split_folds(&set_with_queries(101, 1), 2, 3)
            .unwrap()
            .sizes();
        sizes.sort();
        assert_eq!(sizes, vec![50, 51]);
    }

    #[test]
    fn too_many_folds_is_config_error() {
        assert!(matches!(
            split_folds(&set_with_queries(3, 1), 4, 0),
            Err(Error::Config(_))
        ));
        assert!(split_folds(&set_with_queries(3, 1), 1, 0).is_err());
        assert!(split_folds(&ExampleSet::new(), 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_balanced_partition(n in 2usize..60, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let set = set_with_queries(n, 2);
            let f = split_folds(&set, k, seed).unwrap();
            for q in set.query_ids() {
                prop_assert!(f.fold_of(q).unwrap() < k);
            }
            let sizes = f.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
