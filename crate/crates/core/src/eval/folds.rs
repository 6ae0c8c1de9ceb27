//! Cross-validation fold construction: each fold is an independent seeded
//! 50/25/25 train/validation/test split of the user ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng, sub_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

pub fn make_folds(user_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let n = user_ids.len();
    if n < 8 {
        return Err(Error::TooFewUsers { needed: 8, got: n });
    }
    let n_train = (n as f64 * 0.5).round() as usize;
    let n_val = (n as f64 * 0.25).round() as usize;

    let folds = (0..k)
        .map(|f| {
            let mut ids = user_ids.to_vec();
            shuffle(&mut ids, sub_seed(seed, "fold", f as u64));
            let test = ids.split_off(n_train + n_val);
            let val = ids.split_off(n_train);
            Fold {
                train: ids,
                val,
                test,
            }
        })
        .collect();
    Ok(FoldPlan { folds, seed })
}

fn shuffle(ids: &mut [String], seed: u64) {
    use rand::Rng;
    let mut r = rng(seed);
    for i in (1..ids.len()).rev() {
        let j = r.gen_range(0..=i);
        ids.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:06}")).collect()
    }

    #[test]
    fn proportions_100_users() {
        let plan = make_folds(&ids(100), 4, 7).unwrap();
        assert_eq!(plan.folds.len(), 4);
        for fold in &plan.folds {
            assert_eq!(fold.train.len(), 50);
            assert_eq!(fold.val.len(), 25);
            assert_eq!(fold.test.len(), 25);
        }
    }

    #[test]
    fn proportions_101_users_round_within_one() {
        let plan = make_folds(&ids(101), 4, 7).unwrap();
        for fold in &plan.folds {
            assert!((fold.train.len() as i64 - 51).abs() <= 1);
            assert!((fold.val.len() as i64 - 25).abs() <= 1);
            assert!((fold.test.len() as i64 - 25).abs() <= 1);
            assert_eq!(fold.train.len() + fold.val.len() + fold.test.len(), 101);
        }
    }

    #[test]
    fn splits_partition_the_users() {
        let users = ids(37);
        let plan = make_folds(&users, 4, 3).unwrap();
        for fold in &plan.folds {
            let mut seen = HashSet::new();
            for id in fold.train.iter().chain(&fold.val).chain(&fold.test) {
                assert!(seen.insert(id.clone()), "{id} appears twice");
            }
            assert_eq!(seen.len(), users.len());
        }
    }

    #[test]
    fn same_seed_same_plan_folds_differ() {
        let users = ids(40);
        let a = make_folds(&users, 4, 11).unwrap();
        let b = make_folds(&users, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.folds[0], a.folds[1]);
    }

    #[test]
    fn too_few_users_is_an_error() {
        assert!(matches!(
            make_folds(&ids(7), 4, 1),
            Err(Error::TooFewUsers { needed: 8, got: 7 })
        ));
    }
}
