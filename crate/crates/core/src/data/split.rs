use super::matrix::RatingMatrix;
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train_users: Vec<usize>,
    pub val_users: Vec<usize>,
    pub test_users: Vec<usize>,
    pub seed: u64,
}

/// Shuffles users and slices by `ratios`. Validation and test sizes are
/// floored; the remainder goes to training.
pub fn split_users(num_users: usize, ratios: (u32, u32, u32), seed: u64) -> Result<UserSplit> {
    let total = ratios.0 as u64 + ratios.1 as u64 + ratios.2 as u64;
    if total == 0 {
        return Err(Error::config("split ratios must sum to a positive total"));
    }
    if num_users < 10 {
        return Err(Error::config(format!(
            "need at least 10 users to split, have {num_users}"
        )));
    }
    let mut ids: Vec<usize> = (0..num_users).collect();
    Rng::new(seed).shuffle(&mut ids);
    let n_val = (num_users as u64 * ratios.1 as u64 / total) as usize;
    let n_test = (num_users as u64 * ratios.2 as u64 / total) as usize;
    let n_train = num_users - n_val - n_test;
    let mut train_users = ids[..n_train].to_vec();
    let mut val_users = ids[n_train..n_train + n_val].to_vec();
    let mut test_users = ids[n_train + n_val..].to_vec();
    train_users.sort_unstable();
    val_users.sort_unstable();
    test_users.sort_unstable();
    Ok(UserSplit {
        train_users,
        val_users,
        test_users,
        seed,
    })
}

/// A user's history divided into fold-in input and held-out targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldInPair {
    pub user_id: usize,
    pub input_items: Vec<usize>,
    pub holdout_items: Vec<usize>,
}

impl FoldInPair {
    /// Users without held-out items do not enter metric averages.
    pub fn excluded(&self) -> bool {
        self.holdout_items.is_empty()
    }
}

/// Number of items held out of a history of `n`: `round(fraction·n)`, at least
/// one when `n ≥ 2`, never the whole history.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

pub fn holdout_items(user_id: usize, row: &[usize], fraction: f64, seed: u64) -> FoldInPair {
    let k = holdout_count(row.len(), fraction);
    let mut shuffled = row.to_vec();
    Rng::new(seed).shuffle(&mut shuffled);
    let mut holdout_items = shuffled[..k].to_vec();
    let mut input_items = shuffled[k..].to_vec();
    holdout_items.sort_unstable();
    input_items.sort_unstable();
    FoldInPair {
        user_id,
        input_items,
        holdout_items,
    }
}

/// Fold-in pairs for `users`, each with its own seed derived from `seed`.
pub fn fold_in_pairs(
    matrix: &RatingMatrix,
    users: &[usize],
    fraction: f64,
    seed: u64,
) -> Vec<FoldInPair> {
    users
        .iter()
        .map(|&u| holdout_items(u, matrix.row(u), fraction, derive_seed(seed, u as u64)))
        .collect()
}
