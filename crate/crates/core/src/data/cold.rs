use super::matrix::{InteractionSet, RatingMatrix};
use super::split::{holdout_items, FoldInPair};
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, Rng};

/// Items withheld from training to simulate offline cold-start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdPartition {
    /// Sorted ascending.
    pub cold_item_ids: Vec<usize>,
    pub is_cold: Vec<bool>,
    /// Same shape as the source; cold columns are empty.
    pub train_matrix: RatingMatrix,
    /// Interactions removed from training, kept as ground truth.
    pub removed_pairs: Vec<(usize, usize)>,
}

impl ColdPartition {
    pub fn num_cold(&self) -> usize {
        self.cold_item_ids.len()
    }
}

pub fn mark_cold_items(inter: &InteractionSet, n_cold: usize, seed: u64) -> Result<ColdPartition> {
    let n_items = inter.num_items();
    if n_cold == 0 {
        return Err(Error::config(
            "n_cold must be positive; use the normal pipeline for zero cold items",
        ));
    }
    if n_cold >= n_items {
        return Err(Error::config(format!(
            "n_cold = {n_cold} must be smaller than the catalog ({n_items})"
        )));
    }
    let mut ids: Vec<usize> = (0..n_items).collect();
    Rng::new(seed).shuffle(&mut ids);
    let mut cold_item_ids = ids[..n_cold].to_vec();
    cold_item_ids.sort_unstable();
    let mut is_cold = vec![false; n_items];
    cold_item_ids.iter().for_each(|&j| is_cold[j] = true);

    let (removed_pairs, kept): (Vec<_>, Vec<_>) =
        inter.pairs().iter().partition(|&&(_, j)| is_cold[j]);
    let train_matrix = RatingMatrix::from_pairs(inter.num_users(), n_items, &kept);
    Ok(ColdPartition {
        cold_item_ids,
        is_cold,
        train_matrix,
        removed_pairs,
    })
}

/// Evaluation pairs for the cold-start protocol. Inputs are drawn from a
/// user's normal items only; every cold interaction joins the holdout.
pub fn cold_fold_in_pairs(
    full: &RatingMatrix,
    partition: &ColdPartition,
    users: &[usize],
    fraction: f64,
    seed: u64,
) -> Vec<FoldInPair> {
    users
        .iter()
        .map(|&u| {
            let (cold, normal): (Vec<usize>, Vec<usize>) =
                full.row(u).iter().partition(|&&j| partition.is_cold[j]);
            let mut pair = holdout_items(u, &normal, fraction, derive_seed(seed, u as u64));
            pair.holdout_items.extend(cold);
            pair.holdout_items.sort_unstable();
            pair
        })
        .collect()
}
