//! Clustered synthetic data where item content predicts collaborative
//! structure.
//!
//! Users and items are dealt round-robin into `n_clusters` groups after a
//! shuffle. Within a cluster every item gets a Zipf weight `z` (mean 1), and
//! a user interacts with an item of its own cluster with probability
//! `sparsity^(1/z)`, so popular items approach certainty while tail items
//! are rarely seen. Out-of-cluster probabilities are scaled by `noise`.
//! Item features are a block template of the item's cluster plus
//! `feature_noise`-scaled standard normal noise.

use ndarray::Array2;

use super::io::FeatureMatrix;
use super::matrix::InteractionSet;
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub s_dim: usize,
    pub sparsity: f64,
    pub noise: f64,
    pub feature_noise: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 200,
            n_clusters: 5,
            s_dim: 20,
            sparsity: 0.2,
            noise: 0.1,
            feature_noise: 0.1,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub interactions: InteractionSet,
    pub features: FeatureMatrix,
    pub user_clusters: Vec<usize>,
    pub item_clusters: Vec<usize>,
}

/// Template row for `cluster`: ones on every feature dim `d` with
/// `d % n_clusters == cluster`.
pub fn cluster_template(cluster: usize, n_clusters: usize, s_dim: usize) -> Vec<f64> {
    (0..s_dim)
        .map(|d| if d % n_clusters == cluster { 1.0 } else { 0.0 })
        .collect()
}

fn deal(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut labels = vec![0; n];
    for (slot, &id) in order.iter().enumerate() {
        labels[id] = slot % k;
    }
    labels
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let SyntheticConfig {
        n_users,
        n_items,
        n_clusters,
        s_dim,
        sparsity,
        noise,
        feature_noise,
        zipf_exponent,
        seed,
    } = *cfg;
    if n_clusters == 0 || n_clusters > n_users.min(n_items) {
        return Err(Error::config(format!(
            "need 1 <= n_clusters <= min(users, items), got {n_clusters}"
        )));
    }
    if s_dim < n_clusters {
        return Err(Error::config("s_dim must be at least n_clusters"));
    }
    if !(0.0..=1.0).contains(&sparsity) || !(0.0..=1.0).contains(&noise) {
        return Err(Error::config("sparsity and noise must lie in [0, 1]"));
    }
    if !(feature_noise >= 0.0) {
        return Err(Error::config("feature noise must be non-negative"));
    }
    if !(zipf_exponent >= 0.0) {
        return Err(Error::config("zipf exponent must be non-negative"));
    }

    let mut rng = Rng::derive(seed, 0);
    let user_clusters = deal(n_users, n_clusters, &mut rng);
    let item_clusters = deal(n_items, n_clusters, &mut rng);

    // Zipf weights per cluster, ranks assigned at random, normalized to mean 1.
    let mut weight = vec![0.0; n_items];
    for c in 0..n_clusters {
        let mut members: Vec<usize> = (0..n_items).filter(|&j| item_clusters[j] == c).collect();
        rng.shuffle(&mut members);
        let raw: Vec<f64> = (1..=members.len())
            .map(|r| (r as f64).powf(-zipf_exponent))
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        for (&j, w) in members.iter().zip(raw) {
            weight[j] = w / mean;
        }
    }
    let p_in: Vec<f64> = weight.iter().map(|&z| sparsity.powf(1.0 / z)).collect();

    let mut inter_rng = Rng::derive(seed, 1);
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let before = pairs.len();
        for j in 0..n_items {
            let p = if item_clusters[j] == user_clusters[u] {
                p_in[j]
            } else {
                noise * p_in[j]
            };
            if inter_rng.uniform() < p {
                pairs.push((u, j));
            }
        }
        if pairs.len() == before {
            let best = (0..n_items)
                .filter(|&j| item_clusters[j] == user_clusters[u])
                .max_by(|&a, &b| weight[a].total_cmp(&weight[b]).then(b.cmp(&a)))
                .expect("cluster has items");
            pairs.push((u, best));
        }
    }
    let interactions = InteractionSet::new(pairs, n_users, n_items)?;

    let mut feat_rng = Rng::new(derive_seed(seed, 2));
    let mut values = Array2::zeros((n_items, s_dim));
    for (j, mut row) in values.rows_mut().into_iter().enumerate() {
        let template = cluster_template(item_clusters[j], n_clusters, s_dim);
        for (v, t) in row.iter_mut().zip(template) {
            *v = t + feature_noise * feat_rng.normal();
        }
    }
    Ok(SyntheticData {
        interactions,
        features: FeatureMatrix::new(values)?,
        user_clusters,
        item_clusters,
    })
}
