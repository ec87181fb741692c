//! Fold-in recommendation, offline cold-start evaluation and catalog
//! extension with content-derived item embeddings.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::data::{ColdPartition, FeatureMatrix, FoldInPair};
use crate::error::{Error, Result};
use crate::eval::{Metric, MetricReport};
use crate::model::Model;
use crate::nn::Rng;
use crate::user_vae::{extension_unsupported, Mode, UserVae};

/// Users scored per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

/// Top items by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    /// Fewer than the requested number of candidates were available.
    pub truncated: bool,
}

/// Posterior means of the user latents: no dropout, no sampling.
pub fn fold_in(user: &UserVae, rows: &[&[usize]]) -> Result<Array2<f64>> {
    Ok(user.encode_users(rows, 0.0, &mut Rng::new(0))?.mu)
}

/// Logits over the whole catalog for each row.
pub fn score_users(user: &UserVae, rows: &[&[usize]]) -> Result<Array2<f64>> {
    let mu = fold_in(user, rows)?;
    user.decode_users(mu.view())
}

fn desc_then_id(scores: ArrayView1<'_, f64>) -> impl Fn(&usize, &usize) -> std::cmp::Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Ranks `candidates` (or the whole catalog) by `scores`, skipping the
/// sorted `exclude` list, and keeps the top `m`.
pub fn rank(
    scores: ArrayView1<f64>,
    candidates: Option<&[usize]>,
    exclude: &[usize],
    m: usize,
) -> Ranking {
    let mut pool: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..scores.len()).collect(),
    };
    pool.retain(|j| exclude.binary_search(j).is_err());
    let cmp = desc_then_id(scores);
    let truncated = pool.len() < m;
    if pool.len() > m && m > 0 {
        pool.select_nth_unstable_by(m - 1, &cmp);
    }
    pool.truncate(m);
    pool.sort_unstable_by(&cmp);
    Ranking {
        scores: pool.iter().map(|&j| scores[j]).collect(),
        items: pool,
        truncated,
    }
}

/// Top-`m` unseen items for one interaction history.
pub fn recommend(user: &UserVae, history: &[usize], m: usize) -> Result<Ranking> {
    if m == 0 {
        return Err(Error::config("M must be at least 1"));
    }
    let mut sorted = history.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let logits = score_users(user, &[&sorted])?;
    Ok(rank(logits.row(0), None, &sorted, m))
}

/// Recall and NDCG at each cutoff over the pairs with a non-empty holdout.
/// Candidates are restricted to `candidates` when given.
pub fn evaluate_pairs(
    user: &UserVae,
    pairs: &[FoldInPair],
    metrics: &[(Metric, usize)],
    candidates: Option<&[usize]>,
) -> Result<Vec<MetricReport>> {
    let mut reports: Vec<MetricReport> =
        metrics.iter().map(|&(k, m)| MetricReport::new(k, m)).collect();
    let max_m = metrics.iter().map(|&(_, m)| m).max().unwrap_or(0);
    let included: Vec<&FoldInPair> = pairs.iter().filter(|p| !p.excluded()).collect();
    for chunk in included.chunks(EVAL_BATCH) {
        let rows: Vec<&[usize]> = chunk.iter().map(|p| p.input_items.as_slice()).collect();
        let logits = score_users(user, &rows)?;
        for (b, pair) in chunk.iter().enumerate() {
            let ranking = rank(logits.row(b), candidates, &pair.input_items, max_m);
            for r in reports.iter_mut() {
                r.values
                    .push(r.metric.eval(&ranking.items, &pair.holdout_items, r.m));
            }
        }
    }
    Ok(reports)
}

/// Per-group results of an offline cold-start evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartReport {
    pub normal: Vec<MetricReport>,
    pub cold: Vec<MetricReport>,
    /// Closed-form expected Recall@M of a uniformly random ranking within
    /// the cold pool, averaged over the users in `cold`.
    pub random_cold_recall: Vec<(usize, f64)>,
    pub random_normal_recall: Vec<(usize, f64)>,
}

impl ColdStartReport {
    pub fn group(&self, cold: bool) -> &[MetricReport] {
        if cold {
            &self.cold
        } else {
            &self.normal
        }
    }

    pub fn mean(&self, cold: bool, metric: Metric, m: usize) -> Option<f64> {
        self.group(cold)
            .iter()
            .find(|r| r.metric == metric && r.m == m)
            .map(MetricReport::mean)
    }

    pub fn random_recall(&self, cold: bool, m: usize) -> Option<f64> {
        let table = if cold {
            &self.random_cold_recall
        } else {
            &self.random_normal_recall
        };
        table.iter().find(|&&(k, _)| k == m).map(|&(_, v)| v)
    }
}

/// Expected recall of a random ordering: `min(M, n)·h/n` expected hits out
/// of `min(M, h)` attainable.
pub fn random_recall(m: usize, pool: usize, relevant: usize) -> f64 {
    if pool == 0 || relevant == 0 {
        return 0.0;
    }
    let hits = m.min(pool) as f64 * relevant as f64 / pool as f64;
    hits / m.min(relevant) as f64
}

/// Ranks each user's held-out normal items among the normal candidates and
/// held-out cold items among the cold candidates. Users without held-out
/// items of a group are left out of that group's averages.
pub fn coldstart_eval(
    user: &UserVae,
    partition: &ColdPartition,
    pairs: &[FoldInPair],
    m_list: &[usize],
) -> Result<ColdStartReport> {
    if partition.is_cold.len() != user.num_items() {
        return Err(Error::dim(format!(
            "partition covers {} items, model has {}",
            partition.is_cold.len(),
            user.num_items()
        )));
    }
    let cold_pool = &partition.cold_item_ids;
    let normal_pool: Vec<usize> = (0..user.num_items())
        .filter(|&j| !partition.is_cold[j])
        .collect();
    let metrics: Vec<(Metric, usize)> = m_list
        .iter()
        .flat_map(|&m| [(Metric::Recall, m), (Metric::Ndcg, m)])
        .collect();

    let split_pairs = |cold: bool| -> Vec<FoldInPair> {
        pairs
            .iter()
            .map(|p| FoldInPair {
                user_id: p.user_id,
                input_items: p.input_items.clone(),
                holdout_items: p
                    .holdout_items
                    .iter()
                    .copied()
                    .filter(|&j| partition.is_cold[j] == cold)
                    .collect(),
            })
            .filter(|p| !p.excluded())
            .collect()
    };
    let random = |group: &[FoldInPair], pool: &[usize]| -> Vec<(usize, f64)> {
        m_list
            .iter()
            .map(|&m| {
                let vals: Vec<f64> = group
                    .iter()
                    .map(|p| {
                        let n = pool
                            .iter()
                            .filter(|j| p.input_items.binary_search(j).is_err())
                            .count();
                        random_recall(m, n, p.holdout_items.len())
                    })
                    .collect();
                (m, crate::eval::mean(&vals))
            })
            .collect()
    };

    let cold_pairs = split_pairs(true);
    let normal_pairs = split_pairs(false);
    Ok(ColdStartReport {
        cold: evaluate_pairs(user, &cold_pairs, &metrics, Some(cold_pool))?,
        normal: evaluate_pairs(user, &normal_pairs, &metrics, Some(&normal_pool))?,
        random_cold_recall: random(&cold_pairs, cold_pool),
        random_normal_recall: random(&normal_pairs, &normal_pool),
    })
}

/// Appends new items whose embeddings are the content encoder's posterior
/// means and whose biases are the mean existing bias. The base model is
/// left untouched; the first `J` rows of the result equal the base rows.
pub fn extend_items(model: &Model, features_new: &FeatureMatrix) -> Result<Model> {
    if model.mode() != Mode::Symmetric {
        return Err(extension_unsupported());
    }
    let item = model
        .item
        .as_ref()
        .ok_or_else(|| Error::config("extending the catalog needs the item-content VAE"))?;
    if features_new.num_items() == 0 {
        return Ok(model.clone());
    }
    if features_new.dim() != item.spec.s_dim {
        return Err(Error::dim(format!(
            "new features have {} columns, model expects {}",
            features_new.dim(),
            item.spec.s_dim
        )));
    }
    let v_new = item.content_means(features_new.values.view())?;
    let bias = model.user.item_bias.mean().unwrap_or(0.0);
    let biases = vec![bias; v_new.nrows()];
    let user = model.user.with_new_items(v_new.view(), &biases)?;
    Ok(Model {
        config: model.config.clone(),
        user,
        item: model.item.clone(),
    })
}

/// `‖V_j − μ_j‖²` per item for the model's current content means.
pub fn coupling_residuals(model: &Model, features: ArrayView2<f64>) -> Result<Vec<f64>> {
    let item = model
        .item
        .as_ref()
        .ok_or_else(|| Error::config("model has no item-content VAE"))?;
    let mu = item.content_means(features)?;
    if mu.dim() != model.user.item_emb.dim() {
        return Err(Error::dim("features do not cover the catalog"));
    }
    let residuals = (&model.user.item_emb - &mu).map_axis(Axis(1), |r| r.dot(&r));
    Ok(residuals.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;
    use ndarray::array;

    #[test]
    fn mask_then_sort() {
        let r = rank(array![9.0, 5.0, 7.0].view(), None, &[0], 5);
        assert_eq!(r.items, vec![2, 1]);
        assert!(r.truncated);
    }

    #[test]
    fn ties_by_ascending_id() {
        let r = rank(array![1.0, 1.0, 1.0, 2.0].view(), None, &[], 3);
        assert_eq!(r.items, vec![3, 0, 1]);
        assert!(!r.truncated);
    }

    #[test]
    fn permuting_catalog_permutes_ranking() {
        let mut rng = Rng::new(3);
        let scores: Vec<f64> = (0..12).map(|_| (rng.below(5)) as f64).collect();
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..12).collect();
            rng.shuffle(&mut p);
            p
        };
        // item j moves to position inv[j]
        let mut inv = vec![0; 12];
        perm.iter().enumerate().for_each(|(k, &j)| inv[j] = k);
        let permuted: Vec<f64> = perm.iter().map(|&j| scores[j]).collect();
        let a = rank(ndarray::ArrayView1::from(&scores), None, &[], 12);
        let b = rank(ndarray::ArrayView1::from(&permuted), None, &[], 12);
        let mapped: Vec<usize> = a.items.iter().map(|&j| inv[j]).collect();
        // equal-score groups may reorder; scores along the ranking agree
        assert_eq!(a.scores, b.scores);
        let mut x = mapped.clone();
        let mut y = b.items.clone();
        x.sort_unstable();
        y.sort_unstable();
        assert_eq!(x, y);
        // with distinct scores the mapping is exact
        let distinct: Vec<f64> = (0..12).map(|i| (i * 7 % 12) as f64).collect();
        let dp: Vec<f64> = perm.iter().map(|&j| distinct[j]).collect();
        let a = rank(ndarray::ArrayView1::from(&distinct), None, &[], 12);
        let b = rank(ndarray::ArrayView1::from(&dp), None, &[], 12);
        let mapped: Vec<usize> = a.items.iter().map(|&j| inv[j]).collect();
        assert_eq!(mapped, b.items);
    }

    fn toy_model(mode: Mode) -> Model {
        let cfg = TrainConfig {
            mode,
            k_u: 3,
            k_v: 4,
            ..Default::default()
        };
        Model::new(cfg, 10, Some(5), &mut Rng::new(2)).unwrap()
    }

    #[test]
    fn fold_in_matches_encoder_mean_and_is_repeatable() {
        let model = toy_model(Mode::Normal);
        let rows: Vec<&[usize]> = vec![&[1, 4], &[]];
        let a = fold_in(&model.user, &rows).unwrap();
        let post = model.user.encode_users(&rows, 0.0, &mut Rng::new(99)).unwrap();
        assert_eq!(a, post.mu);
        assert_eq!(a, fold_in(&model.user, &rows).unwrap());
    }

    #[test]
    fn recommendations_never_contain_history() {
        let model = toy_model(Mode::Normal);
        let r = recommend(&model.user, &[3, 1, 3, 7], 10).unwrap();
        assert_eq!(r.items.len(), 7);
        assert!(r.truncated);
        assert!(r.items.iter().all(|j| ![1, 3, 7].contains(j)));
        assert!(recommend(&model.user, &[1], 0).is_err());
    }

    #[test]
    fn extension_keeps_old_rows_and_logits() {
        let model = toy_model(Mode::Symmetric);
        let feats = FeatureMatrix::new(array![[0.1, 0.2, 0.3, 0.4, 0.5]]).unwrap();
        let ext = extend_items(&model, &feats).unwrap();
        assert_eq!(ext.num_items(), 11);
        assert_eq!(
            ext.user.item_emb.slice(ndarray::s![..10, ..]),
            model.user.item_emb
        );
        let rows: Vec<&[usize]> = vec![&[0, 2, 9]];
        let before = score_users(&model.user, &rows).unwrap();
        let after = score_users(&ext.user, &rows).unwrap();
        assert_eq!(after.slice(ndarray::s![.., ..10]), before);
        let empty = FeatureMatrix::new(Array2::zeros((0, 5))).unwrap();
        assert_eq!(extend_items(&model, &empty).unwrap().num_items(), 10);
    }

    #[test]
    fn normal_mode_extension_is_unsupported() {
        let model = toy_model(Mode::Normal);
        let feats = FeatureMatrix::new(array![[0.1, 0.2, 0.3, 0.4, 0.5]]).unwrap();
        let err = extend_items(&model, &feats).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn random_recall_closed_form() {
        assert_eq!(random_recall(20, 100, 2), 0.2);
        assert_eq!(random_recall(20, 10, 2), 1.0);
        assert_eq!(random_recall(1, 4, 2), 0.5);
    }

    #[test]
    fn empty_cold_holdout_excludes_user() {
        let model = toy_model(Mode::Symmetric);
        let mut is_cold = vec![false; 10];
        is_cold[8] = true;
        is_cold[9] = true;
        let partition = ColdPartition {
            cold_item_ids: vec![8, 9],
            is_cold,
            train_matrix: crate::data::RatingMatrix::from_pairs(1, 10, &[(0, 1)]),
            removed_pairs: vec![],
        };
        let pairs = vec![
            FoldInPair {
                user_id: 0,
                input_items: vec![1, 2],
                holdout_items: vec![3],
            },
            FoldInPair {
                user_id: 1,
                input_items: vec![1],
                holdout_items: vec![4, 9],
            },
        ];
        let rep = coldstart_eval(&model.user, &partition, &pairs, &[1]).unwrap();
        assert_eq!(rep.cold[0].count(), 1);
        assert_eq!(rep.normal[0].count(), 2);
        // the cold pool has two candidates and one relevant item
        assert_eq!(rep.random_recall(true, 1), Some(0.5));
    }
}
