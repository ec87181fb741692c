//! Alternating optimization of the user VAE and the item-content VAE, with
//! per-epoch validation, model selection, checkpoints and grid sweeps.
//!
//! Each epoch runs, in this order: refresh the content means `Ẑ`, one pass
//! of user-side steps over the shuffled training users (with `Ẑ` fixed),
//! snapshot `V̂ = V`, then one pass of content-side steps over the shuffled
//! catalog (with `V̂` fixed).

pub mod checkpoint;
pub mod config;
pub mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use sweep::{sweep, SweepRow};

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::data::{FeatureMatrix, FoldInPair, RatingMatrix};
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::item_vae::{pretrain_layerwise, TStepHyper, TStepTerms};
use crate::model::Model;
use crate::nn::{Adam, Rng, Tensors};
use crate::predictor::evaluate_pairs;
use crate::user_vae::{BStepHyper, BStepTerms, UserVae};

/// RNG stream offsets under the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_USER: u64 = 3;
const STREAM_ITEM: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;

/// Inputs of one training run. `ratings` holds a row for every user; only
/// `train_users` rows are fitted.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub ratings: &'a RatingMatrix,
    pub train_users: &'a [usize],
    pub features: Option<&'a FeatureMatrix>,
    pub validation: &'a [FoldInPair],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationScores {
    pub recall_20: f64,
    pub recall_40: f64,
    pub ndcg_100: f64,
    /// Mean of the three; the model-selection criterion.
    pub score: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// β at the last user-side step of the epoch.
    pub beta: f64,
    pub user: BStepTerms,
    pub item: TStepTerms,
    /// Joint objective estimate: user-side objective plus the content
    /// likelihood, content KL and content weight decay. The coupling is
    /// counted once, from the user side.
    pub map_objective: f64,
    pub validation: Option<ValidationScores>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation snapshot when selection is on, else the last model.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of `model`; `None` for an untrained model.
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a non-finite value; `model` is then the
    /// last finite state.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    pub fn history_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|r| serde_json::to_string(r).expect("history serializes") + "\n")
            .collect()
    }
}

/// Validation metrics on fold-in pairs; `None` when no pair has a holdout.
pub fn validation_scores(user: &UserVae, pairs: &[FoldInPair]) -> Result<Option<ValidationScores>> {
    let metrics = [(Metric::Recall, 20), (Metric::Recall, 40), (Metric::Ndcg, 100)];
    let reports = evaluate_pairs(user, pairs, &metrics, None)?;
    let n_users = reports[0].count();
    if n_users == 0 {
        return Ok(None);
    }
    let (r20, r40, n100) = (reports[0].mean(), reports[1].mean(), reports[2].mean());
    Ok(Some(ValidationScores {
        recall_20: r20,
        recall_40: r40,
        ndcg_100: n100,
        score: (r20 + r40 + n100) / 3.0,
        n_users,
    }))
}

/// Index of the highest score; ties go to the earliest.
pub fn validate_select(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn non_finite(what: &'static str, epoch: usize, value: f64) -> Error {
    Error::NonFinite {
        what,
        detail: format!("epoch {epoch}: {value}"),
    }
}

pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let n_items = data.ratings.num_cols();
    let features = match (config.use_content, data.features) {
        (true, Some(f)) => {
            f.check_items(n_items)?;
            config.likelihood().validate_features(f.values.view())?;
            Some(f)
        }
        (true, None) => return Err(Error::config("use_content = true needs item features")),
        (false, _) => None,
    };
    if let Some(&u) = data.train_users.iter().find(|&&u| u >= data.ratings.num_rows()) {
        return Err(Error::dim(format!("training user {u} has no rating row")));
    }

    let seed = config.seed;
    let mut model = Model::new(
        config.clone(),
        n_items,
        features.map(|f| f.dim()),
        &mut Rng::derive(seed, STREAM_INIT),
    )?;
    if let (Some(item), Some(f)) = (model.item.as_mut(), features) {
        *item = pretrain_layerwise(
            f.values.view(),
            &item.spec,
            &config.pretrain(),
            &mut Rng::derive(seed, STREAM_PRETRAIN),
        )?;
    }
    let mut outcome = TrainOutcome {
        model: model.clone(),
        history: Vec::new(),
        best_epoch: None,
        aborted: None,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    if data.train_users.is_empty() {
        return Err(Error::config("no training users"));
    }

    let n_train = data.train_users.len();
    let batches = n_train.div_ceil(config.batch_users) as u64;
    let schedule = config.beta_schedule(batches * config.epochs as u64);
    let mut user_rng = Rng::derive(seed, STREAM_USER);
    let mut item_rng = Rng::derive(seed, STREAM_ITEM);
    let mut shuffle_rng = Rng::derive(seed, STREAM_SHUFFLE);
    let mut user_opt = Adam::new(config.learning_rate);
    let mut item_opt = Adam::new(config.learning_rate);
    let mut users = data.train_users.to_vec();
    let mut items: Vec<usize> = (0..n_items).collect();
    let mut step = 0u64;
    let mut best_score = f64::NEG_INFINITY;

    'epochs: for epoch in 1..=config.epochs {
        let z_hat: Option<Array2<f64>> = match (&model.item, features) {
            (Some(item), Some(f)) => Some(item.content_means(f.values.view())?),
            _ => None,
        };

        let mut user_terms = BStepTerms::default();
        let mut beta = 0.0;
        shuffle_rng.shuffle(&mut users);
        for chunk in users.chunks(config.batch_users) {
            beta = schedule.beta(step);
            let rows: Vec<&[usize]> = chunk.iter().map(|&u| data.ratings.row(u)).collect();
            let hp = BStepHyper {
                lambda_v: config.lambda_v,
                lambda_w: config.lambda_w,
                beta,
                batch_fraction: chunk.len() as f64 / n_train as f64,
                dropout: config.dropout,
            };
            let (terms, mut grads) =
                model.user.b_step(&rows, z_hat.as_ref().map(|z| z.view()), &hp, &mut user_rng)?;
            if !terms.objective().is_finite() {
                outcome.aborted = Some(non_finite("user objective", epoch, terms.objective()).to_string());
                break 'epochs;
            }
            grads.scale(-1.0);
            if let Err(e) = user_opt.step(&mut model.user, &grads) {
                outcome.aborted = Some(e.to_string());
                break 'epochs;
            }
            user_terms.accumulate(&terms);
            step += 1;
        }

        let mut item_terms = TStepTerms::default();
        if let (Some(item), Some(f)) = (model.item.as_mut(), features) {
            let v_hat = model.user.item_emb.clone();
            shuffle_rng.shuffle(&mut items);
            for chunk in items.chunks(config.batch_items) {
                let x = f.values.select(Axis(0), chunk);
                let v = v_hat.select(Axis(0), chunk);
                let hp = TStepHyper {
                    lambda_v: config.lambda_v,
                    lambda_w: config.lambda_w,
                    batch_fraction: chunk.len() as f64 / n_items as f64,
                };
                let (terms, mut grads) = item.t_step(x.view(), v.view(), &hp, &mut item_rng)?;
                if !terms.objective().is_finite() {
                    outcome.aborted =
                        Some(non_finite("content objective", epoch, terms.objective()).to_string());
                    break 'epochs;
                }
                grads.scale(-1.0);
                if let Err(e) = item_opt.step(item, &grads) {
                    outcome.aborted = Some(e.to_string());
                    break 'epochs;
                }
                item_terms.accumulate(&terms);
            }
        }

        let validation = validation_scores(&model.user, data.validation)?;
        outcome.history.push(EpochRecord {
            epoch,
            beta,
            user: user_terms,
            item: item_terms,
            map_objective: user_terms.objective() + item_terms.content_ll
                - item_terms.kl
                - item_terms.weight_decay,
            validation,
        });
        log::info!(
            "epoch {epoch}: objective {:.4}, validation {}",
            outcome.history.last().unwrap().map_objective,
            validation.map_or("n/a".to_string(), |v| format!("{:.4}", v.score))
        );
        match validation {
            Some(v) if config.select_best => {
                if v.score > best_score {
                    best_score = v.score;
                    outcome.model = model.clone();
                    outcome.best_epoch = Some(epoch);
                }
            }
            _ => {
                outcome.model = model.clone();
                outcome.best_epoch = Some(epoch);
            }
        }
    }
    if outcome.aborted.is_some() && outcome.best_epoch.is_none() {
        outcome.model = model;
    }
    Ok(outcome)
}
