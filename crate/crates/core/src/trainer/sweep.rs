use serde::Serialize;

use super::{train, TrainConfig, TrainData};
use crate::error::{Error, Result};

/// One grid point: `k` sets both latent widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda_v: f64,
    pub k: usize,
    pub best_epoch: Option<usize>,
    pub recall_20: f64,
    pub recall_40: f64,
    pub ndcg_100: f64,
    pub score: f64,
}

/// Trains and validates every `(λ_v, k)` combination, λ_v varying fastest.
pub fn sweep(
    base: &TrainConfig,
    lambdas: &[f64],
    widths: &[usize],
    data: &TrainData<'_>,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() || widths.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    let mut rows = Vec::with_capacity(lambdas.len() * widths.len());
    for &k in widths {
        for &lambda_v in lambdas {
            let cfg = TrainConfig {
                lambda_v,
                k_u: k,
                k_v: k,
                ..base.clone()
            };
            let out = train(&cfg, data)?;
            let val = out
                .best_epoch
                .and_then(|e| out.history.get(e - 1))
                .and_then(|r| r.validation);
            rows.push(SweepRow {
                lambda_v,
                k,
                best_epoch: out.best_epoch,
                recall_20: val.map_or(0.0, |v| v.recall_20),
                recall_40: val.map_or(0.0, |v| v.recall_40),
                ndcg_100: val.map_or(0.0, |v| v.ndcg_100),
                score: val.map_or(0.0, |v| v.score),
            });
        }
    }
    Ok(rows)
}

/// Row with the best validation score; ties go to the earliest row.
pub fn best_row(rows: &[SweepRow]) -> Option<&SweepRow> {
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    super::validate_select(&scores).map(|i| &rows[i])
}
