use serde::Serialize;

use super::matrix::RatingMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongTailStats {
    pub per_item_counts: Vec<usize>,
    /// `(q, count)` with `q` in percent, nearest-rank on ascending counts.
    pub percentiles: Vec<(f64, usize)>,
    pub density: f64,
}

impl LongTailStats {
    pub fn mean_count(&self) -> f64 {
        let n = self.per_item_counts.len().max(1);
        self.per_item_counts.iter().sum::<usize>() as f64 / n as f64
    }

    pub fn median_count(&self) -> usize {
        nearest_rank(&sorted(&self.per_item_counts), 50.0)
    }
}

fn sorted(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v
}

fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn density_stats(mat: &RatingMatrix, quantiles: &[f64]) -> LongTailStats {
    let per_item_counts = mat.column_counts();
    let s = sorted(&per_item_counts);
    let percentiles = quantiles.iter().map(|&q| (q, nearest_rank(&s, q))).collect();
    let cells = mat.num_rows() as f64 * mat.num_cols() as f64;
    LongTailStats {
        per_item_counts,
        percentiles,
        density: if cells > 0.0 { mat.nnz() as f64 / cells } else { 0.0 },
    }
}
