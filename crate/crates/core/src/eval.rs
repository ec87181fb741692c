//! Top-M ranking metrics, their aggregation over users and splits, and the
//! JSONL metric record.

use serde::Serialize;
use serde_json::Value;

/// `|top-M ∩ holdout| / min(M, |holdout|)`; `holdout` must be non-empty.
pub fn recall_at_m(ranking: &[usize], holdout: &[usize], m: usize) -> f64 {
    debug_assert!(!holdout.is_empty());
    let hits = ranking
        .iter()
        .take(m)
        .filter(|j| holdout.contains(j))
        .count();
    hits as f64 / m.min(holdout.len()) as f64
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).ln()
}

/// DCG@M over binary relevance with a natural-log discount, normalized by
/// the ideal DCG of `min(M, |holdout|)` hits at the top.
pub fn ndcg_at_m(ranking: &[usize], holdout: &[usize], m: usize) -> f64 {
    debug_assert!(!holdout.is_empty());
    let dcg: f64 = ranking
        .iter()
        .take(m)
        .enumerate()
        .filter(|(_, j)| holdout.contains(j))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=m.min(holdout.len())).map(discount).sum();
    dcg / ideal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn eval(self, ranking: &[usize], holdout: &[usize], m: usize) -> f64 {
        match self {
            Metric::Recall => recall_at_m(ranking, holdout, m),
            Metric::Ndcg => ndcg_at_m(ranking, holdout, m),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }
}

/// Per-user values of one metric at one cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: Metric,
    pub m: usize,
    pub values: Vec<f64>,
}

impl MetricReport {
    pub fn new(metric: Metric, m: usize) -> Self {
        Self {
            metric,
            m,
            values: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Arithmetic mean over included users; 0 when there are none.
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Means of one metric across splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub per_split: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(reports: &[MetricReport]) -> SplitSummary {
    let per_split: Vec<f64> = reports.iter().map(MetricReport::mean).collect();
    SplitSummary {
        mean: mean(&per_split),
        std: sample_std(&per_split),
        per_split,
    }
}

/// One line of metric output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricLine {
    /// Split index, or `"mean"` for the cross-split summary.
    pub split: Value,
    pub metric: Metric,
    #[serde(rename = "M")]
    pub m: usize,
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub n_users: usize,
}

impl MetricLine {
    /// Per-split line; `std` is the spread over users.
    pub fn for_split(split: usize, group: &str, report: &MetricReport) -> Self {
        Self {
            split: Value::from(split),
            metric: report.metric,
            m: report.m,
            group: group.to_string(),
            mean: report.mean(),
            std: sample_std(&report.values),
            n_users: report.count(),
        }
    }

    /// Cross-split line; `std` is the spread of the split means.
    pub fn summary(group: &str, reports: &[MetricReport]) -> Self {
        let s = aggregate(reports);
        Self {
            split: Value::from("mean"),
            metric: reports.first().map_or(Metric::Recall, |r| r.metric),
            m: reports.first().map_or(0, |r| r.m),
            group: group.to_string(),
            mean: s.mean,
            std: s.std,
            n_users: reports.iter().map(MetricReport::count).sum(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric line serializes")
    }
}

pub fn to_jsonl(lines: &[MetricLine]) -> String {
    lines.iter().map(|l| l.to_json() + "\n").collect()
}
