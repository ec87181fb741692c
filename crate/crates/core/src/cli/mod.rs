//! Command-line front end. Every command reads its settings from an
//! optional run file, applies flag overrides on top, and writes its outputs
//! atomically under `--out`.

pub mod config;
pub mod gradcheck;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::RunConfig;

use crate::data::{
    cold_fold_in_pairs, density_stats, fold_in_pairs, gen_synthetic, load_features,
    load_interactions, mark_cold_items, split_users, write_atomic, write_interactions,
    ColdPartition, FeatureMatrix, FoldInPair, IdMap, LoadedInteractions, RatingMatrix,
    SyntheticConfig, UserSplit,
};
use crate::error::{Error, Result};
use crate::eval::{to_jsonl, Metric, MetricLine, MetricReport};
use crate::model::Model;
use crate::nn::derive_seed;
use crate::predictor::{coldstart_eval, evaluate_pairs, extend_items, recommend, ColdStartReport};
use crate::trainer::{self, load_checkpoint, save_checkpoint, TrainData, TrainOutcome};
use crate::user_vae::Mode;

/// Seed streams under the run seed, offset by the split index.
const STREAM_SPLIT: u64 = 100;
const STREAM_VALIDATION: u64 = 200;
const STREAM_TEST: u64 = 300;
const STREAM_COLD: u64 = 400;

#[derive(Debug, Parser)]
#[command(
    name = "mdcvae",
    version,
    about = "Hybrid VAE recommender with content-regularized item embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load interactions, report long-tail statistics and write the user splits
    Prepare(RunArgs),
    /// Generate a clustered synthetic dataset
    Synth(SynthArgs),
    /// Train on the first split; writes the checkpoint and per-epoch history
    Train(RunArgs),
    /// Recall and NDCG on test users, averaged over splits
    Eval(EvalArgs),
    /// Validation metrics over a lambda_v by latent-width grid
    Sweep(SweepArgs),
    /// Offline cold-start protocol: hide items, train, rank per group
    Coldstart(ColdArgs),
    /// Append new items to a symmetric model from their content alone
    AddItems(AddItemsArgs),
    /// Top-M unseen items for the users of a history file
    Recommend(RecommendArgs),
    /// Finite-difference checks of every gradient on toy shapes
    Gradcheck(GradcheckArgs),
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Run file of `key = value` lines [default: none, built-in defaults]
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Interactions, one `user<TAB>item` per line [default: `interactions` key]
    #[arg(long, value_name = "PATH")]
    interactions: Option<PathBuf>,
    /// Item features, `J S` header then dense rows or `j s value` triplets [default: `features` key]
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,
    /// Seed of every random stream [default: `seed` key, else 0]
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Item embedding tying [default: `mode` key, else normal]
    #[arg(long, value_name = "normal|symmetric", value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Coupling precision between item embeddings and content means [default: `lambda_v` key, else 1]
    #[arg(long, value_name = "F")]
    lambda_v: Option<f64>,
    /// Training epochs [default: `epochs` key, else 100]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Users per training batch [default: `batch_users` key, else 500]
    #[arg(long, value_name = "N")]
    batch_users: Option<usize>,
    /// Ranking cutoffs [default: `m_list` key, else 20,40,100]
    #[arg(long, value_name = "LIST")]
    m_list: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct SynthArgs {
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "N", default_value_t = 300)]
    users: usize,
    #[arg(long, value_name = "N", default_value_t = 200)]
    items: usize,
    #[arg(long, value_name = "N", default_value_t = 5)]
    clusters: usize,
    /// Feature dimension
    #[arg(long, value_name = "N", default_value_t = 20)]
    s_dim: usize,
    /// In-cluster interaction probability of an average-popularity item
    #[arg(long, value_name = "F", default_value_t = 0.2)]
    sparsity: f64,
    /// Relative out-of-cluster interaction probability
    #[arg(long, value_name = "F", default_value_t = 0.1)]
    noise: f64,
    /// Standard deviation of the feature noise
    #[arg(long, value_name = "F", default_value_t = 0.1)]
    feature_noise: f64,
    /// Exponent of the within-cluster popularity law
    #[arg(long, value_name = "F", default_value_t = 1.0)]
    zipf_exponent: f64,
}

#[derive(Debug, Clone, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Evaluate this model on the first split instead of training per split [default: none]
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Coupling precisions to try
    #[arg(long, value_name = "LIST", default_value = "0.1,1,2,5,10")]
    lambdas: String,
    /// Latent widths to try; each sets both k_u and k_v
    #[arg(long, value_name = "LIST", default_value = "50,100,200")]
    widths: String,
}

#[derive(Debug, Clone, Args)]
struct ColdArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Items hidden from training [default: `n_cold` key, else 10% of the catalog]
    #[arg(long, value_name = "N")]
    n_cold: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct AddItemsArgs {
    /// Symmetric-mode checkpoint to extend
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Features of the new items, rows in the order the items are appended
    #[arg(long, value_name = "PATH")]
    new_features: PathBuf,
    /// Optional `user<TAB>item` pairs in internal ids of the extended catalog,
    /// used to re-evaluate with new items as the cold group [default: none]
    #[arg(long, value_name = "PATH")]
    interactions: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Seed of the fold-in holdout draw
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    /// Ranking cutoffs
    #[arg(long, value_name = "LIST", default_value = "20,40,100")]
    m_list: String,
}

#[derive(Debug, Clone, Args)]
struct RecommendArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// `user<TAB>item` history lines in external ids
    #[arg(long, value_name = "PATH")]
    history: PathBuf,
    /// Item id map written by `train` [default: items.txt beside the checkpoint, else identity]
    #[arg(long, value_name = "PATH")]
    items: Option<PathBuf>,
    /// Recommendations per user
    #[arg(long, value_name = "M", default_value_t = 20)]
    top: usize,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct GradcheckArgs {
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
    /// Also write gradcheck.json here [default: none]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs one command. Returns the
/// process exit code: 0 success, 1 usage, 2 data, 3 numerical failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Coldstart(a) => coldstart_cmd(&a),
        Command::AddItems(a) => add_items(&a),
        Command::Recommend(a) => recommend_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    }
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.interactions {
        rc.interactions = Some(p.clone());
    }
    if let Some(p) = &a.features {
        rc.features = Some(p.clone());
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(m) = a.mode {
        rc.train.mode = m;
    }
    if let Some(l) = a.lambda_v {
        rc.train.lambda_v = l;
    }
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    if let Some(b) = a.batch_users {
        rc.train.batch_users = b;
    }
    if let Some(m) = &a.m_list {
        rc.m_list = config::parse_usize_list("m-list", m)?;
    }
    rc.validate()?;
    Ok(rc)
}

struct Dataset {
    loaded: LoadedInteractions,
    matrix: RatingMatrix,
    features: Option<FeatureMatrix>,
}

fn load_dataset(rc: &RunConfig) -> Result<Dataset> {
    let path = rc.interactions.as_ref().ok_or_else(|| {
        Error::Usage("no interaction file; pass --interactions or set the interactions key".into())
    })?;
    let loaded = load_interactions(path)?;
    if loaded.duplicates > 0 {
        log::warn!("dropped {} duplicate interactions", loaded.duplicates);
    }
    let features = match (&rc.features, rc.train.use_content) {
        (Some(p), true) => Some(load_features(p)?.reindex(&loaded.items)?),
        (None, true) => {
            return Err(Error::Usage(
                "content is enabled but no feature file was given; pass --features or set use_content = false"
                    .into(),
            ))
        }
        (_, false) => None,
    };
    let matrix = loaded.set.to_matrix();
    log::info!(
        "{} users, {} items, {} interactions",
        matrix.num_rows(),
        matrix.num_cols(),
        matrix.nnz()
    );
    Ok(Dataset {
        loaded,
        matrix,
        features,
    })
}

fn user_split(rc: &RunConfig, n_users: usize, k: usize) -> Result<UserSplit> {
    split_users(
        n_users,
        rc.split_ratios,
        derive_seed(rc.train.seed, STREAM_SPLIT + k as u64),
    )
}

fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn metric_list(m_list: &[usize]) -> Vec<(Metric, usize)> {
    let mut v: Vec<(Metric, usize)> = m_list.iter().map(|&m| (Metric::Recall, m)).collect();
    v.extend(m_list.iter().map(|&m| (Metric::Ndcg, m)));
    v
}

/// Per-split lines followed by one cross-split line per metric.
fn metric_lines(group: &str, per_split: &[Vec<MetricReport>]) -> Vec<MetricLine> {
    let mut lines = Vec::new();
    for (k, reports) in per_split.iter().enumerate() {
        lines.extend(reports.iter().map(|r| MetricLine::for_split(k, group, r)));
    }
    if let Some(first) = per_split.first() {
        for i in 0..first.len() {
            let column: Vec<MetricReport> = per_split.iter().map(|s| s[i].clone()).collect();
            lines.push(MetricLine::summary(group, &column));
        }
    }
    lines
}

fn print_summary(lines: &[MetricLine]) {
    for l in lines.iter().filter(|l| l.split == "mean") {
        println!(
            "{:<6} {}@{:<4} {:.4} ± {:.4} ({} users)",
            l.group,
            l.metric.name(),
            l.m,
            l.mean,
            l.std,
            l.n_users
        );
    }
}

/// Writes the checkpoint either way, then turns an aborted run into an error.
fn finish_training(outcome: &TrainOutcome, out: &Path) -> Result<()> {
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    write_atomic(&out.join("history.jsonl"), outcome.history_jsonl().as_bytes())?;
    match &outcome.aborted {
        Some(msg) => Err(Error::NonFinite {
            what: "training objective",
            detail: msg.clone(),
        }),
        None => Ok(()),
    }
}

fn prepare(a: &RunArgs) -> Result<()> {
    let rc = run_config(a)?;
    let ds = load_dataset(&rc)?;
    ensure_out(&a.out)?;
    let stats = density_stats(&ds.matrix, &[10.0, 25.0, 50.0, 75.0, 90.0, 99.0]);
    let users = &ds.loaded.users;
    let splits = (0..rc.n_splits)
        .map(|k| {
            let s = user_split(&rc, ds.matrix.num_rows(), k)?;
            let ext = |ids: &[usize]| ids.iter().map(|&u| users.external(u)).collect::<Vec<_>>();
            Ok(json!({
                "split": k,
                "seed": s.seed,
                "train_users": ext(&s.train_users),
                "val_users": ext(&s.val_users),
                "test_users": ext(&s.test_users),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = json!({
        "n_users": ds.matrix.num_rows(),
        "n_items": ds.matrix.num_cols(),
        "n_interactions": ds.matrix.nnz(),
        "duplicates_dropped": ds.loaded.duplicates,
        "density": stats.density,
        "item_count_mean": stats.mean_count(),
        "item_count_percentiles": stats.percentiles,
        "feature_dim": ds.features.as_ref().map(|f| f.dim()),
        "split_ratios": [rc.split_ratios.0, rc.split_ratios.1, rc.split_ratios.2],
        "splits": splits,
    });
    write_atomic(
        &a.out.join("manifest.json"),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )?;
    write_interactions(&ds.loaded.set, &a.out.join("interactions.tsv"))?;
    ds.loaded.users.write(&a.out.join("users.txt"))?;
    ds.loaded.items.write(&a.out.join("items.txt"))?;
    write_atomic(&a.out.join("run.conf"), rc.to_text().as_bytes())?;
    println!(
        "{} users, {} items, density {:.5}, median item count {}",
        ds.matrix.num_rows(),
        ds.matrix.num_cols(),
        stats.density,
        stats.median_count()
    );
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let data = gen_synthetic(&SyntheticConfig {
        n_users: a.users,
        n_items: a.items,
        n_clusters: a.clusters,
        s_dim: a.s_dim,
        sparsity: a.sparsity,
        noise: a.noise,
        feature_noise: a.feature_noise,
        zipf_exponent: a.zipf_exponent,
        seed: a.seed,
    })?;
    ensure_out(&a.out)?;
    write_interactions(&data.interactions, &a.out.join("interactions.tsv"))?;
    data.features.write_dense(&a.out.join("features.txt"))?;
    let clusters: String = data
        .item_clusters
        .iter()
        .enumerate()
        .map(|(j, c)| format!("{j}\t{c}\n"))
        .collect();
    write_atomic(&a.out.join("item_clusters.tsv"), clusters.as_bytes())?;
    println!(
        "{} users, {} items, {} interactions",
        a.users,
        a.items,
        data.interactions.len()
    );
    Ok(())
}

fn train_split(rc: &RunConfig, ds: &Dataset, k: usize) -> Result<(TrainOutcome, UserSplit)> {
    let split = user_split(rc, ds.matrix.num_rows(), k)?;
    let seed = rc.train.seed;
    let fraction = rc.train.holdout_fraction;
    let validation = fold_in_pairs(
        &ds.matrix,
        &split.val_users,
        fraction,
        derive_seed(seed, STREAM_VALIDATION + k as u64),
    );
    let outcome = trainer::train(
        &rc.train,
        &TrainData {
            ratings: &ds.matrix,
            train_users: &split.train_users,
            features: ds.features.as_ref(),
            validation: &validation,
        },
    )?;
    Ok((outcome, split))
}

fn test_pairs(rc: &RunConfig, ds: &Dataset, split: &UserSplit, k: usize) -> Vec<FoldInPair> {
    fold_in_pairs(
        &ds.matrix,
        &split.test_users,
        rc.train.holdout_fraction,
        derive_seed(rc.train.seed, STREAM_TEST + k as u64),
    )
}

fn train_cmd(a: &RunArgs) -> Result<()> {
    let rc = run_config(a)?;
    let ds = load_dataset(&rc)?;
    ensure_out(&a.out)?;
    let (outcome, _) = train_split(&rc, &ds, 0)?;
    write_atomic(&a.out.join("run.conf"), rc.to_text().as_bytes())?;
    ds.loaded.items.write(&a.out.join("items.txt"))?;
    finish_training(&outcome, &a.out)?;
    match outcome.best_epoch {
        Some(e) => println!("kept epoch {e} of {}", outcome.history.len()),
        None => println!("no training epochs; saved the initialized model"),
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let rc = run_config(&a.run)?;
    let ds = load_dataset(&rc)?;
    ensure_out(&a.run.out)?;
    let metrics = metric_list(&rc.m_list);
    let mut per_split = Vec::new();
    match &a.checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            check_catalog(&model, ds.matrix.num_cols())?;
            let split = user_split(&rc, ds.matrix.num_rows(), 0)?;
            let pairs = test_pairs(&rc, &ds, &split, 0);
            per_split.push(evaluate_pairs(&model.user, &pairs, &metrics, None)?);
        }
        None => {
            for k in 0..rc.n_splits {
                let (outcome, split) = train_split(&rc, &ds, k)?;
                if let Some(msg) = &outcome.aborted {
                    return Err(Error::NonFinite {
                        what: "training objective",
                        detail: format!("split {k}: {msg}"),
                    });
                }
                let pairs = test_pairs(&rc, &ds, &split, k);
                per_split.push(evaluate_pairs(&outcome.model.user, &pairs, &metrics, None)?);
            }
        }
    }
    let lines = metric_lines("all", &per_split);
    write_atomic(&a.run.out.join("metrics.jsonl"), to_jsonl(&lines).as_bytes())?;
    print_summary(&lines);
    Ok(())
}

fn check_catalog(model: &Model, n_items: usize) -> Result<()> {
    if model.num_items() != n_items {
        return Err(Error::Dimension(format!(
            "checkpoint covers {} items, data has {n_items}",
            model.num_items()
        )));
    }
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let rc = run_config(&a.run)?;
    let lambdas = config::parse_f64_list("lambdas", &a.lambdas)?;
    let widths = config::parse_usize_list("widths", &a.widths)?;
    let ds = load_dataset(&rc)?;
    ensure_out(&a.run.out)?;
    let split = user_split(&rc, ds.matrix.num_rows(), 0)?;
    let validation = fold_in_pairs(
        &ds.matrix,
        &split.val_users,
        rc.train.holdout_fraction,
        derive_seed(rc.train.seed, STREAM_VALIDATION),
    );
    let rows = trainer::sweep(
        &rc.train,
        &lambdas,
        &widths,
        &TrainData {
            ratings: &ds.matrix,
            train_users: &split.train_users,
            features: ds.features.as_ref(),
            validation: &validation,
        },
    )?;
    let mut csv = String::from("lambda_v,k,best_epoch,recall_20,recall_40,ndcg_100,score\n");
    let mut jsonl = String::new();
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.lambda_v,
            r.k,
            r.best_epoch.map_or(String::new(), |e| e.to_string()),
            r.recall_20,
            r.recall_40,
            r.ndcg_100,
            r.score
        ));
        jsonl.push_str(&(serde_json::to_string(r)? + "\n"));
    }
    write_atomic(&a.run.out.join("sweep.csv"), csv.as_bytes())?;
    write_atomic(&a.run.out.join("sweep.jsonl"), jsonl.as_bytes())?;
    print!("{csv}");
    if let Some(best) = trainer::sweep::best_row(&rows) {
        println!("best: lambda_v = {}, k = {}", best.lambda_v, best.k);
    }
    Ok(())
}

fn cold_report_lines(reports: &[ColdStartReport]) -> Vec<MetricLine> {
    let normal: Vec<Vec<MetricReport>> = reports.iter().map(|r| r.normal.clone()).collect();
    let cold: Vec<Vec<MetricReport>> = reports.iter().map(|r| r.cold.clone()).collect();
    let mut lines = metric_lines("normal", &normal);
    lines.extend(metric_lines("cold", &cold));
    lines
}

fn coldstart_cmd(a: &ColdArgs) -> Result<()> {
    let mut rc = run_config(&a.run)?;
    if let Some(n) = a.n_cold {
        rc.n_cold = Some(n);
    }
    let ds = load_dataset(&rc)?;
    ensure_out(&a.run.out)?;
    let n_items = ds.matrix.num_cols();
    let n_cold = rc.n_cold.unwrap_or(n_items / 10);
    let seed = rc.train.seed;
    let fraction = rc.train.holdout_fraction;

    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for k in 0..rc.n_splits {
        let partition =
            mark_cold_items(&ds.loaded.set, n_cold, derive_seed(seed, STREAM_COLD + k as u64))?;
        let split = user_split(&rc, ds.matrix.num_rows(), k)?;
        let validation = fold_in_pairs(
            &partition.train_matrix,
            &split.val_users,
            fraction,
            derive_seed(seed, STREAM_VALIDATION + k as u64),
        );
        let test = cold_fold_in_pairs(
            &ds.matrix,
            &partition,
            &split.test_users,
            fraction,
            derive_seed(seed, STREAM_TEST + k as u64),
        );
        let outcome = trainer::train(
            &rc.train,
            &TrainData {
                ratings: &partition.train_matrix,
                train_users: &split.train_users,
                features: ds.features.as_ref(),
                validation: &validation,
            },
        )?;
        if k == 0 {
            finish_training(&outcome, &a.run.out)?;
        } else if let Some(msg) = &outcome.aborted {
            return Err(Error::NonFinite {
                what: "training objective",
                detail: format!("split {k}: {msg}"),
            });
        }
        let report = coldstart_eval(&outcome.model.user, &partition, &test, &rc.m_list)?;
        summary.push(json!({
            "split": k,
            "best_epoch": outcome.best_epoch,
            "cold_items": partition
                .cold_item_ids
                .iter()
                .map(|&j| ds.loaded.items.external(j))
                .collect::<Vec<_>>(),
            "random_cold_recall": report.random_cold_recall,
            "random_normal_recall": report.random_normal_recall,
        }));
        reports.push(report);
    }
    let lines = cold_report_lines(&reports);
    write_atomic(&a.run.out.join("metrics.jsonl"), to_jsonl(&lines).as_bytes())?;
    write_atomic(
        &a.run.out.join("coldstart.json"),
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    write_atomic(&a.run.out.join("run.conf"), rc.to_text().as_bytes())?;
    ds.loaded.items.write(&a.run.out.join("items.txt"))?;
    print_summary(&lines);
    for &m in &rc.m_list {
        let random: Vec<f64> = reports.iter().filter_map(|r| r.random_recall(true, m)).collect();
        println!("random cold recall@{m} {:.4}", crate::eval::mean(&random));
    }
    Ok(())
}

/// `user<TAB>item` lines as raw integers, blank and `#` lines skipped.
fn read_id_pairs(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::read(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected \"user<TAB>item\"".into(),
        };
        let (u, j) = line.split_once('\t').ok_or_else(bad)?;
        let u = u.trim().parse().map_err(|_| bad())?;
        let j = j.trim().parse().map_err(|_| bad())?;
        pairs.push((u, j));
    }
    Ok(pairs)
}

fn add_items(a: &AddItemsArgs) -> Result<()> {
    let m_list = config::parse_usize_list("m-list", &a.m_list)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let new = load_features(&a.new_features)?;
    let extended = extend_items(&model, &new)?;
    let (j_old, j_new) = (model.num_items(), extended.num_items());
    ensure_out(&a.out)?;
    save_checkpoint(&extended, &a.out.join("model.ckpt"))?;

    let items_path = a.checkpoint.with_file_name("items.txt");
    if items_path.exists() {
        let old = IdMap::read(&items_path)?;
        let next = old.externals().iter().max().map_or(0, |&e| e + 1);
        let mut ext = old.externals().to_vec();
        ext.extend((0..(j_new - j_old) as u64).map(|k| next + k));
        IdMap::from_external(ext).write(&a.out.join("items.txt"))?;
    }
    let mut info = json!({ "old_items": j_old, "new_items": j_new - j_old });

    if let Some(path) = &a.interactions {
        let pairs = read_id_pairs(path)?;
        let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (u, j) in pairs {
            let j = j as usize;
            if j >= j_new {
                return Err(Error::Dimension(format!(
                    "item {j} outside the extended catalog of {j_new}"
                )));
            }
            rows.entry(u as usize).or_default().push(j);
        }
        let n_users = rows.keys().next_back().map_or(0, |&u| u + 1);
        let mut dense = vec![Vec::new(); n_users];
        for (u, mut r) in rows {
            r.sort_unstable();
            r.dedup();
            dense[u] = r;
        }
        let full = RatingMatrix::from_rows(j_new, dense);
        let is_cold: Vec<bool> = (0..j_new).map(|j| j >= j_old).collect();
        let partition = ColdPartition {
            cold_item_ids: (j_old..j_new).collect(),
            is_cold,
            train_matrix: RatingMatrix::from_pairs(full.num_rows(), j_new, &[]),
            removed_pairs: Vec::new(),
        };
        let users: Vec<usize> = (0..full.num_rows()).filter(|&u| !full.row(u).is_empty()).collect();
        let test = cold_fold_in_pairs(&full, &partition, &users, extended.config.holdout_fraction, a.seed);
        let report = coldstart_eval(&extended.user, &partition, &test, &m_list)?;
        let lines = cold_report_lines(std::slice::from_ref(&report));
        write_atomic(&a.out.join("metrics.jsonl"), to_jsonl(&lines).as_bytes())?;
        print_summary(&lines);
        info["random_new_recall"] = json!(report.random_cold_recall);
    }
    write_atomic(
        &a.out.join("extension.json"),
        (serde_json::to_string_pretty(&info)? + "\n").as_bytes(),
    )?;
    println!("catalog extended from {j_old} to {j_new} items");
    Ok(())
}

fn recommend_cmd(a: &RecommendArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let items = match &a.items {
        Some(p) => IdMap::read(p)?,
        None => {
            let beside = a.checkpoint.with_file_name("items.txt");
            if beside.exists() {
                IdMap::read(&beside)?
            } else {
                IdMap::identity(model.num_items())
            }
        }
    };
    if items.len() != model.num_items() {
        return Err(Error::Dimension(format!(
            "item map has {} ids, model has {} items",
            items.len(),
            model.num_items()
        )));
    }
    let mut histories: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut unknown = 0usize;
    for (u, j) in read_id_pairs(&a.history)? {
        let entry = histories.entry(u).or_default();
        match items.internal(j) {
            Some(k) => entry.push(k),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!("skipped {unknown} history entries with unknown items");
    }
    let mut out = String::new();
    for (u, hist) in &histories {
        let ranking = recommend(&model.user, hist, a.top)?;
        let recs: Vec<String> = ranking
            .items
            .iter()
            .zip(&ranking.scores)
            .map(|(&j, s)| format!("{}:{s:.6}", items.external(j)))
            .collect();
        out.push_str(&format!("{u}\t{}\n", recs.join(",")));
    }
    ensure_out(&a.out)?;
    write_atomic(&a.out.join("recommendations.tsv"), out.as_bytes())?;
    print!("{out}");
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<()> {
    let results = gradcheck::run_suites(a.seed);
    for r in &results {
        println!(
            "{:<18} max_rel_err {:.3e} over {} coordinates: {}",
            r.name,
            r.max_rel_err,
            r.checked,
            if r.pass { "ok" } else { "FAILED" }
        );
    }
    if let Some(dir) = &a.out {
        ensure_out(dir)?;
        write_atomic(
            &dir.join("gradcheck.json"),
            (serde_json::to_string_pretty(&results)? + "\n").as_bytes(),
        )?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join(", ")))
    }
}
