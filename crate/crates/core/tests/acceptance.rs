//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{s, Array2};

use mdcvae::data::{
    cold_fold_in_pairs, fold_in_pairs, gen_synthetic, mark_cold_items, split_users, ColdPartition,
    FoldInPair, RatingMatrix, SyntheticConfig, SyntheticData, UserSplit,
};
use mdcvae::eval::{ndcg_at_m, recall_at_m, Metric};
use mdcvae::item_vae::{ItemVae, ItemVaeSpec, TStepHyper};
use mdcvae::nn::{finite_diff_check, ContentLikelihood, DenseLayer, GradCheckConfig, Rng, Tensors};
use mdcvae::predictor::{coldstart_eval, score_users};
use mdcvae::trainer::{load_checkpoint, train, TrainConfig, TrainData};
use mdcvae::user_vae::{BStepHyper, Mode, UserVae, UserVaeSpec};
use mdcvae::Model;

/// Writes past the test harness capture so the line always reaches the log.
fn report(id: &str, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("\nacceptance {id} {tag}: {name}: {detail}\n");
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn finish(id: &str, name: &str, failures: Vec<String>, detail: String) {
    let pass = failures.is_empty();
    let detail = if pass { detail } else { format!("{detail}; {}", failures.join("; ")) };
    report(id, name, pass, &detail);
    assert!(pass, "criterion {id} failed: {detail}");
}

struct ColdSetup {
    data: SyntheticData,
    full: RatingMatrix,
    partition: ColdPartition,
    split: UserSplit,
    validation: Vec<FoldInPair>,
    test: Vec<FoldInPair>,
}

fn cold_setup() -> &'static ColdSetup {
    static SETUP: OnceLock<ColdSetup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let data = gen_synthetic(&SyntheticConfig {
            n_users: 1000,
            n_items: 2000,
            n_clusters: 10,
            s_dim: 20,
            seed: 11,
            noise: 0.05,
            feature_noise: 0.05,
            ..Default::default()
        })
        .unwrap();
        let full = data.interactions.to_matrix();
        let partition = mark_cold_items(&data.interactions, 200, 12).unwrap();
        let split = split_users(full.num_rows(), (8, 1, 1), 13).unwrap();
        let validation = fold_in_pairs(&partition.train_matrix, &split.val_users, 0.2, 14);
        let test = cold_fold_in_pairs(&full, &partition, &split.test_users, 0.2, 15);
        ColdSetup {
            data,
            full,
            partition,
            split,
            validation,
            test,
        }
    })
}

fn cold_config(mode: Mode, lambda_v: f64) -> TrainConfig {
    TrainConfig {
        mode,
        k_u: 32,
        k_v: 32,
        lambda_v,
        use_content: lambda_v > 0.0,
        epochs: 100,
        batch_users: 100,
        batch_items: 200,
        learning_rate: 1e-2,
        seed: 21,
        ..Default::default()
    }
}

/// Cold-item Recall@20 and its random-ranking expectation.
fn cold_recall(cfg: &TrainConfig) -> (f64, f64) {
    let s = cold_setup();
    let out = train(
        cfg,
        &TrainData {
            ratings: &s.partition.train_matrix,
            train_users: &s.split.train_users,
            features: cfg.use_content.then_some(&s.data.features),
            validation: &s.validation,
        },
    )
    .unwrap();
    assert!(out.aborted.is_none(), "{:?}", out.aborted);
    let rep = coldstart_eval(&out.model.user, &s.partition, &s.test, &[20]).unwrap();
    (
        rep.mean(true, Metric::Recall, 20).unwrap(),
        rep.random_recall(true, 20).unwrap(),
    )
}

#[test]
fn criterion_5_cold_start_beats_random() {
    let _ = &cold_setup().full;
    let (sym, random) = cold_recall(&cold_config(Mode::Symmetric, 5.0));
    let (ablation, _) = cold_recall(&cold_config(Mode::Symmetric, 0.0));
    let mut failures = Vec::new();
    if sym < 5.0 * random {
        failures.push(format!("symmetric {sym:.4} < 5 x random {random:.4}"));
    }
    if ablation > 2.0 * random {
        failures.push(format!("ablation {ablation:.4} > 2 x random {random:.4}"));
    }
    finish(
        "5",
        "cold-start recall",
        failures,
        format!("symmetric {sym:.4}, ablation {ablation:.4}, random {random:.4}"),
    );
}

#[test]
fn criterion_7_lambda_sweep_peaks_inside() {
    let grid = [0.1, 1.0, 5.0, 25.0, 50.0];
    let seeds = [21, 22, 23];
    let recalls: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let total: f64 = seeds
                .iter()
                .map(|&seed| cold_recall(&TrainConfig { seed, ..cold_config(Mode::Symmetric, l) }).0)
                .sum();
            total / seeds.len() as f64
        })
        .collect();
    let best = recalls
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    let failures = if best == 0 || best + 1 == grid.len() {
        vec![format!("argmax at boundary lambda_v = {}", grid[best])]
    } else {
        vec![]
    };
    let table: Vec<String> = grid
        .iter()
        .zip(&recalls)
        .map(|(l, r)| format!("{l}:{r:.4}"))
        .collect();
    finish("7", "lambda_v sweep shape", failures, table.join(" "));
}


fn base_setup() -> (SyntheticData, RatingMatrix, UserSplit, Vec<FoldInPair>) {
    let data = gen_synthetic(&SyntheticConfig::default()).unwrap();
    let m = data.interactions.to_matrix();
    let split = split_users(m.num_rows(), (8, 1, 1), 3).unwrap();
    let val = fold_in_pairs(&m, &split.val_users, 0.2, 4);
    (data, m, split, val)
}

fn sanity_config() -> TrainConfig {
    TrainConfig {
        k_u: 20,
        k_v: 20,
        epochs: 30,
        batch_users: 50,
        learning_rate: 1e-2,
        seed: 5,
        ..Default::default()
    }
}

/// Keeps `per_user` random interactions of every training user and drops
/// every other row.
fn subsample(m: &RatingMatrix, users: &[usize], per_user: usize, seed: u64) -> RatingMatrix {
    let mut rng = Rng::new(seed);
    let mut rows = vec![Vec::new(); m.num_rows()];
    for &u in users {
        let mut row = m.row(u).to_vec();
        rng.shuffle(&mut row);
        row.truncate(per_user);
        row.sort_unstable();
        rows[u] = row;
    }
    RatingMatrix::from_rows(m.num_cols(), rows)
}

fn selected_recall_20(cfg: &TrainConfig, data: &TrainData<'_>) -> f64 {
    let out = train(cfg, data).unwrap();
    assert!(out.aborted.is_none(), "{:?}", out.aborted);
    let epoch = out.best_epoch.unwrap();
    out.history[epoch - 1].validation.unwrap().recall_20
}

#[test]
fn criterion_4_training_sanity() {
    let (data, m, split, val) = base_setup();
    let mut failures = Vec::new();

    let out = train(
        &sanity_config(),
        &TrainData {
            ratings: &m,
            train_users: &split.train_users,
            features: Some(&data.features),
            validation: &val,
        },
    )
    .unwrap();
    let objectives: Vec<f64> = out.history.iter().map(|r| r.map_objective).collect();
    assert_eq!(objectives.len(), 30);
    let worst_drop = objectives[3..]
        .iter()
        .zip(&objectives[2..])
        .map(|(cur, prev)| (prev - cur) / prev.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    if worst_drop > 0.01 {
        failures.push(format!("objective dropped by {:.2}% after epoch 3", 100.0 * worst_drop));
    }

    let n_items = m.num_cols();
    let per_user = n_items / 100;
    let sparse = subsample(&m, &split.train_users, per_user, 6);
    let density = sparse.nnz() as f64 / (split.train_users.len() * n_items) as f64;
    assert!(density <= 0.01, "density {density}");
    let td = |content: bool| TrainData {
        ratings: &sparse,
        train_users: &split.train_users,
        features: content.then_some(&data.features),
        validation: &val,
    };
    let tuned = [0.1, 1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|&lambda_v| {
            let r = selected_recall_20(&TrainConfig { lambda_v, ..sanity_config() }, &td(true));
            (lambda_v, r)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let ablation = selected_recall_20(
        &TrainConfig {
            lambda_v: 0.0,
            use_content: false,
            ..sanity_config()
        },
        &td(false),
    );
    if tuned.1 < 1.1 * ablation {
        failures.push(format!("content model {:.4} < 1.1 x ablation {ablation:.4}", tuned.1));
    }
    finish(
        "4",
        "training sanity",
        failures,
        format!(
            "worst objective drop {:.3}% after epoch 3; density {:.4}: recall@20 {:.4} (lambda_v {}) vs ablation {ablation:.4}",
            100.0 * worst_drop,
            density,
            tuned.1,
            tuned.0
        ),
    );
}

fn random_rows(rng: &mut Rng, users: usize, items: usize, p: f64) -> Vec<Vec<usize>> {
    (0..users)
        .map(|_| (0..items).filter(|_| rng.uniform() < p).collect())
        .collect()
}

#[test]
fn criterion_1_gradient_correctness() {
    let (users, items, features) = (10, 12, 6);
    let mut rng = Rng::new(101);
    let cfg = GradCheckConfig::default();
    let mut failures = Vec::new();
    let mut details = Vec::new();

    let item_spec = ItemVaeSpec {
        s_dim: features,
        hidden: vec![5],
        k_v: 4,
        likelihood: ContentLikelihood::Gaussian { precision: 2.0 },
    };
    let item = ItemVae::new(item_spec, &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((items, features), || rng.uniform());
    let v = Array2::from_shape_simple_fn((items, 4), || rng.normal());
    let thp = TStepHyper {
        lambda_v: 3.0,
        lambda_w: 0.2,
        batch_fraction: 0.7,
    };
    let (_, g) = item.t_step(x.view(), v.view(), &thp, &mut Rng::new(7)).unwrap();
    let r = finite_diff_check(
        &item,
        &g,
        |m| m.t_step(x.view(), v.view(), &thp, &mut Rng::new(7)).unwrap().0.objective(),
        &cfg,
        &mut Rng::new(8),
    );
    details.push(format!("t_step {:.2e}", r.max_rel_err));
    if !r.pass {
        failures.push("t_step".to_string());
    }

    let rows = random_rows(&mut rng, users, items, 0.35);
    let rows: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
    let z_hat = Array2::from_shape_simple_fn((items, 4), || rng.normal());
    let bhp = BStepHyper {
        lambda_v: 3.0,
        lambda_w: 0.2,
        beta: 0.4,
        batch_fraction: 0.7,
        dropout: 0.0,
    };
    for mode in [Mode::Normal, Mode::Symmetric] {
        let spec = UserVaeSpec {
            mode,
            n_items: items,
            k_u: 3,
            k_v: 4,
            hidden: vec![5],
            normalize_input: false,
        };
        let vae = UserVae::new(spec, &mut rng).unwrap();
        let (_, g) = vae.b_step(&rows, Some(z_hat.view()), &bhp, &mut Rng::new(9)).unwrap();
        let r = finite_diff_check(
            &vae,
            &g,
            |m| {
                m.b_step(&rows, Some(z_hat.view()), &bhp, &mut Rng::new(9))
                    .unwrap()
                    .0
                    .objective()
            },
            &cfg,
            &mut Rng::new(10),
        );
        details.push(format!("b_step {mode} {:.2e}", r.max_rel_err));
        if !r.pass {
            failures.push(format!("b_step {mode}"));
        }
    }
    finish("1", "gradient correctness", failures, details.join(", "));
}

/// Scans every rank position of the ranking; `log` sets the discount base.
fn brute_force(ranking: &[usize], holdout: &[usize], m: usize, log: fn(f64) -> f64) -> (f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranking.iter().enumerate() {
        let r = pos + 1;
        if r > m {
            break;
        }
        let hit = holdout.iter().any(|h| h == item) as i32;
        hits += hit as usize;
        dcg += (2f64.powi(hit) - 1.0) / log((r + 1) as f64);
    }
    let ideal_hits = m.min(holdout.len());
    let idcg: f64 = (1..=ideal_hits).map(|r| 1.0 / log((r + 1) as f64)).sum();
    (hits as f64 / ideal_hits as f64, dcg / idcg)
}

#[test]
fn criterion_2_metric_oracle() {
    let mut rng = Rng::new(202);
    let mut failures = Vec::new();
    let mut worst_base_gap = 0.0f64;
    for case in 0..1000 {
        let j = 1 + rng.below(20);
        let mut ranking: Vec<usize> = (0..j).collect();
        rng.shuffle(&mut ranking);
        let mut pool = ranking.clone();
        rng.shuffle(&mut pool);
        let holdout: Vec<usize> = pool[..1 + rng.below(j)].to_vec();
        let m = 1 + rng.below(j + 5);
        let (recall, ndcg_ln) = brute_force(&ranking, &holdout, m, f64::ln);
        let (_, ndcg_log2) = brute_force(&ranking, &holdout, m, f64::log2);
        if recall_at_m(&ranking, &holdout, m) != recall {
            failures.push(format!("case {case}: recall"));
        }
        if ndcg_at_m(&ranking, &holdout, m) != ndcg_ln {
            failures.push(format!("case {case}: ndcg"));
        }
        worst_base_gap = worst_base_gap.max((ndcg_ln - ndcg_log2).abs());
    }
    if worst_base_gap > 1e-12 {
        failures.push(format!("ndcg base gap {worst_base_gap:.2e}"));
    }
    finish(
        "2",
        "metric oracle equivalence",
        failures,
        format!("1000 instances, worst log-base gap {worst_base_gap:.1e}"),
    );
}

/// Dense `x Wᵀ + b` followed by `act`.
fn dense(x: &[f64], layer: &DenseLayer, act: fn(f64) -> f64) -> Vec<f64> {
    (0..layer.outputs())
        .map(|o| {
            let s: f64 = (0..layer.inputs()).map(|i| layer.weight[[o, i]] * x[i]).sum();
            act(s + layer.bias[o])
        })
        .collect()
}

fn mlp(x: Vec<f64>, layers: &[DenseLayer], last: fn(f64) -> f64) -> Vec<f64> {
    let n = layers.len();
    layers.iter().enumerate().fold(x, |h, (i, l)| {
        dense(&h, l, if i + 1 == n { last } else { f64::tanh })
    })
}

/// Multi-VAE β-ELBO on a dense binary batch, one sample per user drawn
/// row-major from `noise`, plus batch-scaled weight decay.
fn multi_vae_elbo(vae: &UserVae, x: &[Vec<f64>], beta: f64, lambda_w: f64, f: f64, noise: &mut Rng) -> f64 {
    let w1 = vae.first_weight.as_ref().unwrap();
    let (j_items, k_v) = w1.dim();
    let k_u = vae.spec.k_u;
    let mut total = 0.0;
    let mut kl_total = 0.0;
    for row in x {
        let a: Vec<f64> = (0..k_v)
            .map(|k| {
                let s: f64 = (0..j_items).map(|j| row[j] * w1[[j, k]]).sum();
                (s + vae.first_bias[k]).tanh()
            })
            .collect();
        let head = mlp(a, vae.encoder.layers(), |v| v);
        let mu = &head[..k_u];
        let log_sigma: Vec<f64> = head[k_u..].iter().map(|v| v.clamp(-10.0, 10.0)).collect();
        let z: Vec<f64> = (0..k_u).map(|k| mu[k] + noise.normal() * log_sigma[k].exp()).collect();
        let h = mlp(z, vae.decoder.layers(), f64::tanh);
        let logits: Vec<f64> = (0..j_items)
            .map(|j| (0..k_v).map(|k| h[k] * vae.item_emb[[j, k]]).sum::<f64>() + vae.item_bias[j])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += (0..j_items).map(|j| row[j] * (logits[j] - lse)).sum::<f64>();
        kl_total += 0.5
            * (0..k_u)
                .map(|k| mu[k] * mu[k] + (2.0 * log_sigma[k]).exp() - 1.0 - 2.0 * log_sigma[k])
                .sum::<f64>();
    }
    let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
    let decay: f64 = sq(w1)
        + vae.encoder.layers().iter().map(|l| sq(&l.weight)).sum::<f64>()
        + vae.decoder.layers().iter().map(|l| sq(&l.weight)).sum::<f64>();
    total - beta * kl_total - 0.5 * f * lambda_w * decay
}

#[test]
fn criterion_3_multi_vae_ablation() {
    let cfg = TrainConfig {
        mode: Mode::Normal,
        lambda_v: 0.0,
        use_content: false,
        k_u: 3,
        k_v: 5,
        uae_hidden: vec![4],
        ..Default::default()
    };
    let mut rng = Rng::new(303);
    let model = Model::new(cfg, 15, None, &mut rng).unwrap();
    assert!(model.item.is_none());
    let mut vae = model.user;
    for t in vae.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.5 * rng.normal());
    }
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let rows = random_rows(&mut rng, 7, 15, 0.3);
        let dense_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..15).map(|j| r.contains(&j) as u8 as f64).collect())
            .collect();
        let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
        let hp = BStepHyper {
            lambda_v: 0.0,
            lambda_w: 0.05 * trial as f64,
            beta: 0.1 * trial as f64,
            batch_fraction: 0.25,
            dropout: 0.0,
        };
        let seed = 40 + trial;
        let (terms, _) = vae.b_step(&refs, None, &hp, &mut Rng::new(seed)).unwrap();
        let oracle = multi_vae_elbo(&vae, &dense_rows, hp.beta, hp.lambda_w, 0.25, &mut Rng::new(seed));
        worst = worst.max((terms.objective() - oracle).abs());
    }
    let failures = if worst > 1e-10 {
        vec![format!("max gap {worst:.2e}")]
    } else {
        vec![]
    };
    finish("3", "multi-vae ablation equality", failures, format!("max |gap| {worst:.1e} over 5 batches"));
}

fn cli(args: &[&str]) -> i32 {
    mdcvae::cli::run(std::iter::once("mdcvae").chain(args.iter().copied()))
}

fn synth_dir(dir: &Path) {
    let out = dir.to_str().unwrap();
    assert_eq!(cli(&["synth", "--out", out, "--users", "120", "--items", "60", "--seed", "3"]), 0);
}

#[test]
fn criterion_6_online_extension() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_dir(&d.join("data"));
    let inter = d.join("data/interactions.tsv");
    let feats = d.join("data/features.txt");
    let common = |mode: &str, out: &Path| {
        cli(&[
            "train",
            "--interactions", inter.to_str().unwrap(),
            "--features", feats.to_str().unwrap(),
            "--mode", mode,
            "--epochs", "3",
            "--batch-users", "32",
            "--out", out.to_str().unwrap(),
        ])
    };
    assert_eq!(common("symmetric", &d.join("sym")), 0);
    assert_eq!(common("normal", &d.join("normal")), 0);

    let mut new_rows = String::from("4 20\n");
    let mut rng = Rng::new(606);
    for _ in 0..4 {
        let row: Vec<String> = (0..20).map(|_| format!("{}", rng.normal())).collect();
        new_rows.push_str(&(row.join(" ") + "\n"));
    }
    let new_path = d.join("new.txt");
    std::fs::write(&new_path, new_rows).unwrap();
    let extend = |ckpt: &Path, out: &Path| {
        cli(&[
            "add-items",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--new-features", new_path.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ])
    };
    let mut failures = Vec::new();
    assert_eq!(extend(&d.join("sym/model.ckpt"), &d.join("ext")), 0);
    let old = load_checkpoint(&d.join("sym/model.ckpt")).unwrap();
    let new = load_checkpoint(&d.join("ext/model.ckpt")).unwrap();
    let j = old.num_items();
    if new.num_items() != j + 4 {
        failures.push(format!("extended catalog has {} items", new.num_items()));
    }
    if new.user.item_emb.slice(s![..j, ..]) != old.user.item_emb {
        failures.push("old rows of V changed".into());
    }

    let histories: Vec<Vec<usize>> = random_rows(&mut rng, 25, j, 0.1);
    let refs: Vec<&[usize]> = histories.iter().map(Vec::as_slice).collect();
    let before = score_users(&old.user, &refs).unwrap();
    let after = score_users(&new.user, &refs).unwrap();
    if after.slice(s![.., ..j]) != before {
        failures.push("old-item logits changed".into());
    }

    let code = extend(&d.join("normal/model.ckpt"), &d.join("ext_normal"));
    if code != 1 {
        failures.push(format!("normal-mode extension exited with {code}"));
    }
    finish(
        "6",
        "online extension invariants",
        failures,
        format!("{j} -> {} items; normal mode exit {code}", new.num_items()),
    );
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_dir(&d.join("data"));
    let conf = d.join("run.conf");
    std::fs::write(
        &conf,
        "interactions = data/interactions.tsv\nfeatures = data/features.txt\n\
         mode = symmetric\nk_u = 8\nk_v = 8\nepochs = 4\nbatch_users = 32\n\
         n_splits = 2\nseed = 17\n",
    )
    .unwrap();
    let run = |cmd: &str, out: &str| {
        assert_eq!(
            cli(&[cmd, "--config", conf.to_str().unwrap(), "--out", d.join(out).to_str().unwrap()]),
            0
        );
    };
    run("train", "t1");
    run("train", "t2");
    run("eval", "e1");
    run("eval", "e2");
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    let mut failures = Vec::new();
    for f in ["model.ckpt", "history.jsonl"] {
        if read(&format!("t1/{f}")) != read(&format!("t2/{f}")) {
            failures.push(format!("{f} differs"));
        }
    }
    if read("e1/metrics.jsonl") != read("e2/metrics.jsonl") {
        failures.push("metrics.jsonl differs".into());
    }
    finish(
        "8",
        "determinism",
        failures,
        format!(
            "checkpoint {} bytes, metrics {} lines",
            read("t1/model.ckpt").len(),
            String::from_utf8(read("e1/metrics.jsonl")).unwrap().lines().count()
        ),
    );
}
