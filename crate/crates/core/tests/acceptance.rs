//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits non-zero if any fails.

// `!(x >= t)` is deliberate: a NaN measurement must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gradebias::dataset::*;
use gradebias::debias::*;
use gradebias::diagnostics::run_diagnostics;
use gradebias::evaluator::evaluate_scorer;
use gradebias::linalg::{dot, norm, normalized, Embeddings};
use gradebias::model::{init_model, EmbeddingModel};
use gradebias::synth::{generate, SynthConfig};
use gradebias::trainer::*;
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---- 1: analytic gradients against central differences ----

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Relative error of the whole gradient vector: `max|a - n| / max|a|`.
fn vector_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let rtol = 1e-5;
    let mut r = rng(2024);
    let (mut worst_vec, mut worst_elem) = (0.0f64, 0.0f64);
    let mut checked = 0;
    for case in 0..200 {
        let normalize = case % 2 == 1;
        let model = random_model(4, 6, 8, normalize, &mut r);
        let lambda = r.random_range(0.0..0.05);
        let t = random_triplet(4, 6, &mut r);
        let g = bpr_gradients(&model, t, lambda).map_err(|e| e.to_string())?;
        let (p, qi, qj) = (model.users().row(t.user), model.items().row(t.pos), model.items().row(t.neg));
        let pairs = [
            (g.user.clone(), central_diff(p, h, |x| bpr_objective(x, qi, qj, normalize, lambda))),
            (g.pos_item.clone(), central_diff(qi, h, |x| bpr_objective(p, x, qj, normalize, lambda))),
            (g.neg_item.clone(), central_diff(qj, h, |x| bpr_objective(p, qi, x, normalize, lambda))),
        ];
        let label = case % 4 < 2;
        let (u, i) = (t.user, t.pos);
        let b = bce_loss_and_gradients(&model, u, i, label, lambda).map_err(|e| e.to_string())?;
        let (pu, q) = (model.users().row(u), model.items().row(i));
        let bce_pairs = [
            (b.user.clone(), central_diff(pu, h, |x| bce_objective(x, q, label, normalize, lambda))),
            (b.item.clone(), central_diff(q, h, |x| bce_objective(pu, x, label, normalize, lambda))),
        ];
        for (a, n) in pairs.iter().chain(&bce_pairs) {
            worst_vec = worst_vec.max(vector_rel_err(a, n));
            worst_elem = worst_elem.max(max_rel_err(a, n));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst_vec <= rtol, "worst relative error {worst_vec:.2e} exceeds {rtol:e}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{checked} gradient blocks, worst vector-relative error {worst_vec:.2e} (worst single coordinate {worst_elem:.2e}), {elapsed:.2?}"
    ))
}

// ---- 2: accumulated item updates equal item displacement ----

fn criterion_accumulator_identity() -> Outcome {
    let ds = generate(&SynthConfig { num_users: 50, num_items: 30, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut worst_delta = 0.0f64;
    let mut worst_split = 0.0f64;
    for epochs in 1..=2 {
        let cfg = TrainConfig {
            lambda_reg: 0.0,
            batch_size: 1,
            normalize_users: false,
            epochs,
            dim: 16,
            ..Default::default()
        };
        let init = init_model(ds.num_users(), ds.num_items(), cfg.dim, cfg.init).map_err(|e| e.to_string())?;
        let out = train(&ds, init.clone(), &cfg).map_err(|e| e.to_string())?;
        for (k, (q1, q0)) in out.model.items().as_slice().iter().zip(init.items().as_slice()).enumerate() {
            worst_delta = worst_delta.max(((q1 - q0) - out.accumulators.item_acc.as_slice()[k]).abs());
        }
        worst_split = worst_split.max(out.accumulators.split_drift());
    }
    ensure!(worst_delta <= 1e-8, "max |(Q_final - Q_init) - item_acc| = {worst_delta:e}");
    ensure!(worst_split <= 1e-10, "split drift {worst_split:e}");
    Ok(format!("max displacement gap {worst_delta:.2e}, max split drift {worst_split:.2e}"))
}

// ---- 3: projection properties ----

fn criterion_projection() -> Outcome {
    let mut r = rng(77);
    let (mut ortho, mut lin, mut idem) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let dim = r.random_range(1..=32);
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let raw: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        if norm(&raw) < 1e-6 {
            continue;
        }
        let d = normalized(&raw);
        let nv = norm(&v);
        let full = remove_projection(&v, &d, 1.0);
        ortho = ortho.max(dot(&full, &d).abs() / nv.max(f64::MIN_POSITIVE));
        let alpha = r.random_range(-2.0..3.0);
        let a = remove_projection(&v, &d, alpha);
        for k in 0..dim {
            lin = lin.max((a[k] - (v[k] - alpha * (v[k] - full[k]))).abs() / nv.max(f64::MIN_POSITIVE));
        }
        let shrink_alpha = r.random_range(0.0..=1.0);
        let s = remove_projection(&v, &d, shrink_alpha);
        ensure!(norm(&s) <= nv * (1.0 + 1e-12), "norm grew for alpha {shrink_alpha}");
        let twice = remove_projection(&full, &d, 1.0);
        for k in 0..dim {
            idem = idem.max((twice[k] - full[k]).abs());
        }
    }
    ensure!(ortho <= 1e-10, "orthogonality residual {ortho:e} x |v|");
    ensure!(lin <= 1e-12, "linearity residual {lin:e} x |v|");
    ensure!(idem <= 1e-10 * 1e3, "idempotence residual {idem:e}");
    Ok(format!(
        "1000 pairs: orthogonality {ortho:.1e}|v|, linearity {lin:.1e}|v| (rounding level), idempotence {idem:.1e}, norms never grew"
    ))
}

// ---- 4: evaluator equals a brute-force oracle ----

fn criterion_metric_oracle() -> Outcome {
    let mut r = rng(5);
    let mut instances = 0;
    for nu in 1..=5 {
        for ni in 1..=8 {
            for _ in 0..20 {
                let dim = r.random_range(1..=3);
                let mut table = |rows: usize| {
                    let data = (0..rows * dim).map(|_| r.random_range(-2i32..=2) as f64).collect();
                    Embeddings::from_vec(rows, dim, data)
                };
                let model = EmbeddingModel::from_tables(table(nu), table(ni), false).map_err(|e| e.to_string())?;
                let mut rel = Vec::new();
                let mut mask = Vec::new();
                for u in 0..nu {
                    for i in 0..ni {
                        match r.random_range(0..4) {
                            0 => rel.push((u, i)),
                            1 => mask.push((u, i)),
                            _ => {}
                        }
                    }
                }
                if rel.is_empty() {
                    rel.push((0, 0));
                    mask.retain(|&p| p != (0, 0));
                }
                let relevant = dataset(nu, ni, &rel);
                let masked = relevant.with_pairs(mask);
                for k in (1..=ni + 1).chain([20]) {
                    let report = evaluate_scorer(&model, &relevant, &[&masked], &[k], None).map_err(|e| e.to_string())?;
                    let o = brute_force_eval(nu, ni, |u, i| model.score(u, i).unwrap(), &relevant, &[&masked], k)
                        .ok_or("oracle found no users")?;
                    let m = report.overall[0];
                    ensure!(
                        (m.recall, m.hr, m.ndcg) == (o.recall, o.hr, o.ndcg) && report.users_evaluated == o.users,
                        "{nu}x{ni} k={k}: evaluator {m:?} vs oracle {o:?}"
                    );
                    instances += 1;
                }
            }
        }
    }
    let model = EmbeddingModel::from_tables(
        Embeddings::from_rows(&[vec![1.0]]),
        Embeddings::from_rows(&[vec![3.0], vec![2.0], vec![1.0]]),
        false,
    )
    .map_err(|e| e.to_string())?;
    let rank2 = evaluate_scorer(&model, &dataset(1, 3, &[(0, 1)]), &[], &[20], None).map_err(|e| e.to_string())?;
    let ndcg = rank2.overall[0].ndcg;
    ensure!((ndcg - 1.0 / 3f64.log2()).abs() <= 1e-9, "rank-2 NDCG {ndcg}");
    Ok(format!("{instances} (instance, k) evaluations identical to the oracle; rank-2 NDCG = {ndcg:.5}"))
}

// ---- 5 and 6: synthetic long-tail diagnostics ----

struct SyntheticRun {
    popular_cos: f64,
    unpopular_cos: f64,
    gap_rho: f64,
    item_norm_rho: f64,
    elapsed: Duration,
}

fn synthetic_run(normalize_users: bool) -> Result<SyntheticRun, String> {
    let start = Instant::now();
    let ds = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 20, normalize_users, ..Default::default() };
    let out = fit(&ds, &cfg).map_err(|e| e.to_string())?;
    let g = compute_grouping(&ds, 0.8).map_err(|e| e.to_string())?;
    let d = run_diagnostics(&out.model, None, &out.accumulators, &g).map_err(|e| e.to_string())?;
    Ok(SyntheticRun {
        popular_cos: d.direction.popular_mean_cos_pos.ok_or("no popular cosines")?,
        unpopular_cos: d.direction.unpopular_mean_cos_pos.ok_or("no unpopular cosines")?,
        gap_rho: d.magnitude.spearman_count_vs_gap.ok_or("constant gap")?,
        item_norm_rho: d.norms.item_spearman.ok_or("constant norms")?,
        elapsed: start.elapsed(),
    })
}

fn criterion_fig1(run: &SyntheticRun) -> Outcome {
    let gap = run.popular_cos - run.unpopular_cos;
    ensure!(gap >= 0.1, "popular {:.3} vs unpopular {:.3}", run.popular_cos, run.unpopular_cos);
    ensure!(run.gap_rho > 0.5, "Spearman(count, |G+|-|G-|) = {:.3}", run.gap_rho);
    ensure!(run.elapsed < Duration::from_secs(60), "took {:?}", run.elapsed);
    Ok(format!(
        "mean cos(G+, combined) popular {:.3} vs unpopular {:.3} (gap {gap:.3}); Spearman(count, |G+|-|G-|) {:.3}; {:.2?}",
        run.popular_cos, run.unpopular_cos, run.gap_rho, run.elapsed
    ))
}

fn criterion_norms(plain: &SyntheticRun, normalized: &SyntheticRun) -> Outcome {
    ensure!(plain.item_norm_rho > 0.5, "Spearman(count, |Q|) without normalization {:.3}", plain.item_norm_rho);
    ensure!(
        normalized.item_norm_rho < plain.item_norm_rho,
        "normalization did not lower the correlation: {:.3} -> {:.3}",
        plain.item_norm_rho,
        normalized.item_norm_rho
    );
    Ok(format!(
        "Spearman(count, |Q|) {:.3} without normalization, {:.3} with",
        plain.item_norm_rho, normalized.item_norm_rho
    ))
}

// ---- 7: MovieLens-100K end to end ----

fn ml100k_path() -> PathBuf {
    std::env::var_os("GRADEBIAS_ML100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data"))
}

/// Training configuration used for the MovieLens runs.
fn ml100k_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 50, seed, ..Default::default() }
}

fn criterion_movielens() -> Outcome {
    let path = ml100k_path();
    ensure!(
        path.exists(),
        "{} is missing; run scripts/fetch_ml100k.sh (or set GRADEBIAS_ML100K)",
        path.display()
    );
    let start = Instant::now();
    let ds = load_interactions(&path, Format::Tsv).map_err(|e| e.to_string())?;
    let (mut gains, mut adv_iid, mut adv_int) = (Vec::new(), Vec::new(), Vec::new());
    let mut details = Vec::new();
    for seed in 0..3u64 {
        let (rest, iid) = holdout_iid(&ds, 0.2, seed).map_err(|e| e.to_string())?;
        let b = split(&rest, SplitProtocol::Intervened, SplitRatios::new(0.6, 0.1, 0.3).unwrap(), seed)
            .map_err(|e| e.to_string())?;
        let out = fit(&b.train, &ml100k_config(seed)).map_err(|e| e.to_string())?;
        let g = compute_grouping(&b.train, 0.8).map_err(|e| e.to_string())?;
        let ctx = build_context(&out.model, None, Some(&g), DirectionSource::MeanPopularEmbeddings, 0.0, 0.0)
            .map_err(|e| e.to_string())?;
        let grid = GridSpec::default();
        let sweep = sweep_alphas(&out.model, &ctx, &b.validation, &[&b.train], &grid, &grid, SweepMetric::Recall, 20)
            .map_err(|e| e.to_string())?;
        let (a1, a2) = (sweep.best.alpha1, sweep.best.alpha2);
        let recall = |target: &InteractionDataset, a1: f64, a2: f64| -> Result<f64, String> {
            let m = AdjustedModel::new(&out.model, &ctx.with_alphas(a1, a2));
            Ok(evaluate_scorer(&m, target, &[&b.train, &b.validation], &[20], None)
                .map_err(|e| e.to_string())?
                .overall[0]
                .recall)
        };
        let (base, best) = (recall(&b.test, 0.0, 0.0)?, recall(&b.test, a1, a2)?);
        gains.push(best / base - 1.0);
        let advantage = |p: f64| -> Result<f64, String> {
            let mixed = mix_test_sets(&b.test, &iid, p, seed).map_err(|e| e.to_string())?;
            Ok(recall(&mixed, a1, a2)? - recall(&mixed, 0.0, 0.0)?)
        };
        adv_iid.push(advantage(0.0)?);
        adv_int.push(advantage(1.0)?);
        details.push(format!("seed {seed}: ({a1},{a2}) {base:.4}->{best:.4}"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (gain, a0, a1) = (mean(&gains), mean(&adv_iid), mean(&adv_int));
    let elapsed = start.elapsed();
    let summary = format!(
        "mean relative Recall@20 gain {:+.2}% [{}]; advantage at proportion 0: {a0:+.4}, at 1: {a1:+.4}; {elapsed:.1?}",
        100.0 * gain,
        details.join("; ")
    );
    ensure!(gain >= 0.05, "{summary}");
    ensure!(a1 > a0, "{summary}");
    ensure!(elapsed < Duration::from_secs(600), "{summary}");
    Ok(summary)
}

// ---- 8: CLI determinism ----

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gradebias"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn pipeline_artifacts(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let toy = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/toy50.tsv");
    let s = |p: PathBuf| p.to_str().unwrap().to_owned();
    let (b, c) = (s(root.join("bundle")), s(root.join("ckpt")));
    let val = s(root.join("bundle/validation.tsv"));
    let train_file = s(root.join("bundle/train.tsv"));
    run_cli(&["synth", "--out", &s(root.join("synth.tsv")), "--users", "60", "--items", "40", "--seed", "2"])?;
    run_cli(&["split", "--input", toy, "--seed", "7", "--iid-holdout", "0.2", "--out-dir", &b])?;
    run_cli(&["train", "--train-file", &train_file, "--out-checkpoint", &c, "--epochs", "8", "--dim", "8"])?;
    run_cli(&["sweep", "--checkpoint", &c, "--val-file", &val, "--out", &s(root.join("sweep.csv"))])?;
    run_cli(&["sweep", "--checkpoint", &c, "--val-file", &val, "--source", "acc", "--out", &s(root.join("sweep_acc.csv"))])?;
    run_cli(&["eval", "--checkpoint", &c, "--bundle-dir", &b, "--alpha1", "0.4", "--alpha2", "0.2", "--groups", "--out-dir", &s(root.join("eval"))])?;
    run_cli(&["diagnose", "--checkpoint", &c, "--train-file", &train_file, "--out-dir", &s(root.join("diag"))])?;
    run_cli(&["mix-eval", "--checkpoint", &c, "--bundle-dir", &b, "--alpha1", "0.4", "--out", &s(root.join("mix.csv"))])?;
    Ok(snapshot(root))
}

fn criterion_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_artifacts(a.path())?;
    let second = pipeline_artifacts(b.path())?;
    ensure!(first.len() == second.len(), "{} vs {} artifacts", first.len(), second.len());
    for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
        ensure!(na == nb && ba == bb, "artifact {na} differs between runs");
    }
    Ok(format!("{} artifacts from synth/split/train/sweep/eval/diagnose/mix-eval byte-identical across reruns", first.len()))
}

// ---- 9: sweep contract ----

fn criterion_sweep() -> Outcome {
    let ds = generate(&SynthConfig { num_users: 200, num_items: 100, ..Default::default() }).map_err(|e| e.to_string())?;
    let b = split(&ds, SplitProtocol::Intervened, SplitRatios::new(0.6, 0.1, 0.3).unwrap(), 3).map_err(|e| e.to_string())?;
    let out = fit(&b.train, &TrainConfig { epochs: 10, dim: 16, ..Default::default() }).map_err(|e| e.to_string())?;
    let g = compute_grouping(&b.train, 0.8).map_err(|e| e.to_string())?;
    let ctx = build_context(&out.model, None, Some(&g), DirectionSource::MeanPopularEmbeddings, 0.0, 0.0)
        .map_err(|e| e.to_string())?;
    let grid = GridSpec::default();
    let sweep = sweep_alphas(&out.model, &ctx, &b.validation, &[&b.train], &grid, &grid, SweepMetric::Recall, 20)
        .map_err(|e| e.to_string())?;
    ensure!(sweep.cells.len() == 121, "{} cells", sweep.cells.len());
    for i in 0..=10 {
        for j in 0..=10 {
            let (a1, a2) = (i as f64 / 5.0, j as f64 / 5.0);
            ensure!(sweep.cell(a1, a2).is_some(), "cell ({a1},{a2}) missing");
        }
    }
    let base = sweep.cell(0.0, 0.0).unwrap().recall;
    ensure!(sweep.best.recall >= base, "best {} < baseline {base}", sweep.best.recall);
    ensure!(sweep.cells.iter().all(|c| c.recall <= sweep.best.recall), "best is not the maximum");
    Ok(format!(
        "121 cells over {{0,0.2,...,2}}^2; best ({},{}) Recall@20 {:.4} >= (0,0) {:.4}",
        sweep.best.alpha1, sweep.best.alpha2, sweep.best.recall, base
    ))
}

fn main() {
    let mut failures = 0;
    let mut record = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(msg) => println!("PASS criterion {id} ({name}): {msg}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL criterion {id} ({name}): {msg}");
            }
        }
    };
    record(1, "gradient correctness", &mut criterion_gradients);
    record(2, "accumulator identity", &mut criterion_accumulator_identity);
    record(3, "projection properties", &mut criterion_projection);
    record(4, "metric oracle equivalence", &mut criterion_metric_oracle);
    let runs = (synthetic_run(false), synthetic_run(true));
    record(5, "gradient direction and magnitude on long-tailed data", &mut || match &runs.0 {
        Ok(r) => criterion_fig1(r),
        Err(e) => Err(e.clone()),
    });
    record(6, "item norm tracks popularity", &mut || match &runs {
        (Ok(a), Ok(b)) => criterion_norms(a, b),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    });
    record(7, "MovieLens-100K directional improvement", &mut criterion_movielens);
    record(8, "CLI determinism", &mut criterion_determinism);
    record(9, "sweep contract", &mut criterion_sweep);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
