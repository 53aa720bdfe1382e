//! Command-line front end. Each subcommand runs one pipeline stage and talks
//! to the others only through files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::dataset::{
    compute_grouping, holdout_iid, load_interactions, load_interactions_in, mix_test_sets, read_ids, split,
    write_ids, write_interactions, Format, IdMap, InteractionDataset, SplitProtocol, SplitRatios,
};
use crate::debias::{build_context, sweep_alphas, AdjustedModel, DirectionSource, GridSpec, SweepMetric};
use crate::diagnostics::run_diagnostics;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_scorer, EvalReport, MetricSummary};
use crate::model::{init_model, load_checkpoint, save_checkpoint, sha256_hex, Checkpoint};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{loss_trace_csv, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "gradebias", version, about = "MF recommender training and popularity-bias removal")]
pub struct Cli {
    /// Print machine-readable JSON summaries instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an interaction file into train/validation/test.
    Split(SplitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Grid-search the adjustment coefficients on validation data.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on one part of a split bundle.
    Eval(EvalArgs),
    /// Write gradient and embedding-norm diagnostics.
    Diagnose(DiagnoseArgs),
    /// Evaluate on mixtures of intervened and IID test data.
    MixEval(MixEvalArgs),
    /// Generate a long-tailed synthetic interaction file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "tsv")]
    pub format: String,
    #[arg(long, default_value = "intervened")]
    pub protocol: String,
    #[arg(long, default_value = "0.6,0.1,0.3")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// First reserve this fraction uniformly at random as `test_iid.tsv`.
    #[arg(long)]
    pub iid_holdout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_file: PathBuf,
    #[arg(long, default_value = "tsv")]
    pub format: String,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub lambda_reg: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub normalize_users: Option<String>,
    #[arg(long)]
    pub negatives_per_positive: Option<String>,
    /// Any other config entry, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DirectionArgs {
    /// Direction source: `emb` (mean popular embeddings) or `acc` (accumulators).
    #[arg(long, default_value = "emb")]
    pub source: String,
    /// Cumulative interaction share that defines popular items and active users.
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub val_file: PathBuf,
    /// Defaults to `train.tsv` next to the validation file.
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    /// `start:stop:step` for both coefficients.
    #[arg(long, default_value = "0:2:0.2")]
    pub grid: String,
    /// Separate grid for `alpha2`; defaults to `--grid`.
    #[arg(long)]
    pub grid2: Option<String>,
    #[arg(long, default_value = "recall")]
    pub metric: String,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Output CSV; defaults to `sweep.csv` inside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bundle_dir: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha2: f64,
    /// Cutoffs, comma separated; the first is used for per-user and per-group output.
    #[arg(long, default_value = "20")]
    pub k: String,
    /// Also report recall and recommended frequency per popularity bin.
    #[arg(long)]
    pub groups: bool,
    /// `test`, `validation` or `iid` (the `test_iid.tsv` holdout).
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Defaults to `eval-<split>` inside the checkpoint.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub train_file: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Defaults to `diagnostics` inside the checkpoint.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bundle_dir: PathBuf,
    /// Share of intervened test data in each mixture.
    #[arg(long, default_value = "0,0.5,0.75,0.9,1.0")]
    pub proportions: String,
    #[arg(long, default_value_t = 0.0)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha2: f64,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub direction: DirectionArgs,
    /// Defaults to `mix_eval.csv` inside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 1.2)]
    pub exponent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// What a subcommand reports: a human summary, the same as JSON, and
/// warnings for stderr.
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn new(text: String, json: serde_json::Value) -> Self {
        Self {
            text,
            json,
            warnings: Vec::new(),
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn read_universe(ckpt: &Checkpoint) -> Result<(&IdMap, &IdMap)> {
    match (&ckpt.user_ids, &ckpt.item_ids) {
        (Some(u), Some(i)) => Ok((u, i)),
        _ => Err(Error::Config("checkpoint carries no id maps; train it with the CLI".into())),
    }
}

fn load_in(path: &Path, users: &IdMap, items: &IdMap, warnings: &mut Vec<String>) -> Result<InteractionDataset> {
    let (ds, unknown) = load_interactions_in(path, Format::Tsv, users, items)?;
    if unknown > 0 {
        warnings.push(format!("{}: skipped {unknown} rows with ids outside the model", path.display()));
    }
    Ok(ds)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{what}: cannot parse `{p}`")))
        })
        .collect()
}

fn metrics_json(m: &MetricSummary) -> serde_json::Value {
    json!({ "recall": m.recall, "hr": m.hr, "ndcg": m.ndcg })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Split(a) => run_split(a),
        Command::Train(a) => run_train(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Eval(a) => run_eval(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::MixEval(a) => run_mix_eval(a),
        Command::Synth(a) => run_synth(a),
    }
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    protocol_tag: SplitProtocol,
    ratios: [f64; 3],
    seed: u64,
    input_sha256: String,
    interactions: usize,
    users: usize,
    items: usize,
    train: usize,
    validation: usize,
    test: usize,
    iid_holdout: Option<f64>,
    test_iid: Option<usize>,
    users_without_train: usize,
    items_without_train: usize,
    files: &'a [&'a str],
}

fn run_split(a: &SplitArgs) -> Result<Outcome> {
    let format: Format = a.format.parse()?;
    let protocol: SplitProtocol = a.protocol.parse()?;
    let ratios: SplitRatios = a.ratios.parse()?;
    let ds = load_interactions(&a.input, format)?;
    let input_bytes = std::fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let (rest, iid) = match a.iid_holdout {
        // separate seed stream from the split itself
        Some(f) => {
            let (rest, iid) = holdout_iid(&ds, f, a.seed.wrapping_add(0x9e37_79b9))?;
            (rest, Some(iid))
        }
        None => (ds.clone(), None),
    };
    let bundle = split(&rest, protocol, ratios, a.seed)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_interactions(&bundle.train, dir.join("train.tsv"), Format::Tsv)?;
    write_interactions(&bundle.validation, dir.join("validation.tsv"), Format::Tsv)?;
    write_interactions(&bundle.test, dir.join("test.tsv"), Format::Tsv)?;
    write_ids(ds.user_ids(), dir.join("users.txt"))?;
    write_ids(ds.item_ids(), dir.join("items.txt"))?;
    let mut files = vec!["train.tsv", "validation.tsv", "test.tsv", "users.txt", "items.txt"];
    if let Some(iid) = &iid {
        write_interactions(iid, dir.join("test_iid.tsv"), Format::Tsv)?;
        files.push("test_iid.tsv");
    }
    let manifest = SplitManifest {
        protocol_tag: protocol,
        ratios: [ratios.train, ratios.validation, ratios.test],
        seed: a.seed,
        input_sha256: sha256_hex(&input_bytes),
        interactions: ds.len(),
        users: ds.num_users(),
        items: ds.num_items(),
        train: bundle.train.len(),
        validation: bundle.validation.len(),
        test: bundle.test.len(),
        iid_holdout: a.iid_holdout,
        test_iid: iid.as_ref().map(|d| d.len()),
        users_without_train: bundle.warnings.users_without_train,
        items_without_train: bundle.warnings.items_without_train,
        files: &files,
    };
    let json = serde_json::to_value(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&json).unwrap() + "\n"))?;
    let mut out = Outcome::new(
        format!(
            "split {} interactions ({protocol}): train {}, validation {}, test {}{}\n",
            ds.len(),
            manifest.train,
            manifest.validation,
            manifest.test,
            iid.as_ref().map(|d| format!(", test_iid {}", d.len())).unwrap_or_default()
        ),
        json,
    );
    let w = bundle.warnings;
    if w.users_without_train > 0 || w.items_without_train > 0 {
        out.warnings.push(format!(
            "{} users and {} items have no training interaction",
            w.users_without_train, w.items_without_train
        ));
    }
    Ok(out)
}

fn run_train(a: &TrainArgs) -> Result<Outcome> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            TrainConfig::from_config_text(&text)?
        }
        None => TrainConfig::default(),
    };
    let flags = [
        ("loss", &a.loss),
        ("lr", &a.lr),
        ("lambda_reg", &a.lambda_reg),
        ("epochs", &a.epochs),
        ("batch_size", &a.batch_size),
        ("dim", &a.dim),
        ("seed", &a.seed),
        ("normalize_users", &a.normalize_users),
        ("negatives_per_positive", &a.negatives_per_positive),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;

    let format: Format = a.format.parse()?;
    let mut warnings = Vec::new();
    let (users_file, items_file) = (sibling(&a.train_file, "users.txt"), sibling(&a.train_file, "items.txt"));
    let ds = if users_file.exists() && items_file.exists() {
        let (users, items) = (read_ids(&users_file)?, read_ids(&items_file)?);
        let (ds, unknown) = load_interactions_in(&a.train_file, format, &users, &items)?;
        if unknown > 0 {
            warnings.push(format!("skipped {unknown} training rows with ids missing from users.txt/items.txt"));
        }
        ds
    } else {
        load_interactions(&a.train_file, format)?
    };
    if ds.is_empty() {
        return Err(Error::EmptyDataset(a.train_file.display().to_string()));
    }
    let model = init_model(ds.num_users(), ds.num_items(), config.dim, config.init)?;
    let output = train(&ds, model, &config)?;
    if output.skipped_pairs > 0 {
        warnings.push(format!("{} pairs had no available negative and were skipped", output.skipped_pairs));
    }
    let last = output.loss_trace.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    let ckpt = Checkpoint {
        model: output.model,
        accumulators: Some(output.accumulators),
        user_ids: Some(ds.user_ids().clone()),
        item_ids: Some(ds.item_ids().clone()),
        train_config: Some(config.clone()),
    };
    save_checkpoint(&ckpt, &a.out_checkpoint)?;
    write_file(&a.out_checkpoint.join("loss_trace.csv"), &loss_trace_csv(&output.loss_trace))?;
    let mut out = Outcome::new(
        format!(
            "trained {} epochs ({} loss) on {} interactions; final mean loss {last:.6}\n",
            config.epochs,
            config.loss,
            ds.len()
        ),
        json!({
            "epochs": config.epochs,
            "loss": config.loss.to_string(),
            "interactions": ds.len(),
            "final_mean_loss": last,
            "skipped_pairs": output.skipped_pairs,
        }),
    );
    out.warnings = warnings;
    Ok(out)
}

fn run_sweep(a: &SweepArgs) -> Result<Outcome> {
    let source: DirectionSource = a.direction.source.parse()?;
    let metric: SweepMetric = a.metric.parse()?;
    let grid1: GridSpec = a.grid.parse()?;
    let grid2: GridSpec = a.grid2.as_deref().unwrap_or(&a.grid).parse()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (users, items) = read_universe(&ckpt)?;
    let mut warnings = Vec::new();
    let train_path = a.train_file.clone().unwrap_or_else(|| sibling(&a.val_file, "train.tsv"));
    let train = load_in(&train_path, users, items, &mut warnings)?;
    let val = load_in(&a.val_file, users, items, &mut warnings)?;
    let grouping = compute_grouping(&train, a.direction.threshold)?;
    let ctx = build_context(&ckpt.model, ckpt.accumulators.as_ref(), Some(&grouping), source, 0.0, 0.0)?;
    warnings.extend(ctx.warnings.iter().cloned());
    let result = sweep_alphas(&ckpt.model, &ctx, &val, &[&train], &grid1, &grid2, metric, a.k)?;
    let out_path = a.out.clone().unwrap_or_else(|| a.checkpoint.join("sweep.csv"));
    write_file(&out_path, &result.to_csv())?;
    let b = result.best;
    let base = result.cell(0.0, 0.0).copied();
    let mut text = format!(
        "best alpha1={} alpha2={} recall@{k}={:.6} hr@{k}={:.6} ndcg@{k}={:.6} ({} cells, source {source})\n",
        b.alpha1,
        b.alpha2,
        b.recall,
        b.hr,
        b.ndcg,
        result.cells.len(),
        k = a.k
    );
    if let Some(c) = base {
        text.push_str(&format!("baseline alpha1=0 alpha2=0 recall@{}={:.6}\n", a.k, c.recall));
    }
    let mut out = Outcome::new(
        text,
        json!({
            "best": b,
            "baseline": base,
            "cells": result.cells.len(),
            "metric": metric,
            "k": a.k,
            "source": source,
        }),
    );
    out.warnings = warnings;
    Ok(out)
}

/// Loads the parts of a bundle needed to evaluate `split`, returning the
/// target set and the sets to mask.
fn load_eval_sets(
    bundle: &Path,
    split: &str,
    users: &IdMap,
    items: &IdMap,
    warnings: &mut Vec<String>,
) -> Result<(InteractionDataset, Vec<InteractionDataset>)> {
    let train = load_in(&bundle.join("train.tsv"), users, items, warnings)?;
    match split {
        "validation" => Ok((load_in(&bundle.join("validation.tsv"), users, items, warnings)?, vec![train])),
        "test" | "iid" => {
            let val = load_in(&bundle.join("validation.tsv"), users, items, warnings)?;
            let file = if split == "test" { "test.tsv" } else { "test_iid.tsv" };
            Ok((load_in(&bundle.join(file), users, items, warnings)?, vec![train, val]))
        }
        other => Err(Error::Config(format!("unknown split `{other}` (expected test, validation or iid)"))),
    }
}

fn eval_with(
    ckpt: &Checkpoint,
    ctx: Option<&crate::debias::AdjustmentContext>,
    target: &InteractionDataset,
    masks: &[InteractionDataset],
    k_list: &[usize],
    grouping: Option<&crate::dataset::PopularityGrouping>,
) -> Result<EvalReport> {
    let masks: Vec<&InteractionDataset> = masks.iter().collect();
    match ctx {
        Some(c) => evaluate_scorer(&AdjustedModel::new(&ckpt.model, c), target, &masks, k_list, grouping),
        None => evaluate_scorer(&ckpt.model, target, &masks, k_list, grouping),
    }
}

fn run_eval(a: &EvalArgs) -> Result<Outcome> {
    let k_list: Vec<usize> = parse_list(&a.k, "--k")?;
    let source: DirectionSource = a.direction.source.parse()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (users, items) = read_universe(&ckpt)?;
    let mut warnings = Vec::new();
    let (target, masks) = load_eval_sets(&a.bundle_dir, &a.split, users, items, &mut warnings)?;
    let grouping = compute_grouping(&masks[0], a.direction.threshold)?;
    let adjusted = a.alpha1 != 0.0 || a.alpha2 != 0.0;
    let ctx = if adjusted {
        let c = build_context(&ckpt.model, ckpt.accumulators.as_ref(), Some(&grouping), source, a.alpha1, a.alpha2)?;
        warnings.extend(c.warnings.iter().cloned());
        Some(c)
    } else {
        None
    };
    let report = eval_with(&ckpt, ctx.as_ref(), &target, &masks, &k_list, a.groups.then_some(&grouping))?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| a.checkpoint.join(format!("eval-{}", a.split)));
    report.write_dir(&out_dir, Some(users))?;
    let mut text = format!(
        "{} split, alpha1={} alpha2={}: {} users evaluated, {} skipped\n",
        a.split, a.alpha1, a.alpha2, report.users_evaluated, report.users_skipped
    );
    for (k, m) in report.k_list.iter().zip(&report.overall) {
        text.push_str(&format!("recall@{k}={:.6} hr@{k}={:.6} ndcg@{k}={:.6}\n", m.recall, m.hr, m.ndcg));
    }
    let per_k: serde_json::Map<String, serde_json::Value> = report
        .k_list
        .iter()
        .zip(&report.overall)
        .map(|(k, m)| (k.to_string(), metrics_json(m)))
        .collect();
    let mut out = Outcome::new(
        text,
        json!({
            "split": a.split,
            "alpha1": a.alpha1,
            "alpha2": a.alpha2,
            "users_evaluated": report.users_evaluated,
            "users_skipped": report.users_skipped,
            "metrics": per_k,
            "per_group": report.per_group,
        }),
    );
    out.warnings = warnings;
    Ok(out)
}

fn run_diagnose(a: &DiagnoseArgs) -> Result<Outcome> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (users, items) = read_universe(&ckpt)?;
    let acc = ckpt
        .accumulators
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no accumulators; diagnostics need them".into()))?;
    let mut warnings = Vec::new();
    let train = load_in(&a.train_file, users, items, &mut warnings)?;
    let grouping = compute_grouping(&train, a.threshold)?;
    // the initial tables are reproducible from the recorded init spec
    let initial = match &ckpt.train_config {
        Some(cfg) => Some(init_model(train.num_users(), train.num_items(), cfg.dim, cfg.init)?),
        None => {
            warnings.push("checkpoint has no training config; skipping the displacement report".into());
            None
        }
    };
    let diag = run_diagnostics(&ckpt.model, initial.as_ref(), acc, &grouping)?;
    if let Some(w) = &diag.direction.warning {
        warnings.push(w.clone());
    }
    let out_dir = a.out_dir.clone().unwrap_or_else(|| a.checkpoint.join("diagnostics"));
    diag.write_dir(&out_dir, users, items)?;
    let summary: serde_json::Value = serde_json::from_str(&diag.summary_json()).expect("own JSON parses");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let text = format!(
        "mean cos(pos, combined): popular {} unpopular {}\nspearman(count, |pos|-|neg|) {}\n\
         spearman(count, |Q|) {}  spearman(count, |P|) {}\n",
        fmt(diag.direction.popular_mean_cos_pos),
        fmt(diag.direction.unpopular_mean_cos_pos),
        fmt(diag.magnitude.spearman_count_vs_gap),
        fmt(diag.norms.item_spearman),
        fmt(diag.norms.user_spearman),
    );
    let mut out = Outcome::new(text, summary);
    out.warnings = warnings;
    Ok(out)
}

fn run_mix_eval(a: &MixEvalArgs) -> Result<Outcome> {
    let proportions: Vec<f64> = parse_list(&a.proportions, "--proportions")?;
    let source: DirectionSource = a.direction.source.parse()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (users, items) = read_universe(&ckpt)?;
    let mut warnings = Vec::new();
    let (intervened, masks) = load_eval_sets(&a.bundle_dir, "test", users, items, &mut warnings)?;
    let iid = load_in(&a.bundle_dir.join("test_iid.tsv"), users, items, &mut warnings)?;
    let grouping = compute_grouping(&masks[0], a.direction.threshold)?;
    let ctx = build_context(&ckpt.model, ckpt.accumulators.as_ref(), Some(&grouping), source, a.alpha1, a.alpha2)?;
    warnings.extend(ctx.warnings.iter().cloned());

    let mut csv = String::from(
        "proportion,size,vanilla_recall,vanilla_hr,vanilla_ndcg,adjusted_recall,adjusted_hr,adjusted_ndcg,recall_advantage\n",
    );
    let mut text = format!("alpha1={} alpha2={} k={}\n", a.alpha1, a.alpha2, a.k);
    let mut rows = Vec::new();
    for &p in &proportions {
        let mixed = mix_test_sets(&intervened, &iid, p, a.seed)?;
        let van = eval_with(&ckpt, None, &mixed, &masks, &[a.k], None)?.overall[0];
        let adj = eval_with(&ckpt, Some(&ctx), &mixed, &masks, &[a.k], None)?.overall[0];
        let advantage = adj.recall - van.recall;
        csv.push_str(&format!(
            "{p},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            mixed.len(),
            van.recall,
            van.hr,
            van.ndcg,
            adj.recall,
            adj.hr,
            adj.ndcg,
            advantage
        ));
        text.push_str(&format!(
            "proportion {p}: vanilla recall@{k} {:.6}, adjusted {:.6} ({:+.6})\n",
            van.recall,
            adj.recall,
            advantage,
            k = a.k
        ));
        rows.push(json!({
            "proportion": p,
            "size": mixed.len(),
            "vanilla": metrics_json(&van),
            "adjusted": metrics_json(&adj),
            "recall_advantage": advantage,
        }));
    }
    let out_path = a.out.clone().unwrap_or_else(|| a.checkpoint.join("mix_eval.csv"));
    write_file(&out_path, &csv)?;
    let mut out = Outcome::new(text, json!({ "alpha1": a.alpha1, "alpha2": a.alpha2, "k": a.k, "rows": rows }));
    out.warnings = warnings;
    Ok(out)
}

fn run_synth(a: &SynthArgs) -> Result<Outcome> {
    let cfg = SynthConfig {
        num_users: a.users,
        num_items: a.items,
        exponent: a.exponent,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_interactions(&ds, &a.out, Format::Tsv)?;
    Ok(Outcome::new(
        format!("wrote {} interactions ({} users, {} items)\n", ds.len(), ds.num_users(), ds.num_items()),
        json!({ "interactions": ds.len(), "users": ds.num_users(), "items": ds.num_items() }),
    ))
}
