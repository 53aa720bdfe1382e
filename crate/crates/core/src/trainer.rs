//! SGD training of the embedding model with BPR or BCE loss.
//!
//! Alongside the parameter updates the trainer records, per entity, the sum
//! of every loss-driven update it applied: `user_acc` for users and, for
//! items, separate sums for updates received as a positive item
//! (`item_pos_acc`) and as a sampled negative (`item_neg_acc`). All
//! accumulators hold applied updates (`-lr * gradient`, already divided by the
//! batch length), excluding the L2 shrinkage term. With `lambda_reg = 0` this
//! makes `Q_final - Q_init == item_acc` an identity.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Embeddings};
use crate::model::{init_model, EmbeddingModel, InitDistribution, InitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Bpr,
    Bce,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Bpr => "bpr",
            Loss::Bce => "bce",
        })
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpr" => Ok(Loss::Bpr),
            "bce" => Ok(Loss::Bce),
            other => Err(Error::Config(format!("unknown loss `{other}` (expected bpr or bce)"))),
        }
    }
}

/// Training hyperparameters. `dim` and `init` are only consulted by [`fit`],
/// which creates the model before training it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub lr: f64,
    pub lambda_reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub normalize_users: bool,
    /// Negatives per positive pair. BPR always uses one.
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub dim: usize,
    pub init: InitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Bpr,
            lr: 0.05,
            lambda_reg: 1e-4,
            epochs: 50,
            batch_size: 1,
            normalize_users: true,
            negatives_per_positive: 1,
            seed: 0,
            dim: 64,
            init: InitSpec::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and non-negative (got {})", self.lr)));
        }
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg must be non-negative (got {})", self.lambda_reg)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "loss" => self.loss = value.parse()?,
            "lr" => self.lr = parse_value(key, value)?,
            "lambda_reg" => self.lambda_reg = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "normalize_users" => self.normalize_users = parse_bool(key, value)?,
            "negatives_per_positive" => self.negatives_per_positive = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "init_distribution" => {
                self.init.distribution = match value {
                    "gaussian" => InitDistribution::Gaussian,
                    "uniform" => InitDistribution::Uniform,
                    _ => return Err(Error::Config(format!("`{key}`: expected gaussian or uniform, got `{value}`"))),
                }
            }
            "init_scale" => self.init.scale = parse_value(key, value)?,
            "init_seed" => self.init.seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parses back to an identical config.
    pub fn to_config_text(&self) -> String {
        let dist = match self.init.distribution {
            InitDistribution::Gaussian => "gaussian",
            InitDistribution::Uniform => "uniform",
        };
        format!(
            "loss = {}\nlr = {:?}\nlambda_reg = {:?}\nepochs = {}\nbatch_size = {}\nnormalize_users = {}\n\
             negatives_per_positive = {}\nseed = {}\ndim = {}\ninit_distribution = {dist}\n\
             init_scale = {:?}\ninit_seed = {}\n",
            self.loss,
            self.lr,
            self.lambda_reg,
            self.epochs,
            self.batch_size,
            self.normalize_users,
            self.negatives_per_positive,
            self.seed,
            self.dim,
            self.init.scale,
            self.init.seed,
        )
    }
}

/// Per-entity sums of applied loss updates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulators {
    pub user_acc: Embeddings,
    /// Always `item_pos_acc + item_neg_acc`.
    pub item_acc: Embeddings,
    pub item_pos_acc: Embeddings,
    pub item_neg_acc: Embeddings,
}

impl GradientAccumulators {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            user_acc: Embeddings::zeros(num_users, dim),
            item_acc: Embeddings::zeros(num_items, dim),
            item_pos_acc: Embeddings::zeros(num_items, dim),
            item_neg_acc: Embeddings::zeros(num_items, dim),
        }
    }

    /// Largest elementwise `|item_acc - (item_pos_acc + item_neg_acc)|`.
    pub fn split_drift(&self) -> f64 {
        self.item_acc
            .as_slice()
            .iter()
            .zip(self.item_pos_acc.as_slice())
            .zip(self.item_neg_acc.as_slice())
            .map(|((c, p), n)| (c - (p + n)).abs())
            .fold(0.0, f64::max)
    }

    fn add_positive(&mut self, item: usize, scale: f64, v: &[f64]) {
        axpy(scale, v, self.item_pos_acc.row_mut(item));
        axpy(scale, v, self.item_acc.row_mut(item));
    }

    fn add_negative(&mut self, item: usize, scale: f64, v: &[f64]) {
        axpy(scale, v, self.item_neg_acc.row_mut(item));
        axpy(scale, v, self.item_acc.row_mut(item));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The vector a user scores with, and the factor mapping a gradient with
/// respect to it back onto the stored vector.
struct UserView {
    v: Vec<f64>,
    /// Stored norm when normalization applies.
    scale: Option<f64>,
}

impl UserView {
    fn new(p: &[f64], normalize: bool) -> Self {
        if normalize {
            let n = norm(p);
            if n > 0.0 {
                let v: Vec<f64> = p.iter().map(|x| x / n).collect();
                debug_assert!((norm(&v) - 1.0).abs() <= 1e-12);
                return Self { v, scale: Some(n) };
            }
        }
        Self { v: p.to_vec(), scale: None }
    }

    /// Pulls `g = dL/dv` back to `dL/dP`: identity, or
    /// `(g - (v.g) v) / |P|` through the normalization map.
    fn pull_back(&self, g: &mut [f64]) {
        if let Some(n) = self.scale {
            let along = dot(&self.v, g);
            for (gk, vk) in g.iter_mut().zip(&self.v) {
                *gk = (*gk - along * vk) / n;
            }
        }
    }
}

/// Loss-only gradient pieces of one BPR triplet (no regularization).
struct BprParts {
    loss: f64,
    /// `sigma(y_uj - y_ui)`
    weight: f64,
    user_view: Vec<f64>,
    user: Vec<f64>,
}

fn bpr_parts(p: &[f64], qi: &[f64], qj: &[f64], normalize: bool) -> BprParts {
    let view = UserView::new(p, normalize);
    let diff = dot(&view.v, qi) - dot(&view.v, qj);
    let weight = sigmoid(-diff);
    let mut user: Vec<f64> = qi.iter().zip(qj).map(|(a, b)| -weight * (a - b)).collect();
    view.pull_back(&mut user);
    BprParts {
        loss: softplus(-diff),
        weight,
        user_view: view.v,
        user,
    }
}

/// Full gradient of the minimized BPR objective for one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradients {
    pub loss: f64,
    /// `sigma(y_uj - y_ui)`, the pairwise weight shared by all three terms.
    pub weight: f64,
    pub user: Vec<f64>,
    pub pos_item: Vec<f64>,
    pub neg_item: Vec<f64>,
}

fn sq(v: &[f64]) -> f64 {
    dot(v, v)
}

fn check_triplet(model: &EmbeddingModel, t: Triplet) -> Result<()> {
    model.user_vector(t.user)?;
    model.item_vector(t.pos)?;
    model.item_vector(t.neg)?;
    Ok(())
}

/// `-log sigma(y_ui - y_uj) + lambda (|P_u|^2 + |Q_i|^2 + |Q_j|^2)`, scores
/// taken as [`EmbeddingModel::score`] computes them.
pub fn bpr_loss(model: &EmbeddingModel, t: Triplet, lambda_reg: f64) -> Result<f64> {
    check_triplet(model, t)?;
    let (p, qi, qj) = (model.users.row(t.user), model.items.row(t.pos), model.items.row(t.neg));
    let diff = model.score(t.user, t.pos)? - model.score(t.user, t.neg)?;
    Ok(softplus(-diff) + lambda_reg * (sq(p) + sq(qi) + sq(qj)))
}

pub fn bpr_gradients(model: &EmbeddingModel, t: Triplet, lambda_reg: f64) -> Result<TripletGradients> {
    check_triplet(model, t)?;
    let (p, qi, qj) = (model.users.row(t.user), model.items.row(t.pos), model.items.row(t.neg));
    let parts = bpr_parts(p, qi, qj, model.normalize_users);
    let reg = 2.0 * lambda_reg;
    let mut user = parts.user;
    axpy(reg, p, &mut user);
    let mut pos_item: Vec<f64> = parts.user_view.iter().map(|x| -parts.weight * x).collect();
    axpy(reg, qi, &mut pos_item);
    let mut neg_item: Vec<f64> = parts.user_view.iter().map(|x| parts.weight * x).collect();
    axpy(reg, qj, &mut neg_item);
    Ok(TripletGradients {
        loss: parts.loss + lambda_reg * (sq(p) + sq(qi) + sq(qj)),
        weight: parts.weight,
        user,
        pos_item,
        neg_item,
    })
}

/// Loss and gradients of one labelled pair under binary cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub loss: f64,
    /// `sigma(score) - label`
    pub dscore: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

struct BceParts {
    loss: f64,
    dscore: f64,
    user_view: Vec<f64>,
    user: Vec<f64>,
}

fn bce_parts(p: &[f64], q: &[f64], label: f64, normalize: bool) -> BceParts {
    let view = UserView::new(p, normalize);
    let s = dot(&view.v, q);
    // -y log sigma(s) - (1-y) log(1 - sigma(s)) == softplus(s) - y s
    let loss = softplus(s) - label * s;
    let dscore = sigmoid(s) - label;
    let mut user: Vec<f64> = q.iter().map(|x| dscore * x).collect();
    view.pull_back(&mut user);
    BceParts {
        loss,
        dscore,
        user_view: view.v,
        user,
    }
}

/// BCE with `p = sigma(score(u, i))`, plus `lambda (|P_u|^2 + |Q_i|^2)`.
pub fn bce_loss_and_gradients(
    model: &EmbeddingModel,
    user: usize,
    item: usize,
    label: bool,
    lambda_reg: f64,
) -> Result<PairGradients> {
    model.user_vector(user)?;
    model.item_vector(item)?;
    let (p, q) = (model.users.row(user), model.items.row(item));
    let parts = bce_parts(p, q, if label { 1.0 } else { 0.0 }, model.normalize_users);
    let reg = 2.0 * lambda_reg;
    let mut gu = parts.user;
    axpy(reg, p, &mut gu);
    let mut gi: Vec<f64> = parts.user_view.iter().map(|x| parts.dscore * x).collect();
    axpy(reg, q, &mut gi);
    Ok(PairGradients {
        loss: parts.loss + lambda_reg * (sq(p) + sq(q)),
        dscore: parts.dscore,
        user: gu,
        item: gi,
    })
}

const REJECTION_ATTEMPTS: usize = 100;

/// Uniform draw from the items `user` has not interacted with. Rejection
/// sampling first, then an explicit walk over the complement.
pub fn sample_negative<R: Rng>(ds: &InteractionDataset, user: usize, rng: &mut R) -> Option<usize> {
    let n = ds.num_items();
    let pos = ds.positives(user);
    if pos.len() >= n {
        return None;
    }
    for _ in 0..REJECTION_ATTEMPTS {
        let j = rng.random_range(0..n);
        if pos.binary_search(&j).is_err() {
            return Some(j);
        }
    }
    let mut k = rng.random_range(0..n - pos.len());
    // positives are sorted, so skip over each one at or below the candidate
    for &p in pos {
        if p <= k {
            k += 1;
        } else {
            break;
        }
    }
    Some(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSamples {
    pub triplets: Vec<Triplet>,
    /// Pairs whose user has no non-positive item.
    pub skipped: usize,
}

pub fn sample_negatives(ds: &InteractionDataset, positives: &[(usize, usize)], seed: u64) -> NegativeSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(positives.len());
    let mut skipped = 0;
    for &(user, pos) in positives {
        match sample_negative(ds, user, &mut rng) {
            Some(neg) => triplets.push(Triplet { user, pos, neg }),
            None => skipped += 1,
        }
    }
    NegativeSamples { triplets, skipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EmbeddingModel,
    pub accumulators: GradientAccumulators,
    pub loss_trace: Vec<EpochLoss>,
    /// Positive pairs skipped because their user has no possible negative.
    pub skipped_pairs: usize,
}

/// Parameter updates gathered over one batch and applied afterwards, in push
/// order, so every example in a batch sees the same parameters.
struct PendingUpdates {
    user_rows: Vec<usize>,
    user_deltas: Vec<f64>,
    item_rows: Vec<usize>,
    item_deltas: Vec<f64>,
}

impl PendingUpdates {
    fn new() -> Self {
        Self {
            user_rows: Vec::new(),
            user_deltas: Vec::new(),
            item_rows: Vec::new(),
            item_deltas: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.user_rows.clear();
        self.user_deltas.clear();
        self.item_rows.clear();
        self.item_deltas.clear();
    }

    fn user(&mut self, row: usize, scale: f64, g: &[f64]) {
        self.user_rows.push(row);
        self.user_deltas.extend(g.iter().map(|x| scale * x));
    }

    fn item(&mut self, row: usize, scale: f64, g: &[f64]) {
        self.item_rows.push(row);
        self.item_deltas.extend(g.iter().map(|x| scale * x));
    }

    /// Applies the updates and reports whether every touched row is finite.
    fn apply(&self, model: &mut EmbeddingModel) -> bool {
        let d = model.dim();
        for (k, &r) in self.user_rows.iter().enumerate() {
            axpy(1.0, &self.user_deltas[k * d..(k + 1) * d], model.users.row_mut(r));
        }
        for (k, &r) in self.item_rows.iter().enumerate() {
            axpy(1.0, &self.item_deltas[k * d..(k + 1) * d], model.items.row_mut(r));
        }
        self.user_rows.iter().all(|&r| model.users.row(r).iter().all(|x| x.is_finite()))
            && self.item_rows.iter().all(|&r| model.items.row(r).iter().all(|x| x.is_finite()))
    }
}

/// Runs `config.epochs` passes of mini-batch SGD over the training pairs.
///
/// Each epoch shuffles the positive pairs, cuts them into batches of
/// `batch_size`, draws negatives, computes every example's gradient against
/// the pre-batch parameters and then steps by `lr` times the batch-mean
/// gradient. Deterministic given `config.seed`.
pub fn train(ds: &InteractionDataset, mut model: EmbeddingModel, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("no training interactions".into()));
    }
    if model.num_users() != ds.num_users() || model.num_items() != ds.num_items() {
        return Err(Error::Config(format!(
            "model is {}x{} (users x items) but the dataset is {}x{}",
            model.num_users(),
            model.num_items(),
            ds.num_users(),
            ds.num_items()
        )));
    }
    model.normalize_users = config.normalize_users;
    let normalize = config.normalize_users;
    let lambda = config.lambda_reg;
    let reg = 2.0 * lambda;
    let mut acc = GradientAccumulators::zeros(model.num_users(), model.num_items(), model.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = ds.interactions().to_vec();
    let mut pending = PendingUpdates::new();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut skipped_pairs = 0;
    let mut grad = vec![0.0; model.dim()];

    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut batch_losses = 0.0;
        let mut batches = 0usize;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            pending.clear();
            let step = config.lr / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &(u, i) in batch {
                let p = model.users.row(u);
                match config.loss {
                    Loss::Bpr => {
                        let Some(j) = sample_negative(ds, u, &mut rng) else {
                            skipped_pairs += 1;
                            continue;
                        };
                        let (qi, qj) = (model.items.row(i), model.items.row(j));
                        let parts = bpr_parts(p, qi, qj, normalize);
                        batch_loss += parts.loss + lambda * (sq(p) + sq(qi) + sq(qj));

                        axpy(-step, &parts.user, acc.user_acc.row_mut(u));
                        acc.add_positive(i, step * parts.weight, &parts.user_view);
                        acc.add_negative(j, -step * parts.weight, &parts.user_view);

                        grad.copy_from_slice(&parts.user);
                        axpy(reg, p, &mut grad);
                        pending.user(u, -step, &grad);
                        grad.iter_mut().zip(&parts.user_view).for_each(|(g, v)| *g = -parts.weight * v);
                        axpy(reg, qi, &mut grad);
                        pending.item(i, -step, &grad);
                        grad.iter_mut().zip(&parts.user_view).for_each(|(g, v)| *g = parts.weight * v);
                        axpy(reg, qj, &mut grad);
                        pending.item(j, -step, &grad);
                    }
                    Loss::Bce => {
                        let mut targets = Vec::with_capacity(1 + config.negatives_per_positive);
                        targets.push((i, 1.0));
                        for _ in 0..config.negatives_per_positive {
                            match sample_negative(ds, u, &mut rng) {
                                Some(j) => targets.push((j, 0.0)),
                                None => break,
                            }
                        }
                        if targets.len() == 1 {
                            skipped_pairs += 1;
                            continue;
                        }
                        for (item, label) in targets {
                            let q = model.items.row(item);
                            let parts = bce_parts(p, q, label, normalize);
                            batch_loss += parts.loss + lambda * (sq(p) + sq(q));

                            axpy(-step, &parts.user, acc.user_acc.row_mut(u));
                            if label > 0.0 {
                                acc.add_positive(item, -step * parts.dscore, &parts.user_view);
                            } else {
                                acc.add_negative(item, -step * parts.dscore, &parts.user_view);
                            }

                            grad.copy_from_slice(&parts.user);
                            axpy(reg, p, &mut grad);
                            pending.user(u, -step, &grad);
                            grad.iter_mut().zip(&parts.user_view).for_each(|(g, v)| *g = parts.dscore * v);
                            axpy(reg, q, &mut grad);
                            pending.item(item, -step, &grad);
                        }
                    }
                }
            }
            if !pending.apply(&mut model) || !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, batch: b + 1 });
            }
            batch_losses += batch_loss / batch.len() as f64;
            batches += 1;
        }
        loss_trace.push(EpochLoss {
            epoch: epoch + 1,
            mean_loss: batch_losses / batches as f64,
        });
    }
    Ok(TrainOutput {
        model,
        accumulators: acc,
        loss_trace,
        skipped_pairs,
    })
}

/// Initializes a model from `config.dim` / `config.init` and trains it.
pub fn fit(ds: &InteractionDataset, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let model = init_model(ds.num_users(), ds.num_items(), config.dim, config.init)?;
    train(ds, model, config)
}

/// `epoch,mean_loss` CSV.
pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for e in trace {
        out.push_str(&format!("{},{:?}\n", e.epoch, e.mean_loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(users: &[Vec<f64>], items: &[Vec<f64>], normalize: bool) -> EmbeddingModel {
        EmbeddingModel::from_tables(Embeddings::from_rows(users), Embeddings::from_rows(items), normalize).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bpr_loss_examples() {
        let m = model(&[vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let t = Triplet { user: 0, pos: 0, neg: 1 };
        assert!(close(bpr_loss(&m, t, 0.0).unwrap(), 0.313_261_687_518_222_8, 1e-12));
        let sym = model(&[vec![1.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        assert!(close(bpr_loss(&sym, t, 0.0).unwrap(), std::f64::consts::LN_2, 1e-15));
        let zero = model(&[vec![0.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]], false);
        assert!(close(bpr_loss(&zero, t, 1.0).unwrap(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn bpr_gradient_examples() {
        let m = model(&[vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let g = bpr_gradients(&m, Triplet { user: 0, pos: 0, neg: 1 }, 0.0).unwrap();
        assert!(close(g.user[0], -0.268_941_421_369_995_1, 1e-12));
        assert!(close(g.user[1], 0.268_941_421_369_995_1, 1e-12));

        let sym = model(&[vec![2.0, 2.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let g = bpr_gradients(&sym, Triplet { user: 0, pos: 0, neg: 1 }, 0.0).unwrap();
        assert_eq!(g.weight, 0.5);
        assert_eq!(g.pos_item, vec![-1.0, -1.0]);

        let sat = model(&[vec![1000.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], false);
        let g = bpr_gradients(&sat, Triplet { user: 0, pos: 0, neg: 1 }, 0.0).unwrap();
        assert!(g.user.iter().chain(&g.pos_item).chain(&g.neg_item).all(|x| x.abs() < 1e-300));
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn bce_examples() {
        let zero = model(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], false);
        let g = bce_loss_and_gradients(&zero, 0, 0, true, 0.0).unwrap();
        assert!(close(g.loss, std::f64::consts::LN_2, 1e-15));
        assert_eq!(g.dscore, -0.5);

        let big = model(&[vec![50.0, 0.0]], &[vec![1.0, 0.0]], false);
        let g = bce_loss_and_gradients(&big, 0, 0, true, 0.0).unwrap();
        assert!(g.loss < 1e-20 && g.dscore.abs() < 1e-20);

        let m = model(&[vec![1.0, 0.0]], &[vec![2.0, 0.0]], false);
        let g = bce_loss_and_gradients(&m, 0, 0, false, 0.0).unwrap();
        assert!(close(g.dscore, 0.880_797_077_977_882_3, 1e-12));
        assert!(close(g.item[0], 0.880_797_077_977_882_3, 1e-12));
        assert_eq!(g.item[1], 0.0);
        // large negative margin stays finite
        let far = model(&[vec![-800.0]], &[vec![1.0]], false);
        let g = bce_loss_and_gradients(&far, 0, 0, true, 0.0).unwrap();
        assert!(g.loss.is_finite() && close(g.loss, 800.0, 1e-9));
    }

    #[test]
    fn forced_complement_negative() {
        let ds = InteractionDataset::from_pairs([("a", "x"), ("b", "y")]).unwrap();
        let s = sample_negatives(&ds, &[(0, 0); 50], 3);
        assert!(s.triplets.iter().all(|t| t.neg == 1));
    }

    #[test]
    fn user_with_every_item_is_skipped() {
        let ds = InteractionDataset::from_pairs([("a", "x"), ("a", "y"), ("b", "x")]).unwrap();
        let s = sample_negatives(&ds, &[(0, 0), (1, 0)], 3);
        assert_eq!(s.skipped, 1);
        assert_eq!(s.triplets, vec![Triplet { user: 1, pos: 0, neg: 1 }]);
    }

    #[test]
    fn complement_walk_finds_each_free_item() {
        // dense user: only items 2, 5, 9 of 10 are free; the rejection loop
        // rarely succeeds, so the walk must land on every free item
        let mut pairs: Vec<(String, String)> = (0..10)
            .filter(|i| ![2, 5, 9].contains(i))
            .map(|i| ("a".into(), format!("{i}")))
            .collect();
        pairs.extend(["2", "5", "9"].map(|i| ("b".to_string(), i.to_string())));
        let ds = InteractionDataset::from_pairs(pairs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let free: Vec<usize> = ["2", "5", "9"].iter().map(|i| ds.item_ids().index_of(i).unwrap()).collect();
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..300 {
            let j = sample_negative(&ds, 0, &mut rng).unwrap();
            assert!(free.contains(&j));
            seen.insert(j);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn zero_lr_leaves_model_and_accumulators_untouched() {
        let ds = InteractionDataset::from_pairs([("a", "x"), ("b", "y"), ("a", "z")]).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, dim: 4, ..Default::default() };
        let m0 = init_model(2, 3, 4, cfg.init).unwrap();
        let out = train(&ds, m0.clone(), &cfg).unwrap();
        assert_eq!(out.model.users(), m0.users());
        assert_eq!(out.model.items(), m0.items());
        assert!(out.accumulators.item_acc.as_slice().iter().all(|&x| x == 0.0));
        assert!(out.accumulators.user_acc.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_normalized_step_uses_unit_user_vector() {
        let ds = InteractionDataset::from_pairs([("a", "x"), ("b", "y")]).unwrap();
        let cfg = TrainConfig { lr: 0.1, epochs: 1, dim: 3, lambda_reg: 0.0, ..Default::default() };
        let m0 = model(&[vec![3.0, 0.0, 4.0], vec![0.0, 2.0, 0.0]], &[vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 0.2]], true);
        let out = train(&ds, m0, &cfg).unwrap();
        let acc = &out.accumulators;
        // each item was positive once; |increment| = lr * weight with unit user vector
        for (u, i) in [(0, 0), (1, 1)] {
            let inc = acc.item_pos_acc.row(i);
            let w = norm(inc) / 0.1;
            assert!(w > 0.0 && w < 1.0);
            let expected: Vec<f64> = if u == 0 { vec![0.6, 0.0, 0.8] } else { vec![0.0, 1.0, 0.0] };
            for (a, b) in inc.iter().zip(&expected) {
                assert!(close(a / (0.1 * w), *b, 1e-12));
            }
        }
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TrainConfig {
            loss: Loss::Bce,
            lr: 0.0123,
            lambda_reg: 1e-5,
            epochs: 7,
            batch_size: 32,
            normalize_users: false,
            negatives_per_positive: 4,
            seed: 99,
            dim: 16,
            init: InitSpec { distribution: InitDistribution::Uniform, scale: 0.3, seed: 5 },
        };
        assert_eq!(TrainConfig::from_config_text(&cfg.to_config_text()).unwrap(), cfg);
    }

    #[test]
    fn config_text_errors() {
        assert!(TrainConfig::from_config_text("bogus = 1").is_err());
        assert!(TrainConfig::from_config_text("lr 0.1").is_err());
        assert!(TrainConfig::from_config_text("epochs = 0").is_err());
        let c = TrainConfig::from_config_text("# comment\nloss = bce # inline\n\nlr = 0.2\n").unwrap();
        assert_eq!((c.loss, c.lr), (Loss::Bce, 0.2));
    }

    #[test]
    fn loss_trace_csv_format() {
        let csv = loss_trace_csv(&[EpochLoss { epoch: 1, mean_loss: 0.5 }]);
        assert_eq!(csv, "epoch,mean_loss\n1,0.5\n");
    }
}
