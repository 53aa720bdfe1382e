//! Post-hoc removal of the popular direction from item embeddings and of the
//! conformity direction from user embeddings.
//!
//! For a unit direction `d`, the adjusted vector is `v - alpha (v . d) d`:
//! `alpha = 1` removes the component along `d` entirely, `alpha > 1`
//! over-subtracts and flips its sign. Both directions are estimated once per
//! trained model, either from the mean embedding of popular items / active
//! users or from the training accumulators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, PopularityGrouping};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_scorer, MetricSummary, Scorer};
use crate::linalg::{dot, normalized, Embeddings};
use crate::model::EmbeddingModel;
use crate::trainer::GradientAccumulators;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    /// Mean of all items' `item_acc` / all users' `user_acc`.
    Accumulators,
    /// Mean embedding of popular items / active users.
    MeanPopularEmbeddings,
}

impl fmt::Display for DirectionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectionSource::Accumulators => "acc",
            DirectionSource::MeanPopularEmbeddings => "emb",
        })
    }
}

impl FromStr for DirectionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" | "accumulators" => Ok(DirectionSource::Accumulators),
            "emb" | "mean_popular_embeddings" => Ok(DirectionSource::MeanPopularEmbeddings),
            other => Err(Error::Config(format!("unknown direction source `{other}` (expected emb or acc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustmentContext {
    /// Unit vector, or all zeros when its source mean vanished.
    pub popular_direction: Vec<f64>,
    pub conformity_direction: Vec<f64>,
    /// Item-popularity coefficient.
    pub alpha1: f64,
    /// User-conformity coefficient.
    pub alpha2: f64,
    pub source: DirectionSource,
    pub warnings: Vec<String>,
}

impl AdjustmentContext {
    /// A context with explicit directions; each is normalized here.
    pub fn from_directions(popular: &[f64], conformity: &[f64], alpha1: f64, alpha2: f64) -> Self {
        Self {
            popular_direction: normalized(popular),
            conformity_direction: normalized(conformity),
            alpha1,
            alpha2,
            source: DirectionSource::MeanPopularEmbeddings,
            warnings: Vec::new(),
        }
    }

    pub fn with_alphas(&self, alpha1: f64, alpha2: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            ..self.clone()
        }
    }
}

/// Estimates both directions from the chosen source and normalizes them.
pub fn build_context(
    model: &EmbeddingModel,
    accumulators: Option<&GradientAccumulators>,
    grouping: Option<&PopularityGrouping>,
    source: DirectionSource,
    alpha1: f64,
    alpha2: f64,
) -> Result<AdjustmentContext> {
    let (item_mean, user_mean) = match source {
        DirectionSource::Accumulators => {
            let acc = accumulators.ok_or_else(|| {
                Error::Config("direction source `acc` needs a checkpoint with accumulators".into())
            })?;
            (
                acc.item_acc.mean_of(0..acc.item_acc.rows()),
                acc.user_acc.mean_of(0..acc.user_acc.rows()),
            )
        }
        DirectionSource::MeanPopularEmbeddings => {
            let g = grouping
                .ok_or_else(|| Error::Config("direction source `emb` needs a popularity grouping".into()))?;
            if g.num_items() != model.num_items() || g.num_users() != model.num_users() {
                return Err(Error::Config("grouping was computed over a different universe".into()));
            }
            (
                model.items().mean_of(g.popular_items()),
                model.users().mean_of(g.active_users()),
            )
        }
    };
    let mut warnings = Vec::new();
    if item_mean.iter().all(|&x| x == 0.0) {
        warnings.push("popular direction is zero; item adjustment is the identity".to_owned());
    }
    if user_mean.iter().all(|&x| x == 0.0) {
        warnings.push("conformity direction is zero; user adjustment is the identity".to_owned());
    }
    Ok(AdjustmentContext {
        popular_direction: normalized(&item_mean),
        conformity_direction: normalized(&user_mean),
        alpha1,
        alpha2,
        source,
        warnings,
    })
}

/// `v - alpha (v . d) d`. With a unit `d` this equals
/// `v - alpha cos(v, d) |v| d`, and it is defined at `v = 0`.
pub fn remove_projection(v: &[f64], direction: &[f64], alpha: f64) -> Vec<f64> {
    let c = alpha * dot(v, direction);
    v.iter().zip(direction).map(|(x, d)| x - c * d).collect()
}

pub fn adjust_item(item: &[f64], ctx: &AdjustmentContext) -> Vec<f64> {
    remove_projection(item, &ctx.popular_direction, ctx.alpha1)
}

pub fn adjust_user(user: &[f64], ctx: &AdjustmentContext) -> Vec<f64> {
    remove_projection(user, &ctx.conformity_direction, ctx.alpha2)
}

/// Score of the adjusted raw user vector against the adjusted item vector.
/// The stored (unnormalized) user vector is used.
pub fn adjusted_score(model: &EmbeddingModel, ctx: &AdjustmentContext, user: usize, item: usize) -> Result<f64> {
    let p = adjust_user(model.user_vector(user)?, ctx);
    let q = adjust_item(model.item_vector(item)?, ctx);
    Ok(dot(&p, &q))
}

fn adjust_table(table: &Embeddings, direction: &[f64], alpha: f64) -> Embeddings {
    let mut out = table.clone();
    for r in 0..table.rows() {
        let adjusted = remove_projection(table.row(r), direction, alpha);
        out.row_mut(r).copy_from_slice(&adjusted);
    }
    out
}

/// Model with every user and item vector adjusted once up front.
#[derive(Debug, Clone)]
pub struct AdjustedModel {
    users: Embeddings,
    items: Embeddings,
}

impl AdjustedModel {
    pub fn new(model: &EmbeddingModel, ctx: &AdjustmentContext) -> Self {
        Self {
            users: adjust_table(model.users(), &ctx.conformity_direction, ctx.alpha2),
            items: adjust_table(model.items(), &ctx.popular_direction, ctx.alpha1),
        }
    }

    pub fn users(&self) -> &Embeddings {
        &self.users
    }

    pub fn items(&self) -> &Embeddings {
        &self.items
    }
}

impl Scorer for AdjustedModel {
    fn num_users(&self) -> usize {
        self.users.rows()
    }

    fn num_items(&self) -> usize {
        self.items.rows()
    }

    fn score_all(&self, user: usize, out: &mut [f64]) {
        let p = self.users.row(user);
        for (o, q) in out.iter_mut().zip(self.items.iter_rows()) {
            *o = dot(p, q);
        }
    }
}

/// Evenly spaced grid `start, start + step, ..., stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 2.0,
            step: 0.2,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.step <= 0.0 || self.stop <= self.start {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // multiply rather than accumulate so 0.6 prints as 0.6
        (0..=n)
            .map(|k| {
                let v = self.start + k as f64 * self.step;
                (v * 1e10).round() / 1e10
            })
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `start:stop:step`, or a single value.
    fn from_str(s: &str) -> Result<Self> {
        let nums: Vec<f64> = s
            .split(':')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("grid component `{p}` is not a number")))
            })
            .collect::<Result<_>>()?;
        let spec = match nums[..] {
            [v] => GridSpec { start: v, stop: v, step: 1.0 },
            [start, stop, step] => GridSpec { start, stop, step },
            _ => return Err(Error::Config(format!("grid `{s}` must be start:stop:step"))),
        };
        if !(spec.step > 0.0 && spec.stop >= spec.start && spec.start.is_finite() && spec.stop.is_finite()) {
            return Err(Error::Config(format!("grid `{s}` needs step > 0 and stop >= start")));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    Recall,
    Hr,
    Ndcg,
}

impl FromStr for SweepMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recall" => Ok(SweepMetric::Recall),
            "hr" => Ok(SweepMetric::Hr),
            "ndcg" => Ok(SweepMetric::Ndcg),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl SweepMetric {
    pub fn pick(self, m: &MetricSummary) -> f64 {
        match self {
            SweepMetric::Recall => m.recall,
            SweepMetric::Hr => m.hr,
            SweepMetric::Ndcg => m.ndcg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub alpha1: f64,
    pub alpha2: f64,
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub best: SweepCell,
    pub metric: SweepMetric,
    pub k: usize,
    /// Row-major over `alpha1`, then `alpha2`.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, alpha1: f64, alpha2: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| (c.alpha1 - alpha1).abs() < 1e-9 && (c.alpha2 - alpha2).abs() < 1e-9)
    }

    /// `alpha1,alpha2,recall,hr,ndcg`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha1,alpha2,recall,hr,ndcg\n");
        for c in &self.cells {
            out.push_str(&format!("{},{},{:?},{:?},{:?}\n", c.alpha1, c.alpha2, c.recall, c.hr, c.ndcg));
        }
        out
    }
}

/// Picks the better cell: higher metric, then smaller `alpha1 + alpha2`,
/// then smaller `alpha1`.
pub fn select_best(cells: &[SweepCell], metric: SweepMetric) -> Option<SweepCell> {
    let value = |c: &SweepCell| match metric {
        SweepMetric::Recall => c.recall,
        SweepMetric::Hr => c.hr,
        SweepMetric::Ndcg => c.ndcg,
    };
    cells.iter().copied().reduce(|best, c| {
        let (vb, vc) = (value(&best), value(&c));
        let better = vc > vb
            || (vc == vb
                && (c.alpha1 + c.alpha2 < best.alpha1 + best.alpha2
                    || (c.alpha1 + c.alpha2 == best.alpha1 + best.alpha2 && c.alpha1 < best.alpha1)));
        if better {
            c
        } else {
            best
        }
    })
}

/// Evaluates every `(alpha1, alpha2)` on the grid against `target`, masking
/// the `mask` datasets, and reports the argmax at cutoff `k`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_alphas(
    model: &EmbeddingModel,
    base: &AdjustmentContext,
    target: &InteractionDataset,
    masks: &[&InteractionDataset],
    grid1: &GridSpec,
    grid2: &GridSpec,
    metric: SweepMetric,
    k: usize,
) -> Result<SweepResult> {
    if target.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    let mut cells = Vec::new();
    for &a1 in &grid1.values() {
        for &a2 in &grid2.values() {
            let adjusted = AdjustedModel::new(model, &base.with_alphas(a1, a2));
            let report = evaluate_scorer(&adjusted, target, masks, &[k], None)?;
            let m = report.overall[0];
            cells.push(SweepCell {
                alpha1: a1,
                alpha2: a2,
                recall: m.recall,
                hr: m.hr,
                ndcg: m.ndcg,
            });
        }
    }
    let best = select_best(&cells, metric).expect("grid is non-empty");
    Ok(SweepResult { best, metric, k, cells })
}
