//! Full-ranking top-k evaluation: Recall@k, HR@k and NDCG@k averaged over
//! users, plus exposure and recall per popularity bin.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{compute_grouping, InteractionDataset, PopularityGrouping, SplitBundle};
use crate::debias::{AdjustedModel, AdjustmentContext};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::EmbeddingModel;

/// Anything that can score every item for a user.
pub trait Scorer: Sync {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    /// Writes the score of every item into `out` (length `num_items`).
    fn score_all(&self, user: usize, out: &mut [f64]);
}

/// Scores with the raw stored user vector. Rankings are the same as with the
/// normalized vector, since a positive rescale of `P_u` preserves order.
impl Scorer for EmbeddingModel {
    fn num_users(&self) -> usize {
        EmbeddingModel::num_users(self)
    }

    fn num_items(&self) -> usize {
        EmbeddingModel::num_items(self)
    }

    fn score_all(&self, user: usize, out: &mut [f64]) {
        let p = self.users().row(user);
        for (o, q) in out.iter_mut().zip(self.items().iter_rows()) {
            *o = dot(p, q);
        }
    }
}

/// Scores with `P_u / |P_u|`, the training-time score.
pub struct NormalizedScorer<'a>(pub &'a EmbeddingModel);

impl Scorer for NormalizedScorer<'_> {
    fn num_users(&self) -> usize {
        self.0.num_users()
    }

    fn num_items(&self) -> usize {
        self.0.num_items()
    }

    fn score_all(&self, user: usize, out: &mut [f64]) {
        let p = crate::linalg::normalized(self.0.users().row(user));
        for (o, q) in out.iter_mut().zip(self.0.items().iter_rows()) {
            *o = dot(&p, q);
        }
    }
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best unmasked items by descending score, ties by ascending index.
pub fn top_k_from_scores(scores: &[f64], k: usize, masked: &[bool]) -> Vec<usize> {
    // `+ 0.0` folds -0.0 into 0.0 so total_cmp treats them as a tie
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !masked.get(*i).copied().unwrap_or(false))
        .map(|(i, &s)| (i, s + 0.0))
        .collect();
    if k == 0 || cand.is_empty() {
        return Vec::new();
    }
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, rank_order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(rank_order);
    cand.into_iter().map(|(i, _)| i).collect()
}

/// Top-k for one user, masking `mask` (item indices).
pub fn top_k<S: Scorer + ?Sized>(scorer: &S, user: usize, k: usize, mask: &[usize]) -> Vec<usize> {
    let mut scores = vec![0.0; scorer.num_items()];
    scorer.score_all(user, &mut scores);
    let mut masked = vec![false; scores.len()];
    for &i in mask {
        if let Some(m) = masked.get_mut(i) {
            *m = true;
        }
    }
    top_k_from_scores(&scores, k, &masked)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricSummary {
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
}

/// Metrics of one ranked list against a non-empty sorted `relevant` set.
/// Only the first `k` entries of `ranked` count.
pub fn metrics_for_user(ranked: &[usize], relevant: &[usize], k: usize) -> MetricSummary {
    debug_assert!(!relevant.is_empty());
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..k.min(relevant.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    MetricSummary {
        recall: hits as f64 / relevant.len() as f64,
        hr: if hits > 0 { 1.0 } else { 0.0 },
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub relevant: usize,
    /// At the primary cutoff.
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub bin: usize,
    pub items: usize,
    /// Mean over users with at least one relevant item in the bin; `None`
    /// when no user has one.
    pub recall: Option<f64>,
    /// Number of (user, item) top-k slots that fall in the bin.
    pub recommended_frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k_list: Vec<usize>,
    /// One entry per cutoff, in `k_list` order.
    pub overall: Vec<MetricSummary>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
    pub per_group: Option<Vec<GroupRow>>,
    pub per_user: Vec<UserMetrics>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<MetricSummary> {
        self.k_list.iter().position(|&x| x == k).map(|p| self.overall[p])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "users_evaluated {}", self.users_evaluated);
        let _ = writeln!(s, "users_skipped {}", self.users_skipped);
        for (k, m) in self.k_list.iter().zip(&self.overall) {
            let _ = writeln!(s, "recall@{k} {:?}", m.recall);
            let _ = writeln!(s, "hr@{k} {:?}", m.hr);
            let _ = writeln!(s, "ndcg@{k} {:?}", m.ndcg);
        }
        s
    }

    /// `bin,items,recall,recommended_frequency`; empty recall for bins no
    /// user has relevant items in.
    pub fn per_group_csv(&self) -> Option<String> {
        let rows = self.per_group.as_ref()?;
        let mut s = String::from("bin,items,recall,recommended_frequency\n");
        for r in rows {
            let recall = r.recall.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.bin, r.items, recall, r.recommended_frequency);
        }
        Some(s)
    }

    /// `user,relevant,recall,hr,ndcg` at the primary cutoff, with external
    /// ids when `user_ids` is given.
    pub fn per_user_csv(&self, user_ids: Option<&crate::dataset::IdMap>) -> String {
        let mut s = String::from("user,relevant,recall,hr,ndcg\n");
        for u in &self.per_user {
            let id = match user_ids {
                Some(ids) => ids.id(u.user).to_owned(),
                None => u.user.to_string(),
            };
            let m = u.metrics;
            let _ = writeln!(s, "{id},{},{:?},{:?},{:?}", u.relevant, m.recall, m.hr, m.ndcg);
        }
        s
    }

    /// Writes `report.txt`, `per_user.csv` and, with groups, `per_group.csv`.
    pub fn write_dir(&self, dir: &Path, user_ids: Option<&crate::dataset::IdMap>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: &str| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("report.txt", &self.to_text())?;
        write("per_user.csv", &self.per_user_csv(user_ids))?;
        if let Some(csv) = self.per_group_csv() {
            write("per_group.csv", &csv)?;
        }
        Ok(())
    }
}

struct UserOutcome {
    user: usize,
    relevant: usize,
    per_k: Vec<MetricSummary>,
    bin_hits: Vec<(usize, usize)>,
    bin_exposure: Vec<usize>,
}

/// Ranks every user with test positives in `target`, masking the items each
/// user has in any of `masks`. The first entry of `k_list` is the primary
/// cutoff used for per-user and per-group output.
pub fn evaluate_scorer<S: Scorer + ?Sized>(
    scorer: &S,
    target: &InteractionDataset,
    masks: &[&InteractionDataset],
    k_list: &[usize],
    grouping: Option<&PopularityGrouping>,
) -> Result<EvalReport> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::Config("cutoffs must be non-empty and all k >= 1".into()));
    }
    let (nu, ni) = (scorer.num_users(), scorer.num_items());
    if target.num_users() != nu || target.num_items() != ni {
        return Err(Error::Config(format!(
            "evaluation set has {}x{} users x items but the model has {nu}x{ni}",
            target.num_users(),
            target.num_items()
        )));
    }
    for m in masks {
        if m.num_users() != nu || m.num_items() != ni {
            return Err(Error::Config("mask set is over a different universe".into()));
        }
    }
    if let Some(g) = grouping {
        if g.num_items() != ni {
            return Err(Error::Config("grouping is over a different item universe".into()));
        }
    }
    let k_max = *k_list.iter().max().unwrap();
    let primary = k_list[0];
    let num_bins = grouping.map_or(0, |g| g.group_bins().len());

    let outcomes: Vec<UserOutcome> = (0..nu)
        .into_par_iter()
        .filter(|&u| !target.positives(u).is_empty())
        .map_init(
            || (vec![0.0; ni], vec![false; ni]),
            |(scores, masked), u| {
                scorer.score_all(u, scores);
                masked.iter_mut().for_each(|m| *m = false);
                for m in masks {
                    for &i in m.positives(u) {
                        masked[i] = true;
                    }
                }
                let ranked = top_k_from_scores(scores, k_max, masked);
                let relevant = target.positives(u);
                let per_k = k_list.iter().map(|&k| metrics_for_user(&ranked, relevant, k)).collect();
                let mut bin_hits = vec![(0, 0); num_bins];
                let mut bin_exposure = vec![0; num_bins];
                if let Some(g) = grouping {
                    let top = &ranked[..primary.min(ranked.len())];
                    for &i in top {
                        bin_exposure[g.bin_of(i)] += 1;
                    }
                    for &i in relevant {
                        let b = &mut bin_hits[g.bin_of(i)];
                        b.1 += 1;
                        if top.contains(&i) {
                            b.0 += 1;
                        }
                    }
                }
                UserOutcome {
                    user: u,
                    relevant: relevant.len(),
                    per_k,
                    bin_hits,
                    bin_exposure,
                }
            },
        )
        .collect();

    if outcomes.is_empty() {
        return Err(Error::EmptyEvaluation("no user has a positive in the evaluation set".into()));
    }
    let n = outcomes.len() as f64;
    let overall = (0..k_list.len())
        .map(|j| {
            let mut sum = MetricSummary::default();
            for o in &outcomes {
                sum.recall += o.per_k[j].recall;
                sum.hr += o.per_k[j].hr;
                sum.ndcg += o.per_k[j].ndcg;
            }
            MetricSummary {
                recall: sum.recall / n,
                hr: sum.hr / n,
                ndcg: sum.ndcg / n,
            }
        })
        .collect();

    let per_group = grouping.map(|g| {
        (0..num_bins)
            .map(|b| {
                let mut recall_sum = 0.0;
                let mut users = 0usize;
                let mut exposure = 0usize;
                for o in &outcomes {
                    let (hit, rel) = o.bin_hits[b];
                    if rel > 0 {
                        recall_sum += hit as f64 / rel as f64;
                        users += 1;
                    }
                    exposure += o.bin_exposure[b];
                }
                GroupRow {
                    bin: b,
                    items: g.group_bins()[b].len(),
                    recall: (users > 0).then(|| recall_sum / users as f64),
                    recommended_frequency: exposure,
                }
            })
            .collect()
    });

    let users_evaluated = outcomes.len();
    let per_user = outcomes
        .into_iter()
        .map(|o| UserMetrics {
            user: o.user,
            relevant: o.relevant,
            metrics: o.per_k[0],
        })
        .collect();
    Ok(EvalReport {
        k_list: k_list.to_vec(),
        overall,
        users_evaluated,
        users_skipped: nu - users_evaluated,
        per_group,
        per_user,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Masks train.
    Validation,
    /// Masks train and validation.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub target: EvalTarget,
    /// Popularity threshold for per-bin output, computed on the train part.
    pub group_threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: vec![20],
            target: EvalTarget::Test,
            group_threshold: None,
        }
    }
}

/// Evaluates `model` (adjusted by `ctx` when given) on one part of a bundle.
pub fn evaluate(
    model: &EmbeddingModel,
    ctx: Option<&AdjustmentContext>,
    bundle: &SplitBundle,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let (target, masks): (&InteractionDataset, Vec<&InteractionDataset>) = match config.target {
        EvalTarget::Validation => (&bundle.validation, vec![&bundle.train]),
        EvalTarget::Test => (&bundle.test, vec![&bundle.train, &bundle.validation]),
    };
    if target.is_empty() {
        return Err(Error::EmptyDataset("evaluation part is empty".into()));
    }
    let grouping = config
        .group_threshold
        .map(|t| compute_grouping(&bundle.train, t))
        .transpose()?;
    match ctx {
        Some(c) => evaluate_scorer(&AdjustedModel::new(model, c), target, &masks, &config.k_list, grouping.as_ref()),
        None => evaluate_scorer(model, target, &masks, &config.k_list, grouping.as_ref()),
    }
}
