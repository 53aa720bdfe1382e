//! Measurements behind the popularity-bias argument: how accumulated positive
//! and negative item updates compare in direction and size, how embedding
//! norms track popularity, and whether popular items share a direction.
//!
//! Zero vectors never get a cosine; such cells are `None` (empty in CSV,
//! `null` in JSON) so "no signal" is not confused with "orthogonal".

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{IdMap, PopularityGrouping};
use crate::error::{Error, Result};
use crate::linalg::{cosine, norm, Embeddings};
use crate::model::EmbeddingModel;
use crate::stats::spearman;
use crate::trainer::GradientAccumulators;

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionRow {
    pub item: usize,
    pub count: usize,
    pub cos_pos: Option<f64>,
    pub cos_neg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    /// Most popular item first.
    pub rows: Vec<DirectionRow>,
    pub popular_mean_cos_pos: Option<f64>,
    pub unpopular_mean_cos_pos: Option<f64>,
    pub warning: Option<String>,
}

/// Cosine of each item's positive and negative accumulator with a combined
/// vector. [`gradient_direction_report`] uses the accumulator sum; pass
/// `Q_final - Q_init` here for the displacement reading.
pub fn direction_report_against(
    acc: &GradientAccumulators,
    combined: &Embeddings,
    grouping: &PopularityGrouping,
) -> DirectionReport {
    let rows: Vec<DirectionRow> = grouping
        .item_order()
        .iter()
        .map(|&i| {
            let c = combined.row(i);
            DirectionRow {
                item: i,
                count: grouping.item_counts()[i],
                cos_pos: cosine(acc.item_pos_acc.row(i), c),
                cos_neg: cosine(acc.item_neg_acc.row(i), c),
            }
        })
        .collect();
    let group_mean = |popular: bool| {
        mean(
            rows.iter()
                .filter(|r| grouping.is_popular(r.item) == popular)
                .filter_map(|r| r.cos_pos),
        )
    };
    let warning = rows
        .iter()
        .all(|r| r.cos_pos.is_none() && r.cos_neg.is_none())
        .then(|| "all accumulators are zero; nothing to report".to_owned());
    DirectionReport {
        popular_mean_cos_pos: group_mean(true),
        unpopular_mean_cos_pos: group_mean(false),
        rows,
        warning,
    }
}

pub fn gradient_direction_report(acc: &GradientAccumulators, grouping: &PopularityGrouping) -> DirectionReport {
    let mut combined = acc.item_pos_acc.clone();
    for (c, n) in combined.as_mut_slice().iter_mut().zip(acc.item_neg_acc.as_slice()) {
        *c += n;
    }
    direction_report_against(acc, &combined, grouping)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagnitudeRow {
    pub item: usize,
    pub count: usize,
    pub pos_norm: f64,
    pub neg_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagnitudeReport {
    pub rows: Vec<MagnitudeRow>,
    /// Spearman of item count against `pos_norm - neg_norm`.
    pub spearman_count_vs_gap: Option<f64>,
}

pub fn gradient_magnitude_report(acc: &GradientAccumulators, grouping: &PopularityGrouping) -> MagnitudeReport {
    let rows: Vec<MagnitudeRow> = grouping
        .item_order()
        .iter()
        .map(|&i| MagnitudeRow {
            item: i,
            count: grouping.item_counts()[i],
            pos_norm: norm(acc.item_pos_acc.row(i)),
            neg_norm: norm(acc.item_neg_acc.row(i)),
        })
        .collect();
    let counts: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.pos_norm - r.neg_norm).collect();
    MagnitudeReport {
        spearman_count_vs_gap: spearman(&counts, &gaps),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRow {
    pub index: usize,
    pub count: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    /// Most popular item first.
    pub items: Vec<NormRow>,
    /// Most active user first; raw stored vectors.
    pub users: Vec<NormRow>,
    pub item_spearman: Option<f64>,
    pub user_spearman: Option<f64>,
}

fn norm_rows(table: &Embeddings, order: &[usize], counts: &[usize]) -> (Vec<NormRow>, Option<f64>) {
    let rows: Vec<NormRow> = order
        .iter()
        .map(|&i| NormRow {
            index: i,
            count: counts[i],
            norm: norm(table.row(i)),
        })
        .collect();
    let c: Vec<f64> = rows.iter().map(|r| r.count as f64).collect();
    let n: Vec<f64> = rows.iter().map(|r| r.norm).collect();
    let rho = spearman(&c, &n);
    (rows, rho)
}

pub fn embedding_norm_report(model: &EmbeddingModel, grouping: &PopularityGrouping) -> NormReport {
    let (items, item_spearman) = norm_rows(model.items(), grouping.item_order(), grouping.item_counts());
    let (users, user_spearman) = norm_rows(model.users(), grouping.user_order(), grouping.user_counts());
    NormReport {
        items,
        users,
        item_spearman,
        user_spearman,
    }
}

/// Mean cosine over all unordered pairs of non-zero rows in `rows`.
pub fn pairwise_mean_cosine(table: &Embeddings, rows: &[usize]) -> Option<f64> {
    let units: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| table.row(r))
        .filter(|v| norm(v) > 0.0)
        .map(crate::linalg::normalized)
        .collect();
    let n = units.len();
    if n < 2 {
        return None;
    }
    // sum over pairs = (|sum of units|^2 - n) / 2
    let dim = table.dim();
    let mut total = vec![0.0; dim];
    for u in &units {
        for (t, x) in total.iter_mut().zip(u) {
            *t += x;
        }
    }
    let sq: f64 = total.iter().map(|x| x * x).sum();
    let pairs = (n * (n - 1) / 2) as f64;
    Some((((sq - n as f64) / 2.0) / pairs).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    /// cos(mean positive accumulator of popular items, mean popular `Q_i`).
    pub pos_acc_vs_popular_embedding: Option<f64>,
    /// Mean pairwise cosine among popular items' positive accumulators.
    pub popular_pairwise_cos: Option<f64>,
    /// Same over all items, the baseline for the line above.
    pub all_items_pairwise_cos: Option<f64>,
    /// cos(mean `item_acc` over all items, mean popular `Q_i`): agreement of
    /// the two popular-direction sources.
    pub item_direction_sources_cos: Option<f64>,
    /// cos(mean `user_acc` over all users, mean active `P_u`).
    pub user_direction_sources_cos: Option<f64>,
}

pub fn direction_agreement(
    model: &EmbeddingModel,
    acc: &GradientAccumulators,
    grouping: &PopularityGrouping,
) -> Agreement {
    let popular = grouping.popular_items();
    let all: Vec<usize> = (0..acc.item_pos_acc.rows()).collect();
    let pop_emb = model.items().mean_of(popular.iter().copied());
    Agreement {
        pos_acc_vs_popular_embedding: cosine(&acc.item_pos_acc.mean_of(popular.iter().copied()), &pop_emb),
        popular_pairwise_cos: pairwise_mean_cosine(&acc.item_pos_acc, &popular),
        all_items_pairwise_cos: pairwise_mean_cosine(&acc.item_pos_acc, &all),
        item_direction_sources_cos: cosine(&acc.item_acc.mean_of(all.iter().copied()), &pop_emb),
        user_direction_sources_cos: cosine(
            &acc.user_acc.mean_of(0..acc.user_acc.rows()),
            &model.users().mean_of(grouping.active_users()),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub direction: DirectionReport,
    /// Against `Q_final - Q_init`, when the initial tables are known.
    pub direction_delta: Option<DirectionReport>,
    pub magnitude: MagnitudeReport,
    pub norms: NormReport,
    pub agreement: Agreement,
}

pub fn run_diagnostics(
    model: &EmbeddingModel,
    initial: Option<&EmbeddingModel>,
    acc: &GradientAccumulators,
    grouping: &PopularityGrouping,
) -> Result<Diagnostics> {
    if grouping.num_items() != model.num_items() || acc.item_acc.rows() != model.num_items() {
        return Err(Error::Config("model, accumulators and grouping disagree on the item count".into()));
    }
    let direction_delta = match initial {
        Some(init) => {
            if init.num_items() != model.num_items() || init.dim() != model.dim() {
                return Err(Error::Config("initial model shape differs from the trained one".into()));
            }
            let mut delta = model.items().clone();
            for (d, q0) in delta.as_mut_slice().iter_mut().zip(init.items().as_slice()) {
                *d -= q0;
            }
            Some(direction_report_against(acc, &delta, grouping))
        }
        None => None,
    };
    Ok(Diagnostics {
        direction: gradient_direction_report(acc, grouping),
        direction_delta,
        magnitude: gradient_magnitude_report(acc, grouping),
        norms: embedding_norm_report(model, grouping),
        agreement: direction_agreement(model, acc, grouping),
    })
}

impl DirectionReport {
    /// `item,count,cos_pos,cos_neg`
    pub fn to_csv(&self, items: &IdMap) -> String {
        let mut s = String::from("item,count,cos_pos,cos_neg\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", items.id(r.item), r.count, cell(r.cos_pos), cell(r.cos_neg));
        }
        s
    }
}

impl MagnitudeReport {
    /// `item,count,pos_norm,neg_norm`
    pub fn to_csv(&self, items: &IdMap) -> String {
        let mut s = String::from("item,count,pos_norm,neg_norm\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?},{:?}", items.id(r.item), r.count, r.pos_norm, r.neg_norm);
        }
        s
    }
}

fn norms_csv(header: &str, rows: &[NormRow], ids: &IdMap) -> String {
    let mut s = format!("{header},count,norm\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:?}", ids.id(r.index), r.count, r.norm);
    }
    s
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    #[serde(flatten)]
    agreement: &'a Agreement,
    popular_mean_cos_pos: Option<f64>,
    unpopular_mean_cos_pos: Option<f64>,
    delta_popular_mean_cos_pos: Option<f64>,
    delta_unpopular_mean_cos_pos: Option<f64>,
    spearman_count_vs_pos_minus_neg: Option<f64>,
    spearman_item_count_vs_norm: Option<f64>,
    spearman_user_count_vs_norm: Option<f64>,
}

impl Diagnostics {
    pub fn summary_json(&self) -> String {
        let s = SummaryJson {
            agreement: &self.agreement,
            popular_mean_cos_pos: self.direction.popular_mean_cos_pos,
            unpopular_mean_cos_pos: self.direction.unpopular_mean_cos_pos,
            delta_popular_mean_cos_pos: self.direction_delta.as_ref().and_then(|d| d.popular_mean_cos_pos),
            delta_unpopular_mean_cos_pos: self.direction_delta.as_ref().and_then(|d| d.unpopular_mean_cos_pos),
            spearman_count_vs_pos_minus_neg: self.magnitude.spearman_count_vs_gap,
            spearman_item_count_vs_norm: self.norms.item_spearman,
            spearman_user_count_vs_norm: self.norms.user_spearman,
        };
        serde_json::to_string_pretty(&s).expect("plain struct serializes") + "\n"
    }

    /// Writes `fig1a.csv`, `fig1a_delta.csv` (when present), `fig1b.csv`,
    /// `norms_items.csv`, `norms_users.csv` and `agreement.json`.
    pub fn write_dir(&self, dir: &Path, users: &IdMap, items: &IdMap) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("fig1a.csv", self.direction.to_csv(items))?;
        if let Some(d) = &self.direction_delta {
            write("fig1a_delta.csv", d.to_csv(items))?;
        }
        write("fig1b.csv", self.magnitude.to_csv(items))?;
        write("norms_items.csv", norms_csv("item", &self.norms.items, items))?;
        write("norms_users.csv", norms_csv("user", &self.norms.users, users))?;
        write("agreement.json", self.summary_json())?;
        Ok(())
    }
}
