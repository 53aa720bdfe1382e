//! Independent oracles shared by the integration and acceptance tests. None of
//! these call into the library's ranking or gradient code.

#![allow(dead_code)]

use gradebias::linalg::Embeddings;
use gradebias::model::EmbeddingModel;
use gradebias::trainer::Triplet;
use gradebias::{IdMap, InteractionDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ids(n: usize) -> IdMap {
    IdMap::sequential(n)
}

pub fn dataset(nu: usize, ni: usize, pairs: &[(usize, usize)]) -> InteractionDataset {
    InteractionDataset::from_indexed(ids(nu), ids(ni), pairs.iter().copied()).unwrap()
}

pub fn random_model(nu: usize, ni: usize, dim: usize, normalize: bool, rng: &mut impl Rng) -> EmbeddingModel {
    let mut fill = |rows: usize| {
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Embeddings::from_vec(rows, dim, data)
    };
    let users = fill(nu);
    let items = fill(ni);
    EmbeddingModel::from_tables(users, items, normalize).unwrap()
}

// ---- losses written out directly from their definitions ----

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn user_view(p: &[f64], normalize: bool) -> Vec<f64> {
    let n = dot(p, p).sqrt();
    if normalize && n > 0.0 {
        p.iter().map(|x| x / n).collect()
    } else {
        p.to_vec()
    }
}

pub fn bpr_objective(p: &[f64], qi: &[f64], qj: &[f64], normalize: bool, lambda: f64) -> f64 {
    let v = user_view(p, normalize);
    let x = dot(&v, qi) - dot(&v, qj);
    // -ln sigma(x)
    (1.0 + (-x).exp()).ln() + lambda * (dot(p, p) + dot(qi, qi) + dot(qj, qj))
}

pub fn bce_objective(p: &[f64], q: &[f64], label: bool, normalize: bool, lambda: f64) -> f64 {
    let s = dot(&user_view(p, normalize), q);
    let sig = 1.0 / (1.0 + (-s).exp());
    let nll = if label { -sig.ln() } else { -(1.0 - sig).ln() };
    nll + lambda * (dot(p, p) + dot(q, q))
}

/// Central difference of `f` with respect to every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|k| {
            buf[k] = x[k] + h;
            let up = f(&buf);
            buf[k] = x[k] - h;
            let down = f(&buf);
            buf[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| <= rtol * max(|a|, |n|) + atol` elementwise. The absolute floor
/// covers coordinates whose true derivative is near zero, where central
/// differences carry ~h^2 and rounding error.
pub fn grad_close(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64) -> Result<(), String> {
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if (a - n).abs() > rtol * a.abs().max(n.abs()) + atol {
            return Err(format!("coordinate {k}: analytic {a} vs numeric {n}"));
        }
    }
    Ok(())
}

pub fn random_triplet(nu: usize, ni: usize, rng: &mut impl Rng) -> Triplet {
    let user = rng.random_range(0..nu);
    let pos = rng.random_range(0..ni);
    let mut neg = rng.random_range(0..ni - 1);
    if neg >= pos {
        neg += 1;
    }
    Triplet { user, pos, neg }
}

// ---- brute-force evaluation ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oracle {
    pub recall: f64,
    pub hr: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Scores every (user, item) with `score`, sorts all items by a full stable
/// sort, removes masked ones and averages the metrics over users with
/// relevant items.
pub fn brute_force_eval(
    nu: usize,
    ni: usize,
    score: impl Fn(usize, usize) -> f64,
    relevant: &InteractionDataset,
    masks: &[&InteractionDataset],
    k: usize,
) -> Option<Oracle> {
    let (mut r, mut h, mut n, mut users) = (0.0, 0.0, 0.0, 0usize);
    for u in 0..nu {
        let rel: Vec<usize> = (0..ni).filter(|&i| relevant.contains(u, i)).collect();
        if rel.is_empty() {
            continue;
        }
        let mut items: Vec<usize> = (0..ni).filter(|&i| !masks.iter().any(|m| m.contains(u, i))).collect();
        // stable sort on descending score keeps ascending index among ties
        items.sort_by(|&a, &b| score(u, b).partial_cmp(&score(u, a)).unwrap());
        items.truncate(k);
        let hits: Vec<usize> = (0..items.len()).filter(|&pos| rel.contains(&items[pos])).collect();
        let dcg: f64 = hits.iter().map(|&pos| 1.0 / ((pos + 2) as f64).log2()).sum();
        let idcg: f64 = (0..rel.len().min(k)).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
        r += hits.len() as f64 / rel.len() as f64;
        h += if hits.is_empty() { 0.0 } else { 1.0 };
        n += dcg / idcg;
        users += 1;
    }
    (users > 0).then(|| Oracle {
        recall: r / users as f64,
        hr: h / users as f64,
        ndcg: n / users as f64,
        users,
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
