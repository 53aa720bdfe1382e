//! Interaction logs, train/validation/test splits and popularity groupings.
//!
//! Every split part and derived dataset shares the id universe of the dataset
//! it came from, so user and item indices stay aligned across parts even when
//! an entity has no interactions in one of them.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    pub fn separator(self) -> char {
        match self {
            Format::Tsv => '\t',
            Format::Csv => ',',
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format `{other}` (expected tsv or csv)"))),
        }
    }
}

/// Bijection between external string ids and dense indices, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map from an ordered id list; duplicates are a config error.
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate id `{id}`")));
            }
        }
        Ok(Self { ids, index })
    }

    /// Sequential ids "0", "1", ... for synthetic data.
    pub fn sequential(n: usize) -> Self {
        Self::from_ids((0..n).map(|i| i.to_string()).collect()).expect("sequential ids are unique")
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Deduplicated implicit-feedback log over a fixed user/item universe.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_users: usize,
    num_items: usize,
    interactions: Vec<(usize, usize)>,
    user_positives: Vec<Vec<usize>>,
    item_counts: Vec<usize>,
    user_counts: Vec<usize>,
    user_ids: IdMap,
    item_ids: IdMap,
}

impl InteractionDataset {
    /// Builds a dataset over an explicit universe. Duplicate pairs are
    /// collapsed, keeping the first occurrence; out-of-range indices are an
    /// index error.
    pub fn from_indexed(
        user_ids: IdMap,
        item_ids: IdMap,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let num_users = user_ids.len();
        let num_items = item_ids.len();
        let mut seen = HashSet::new();
        let mut interactions = Vec::new();
        let mut user_positives = vec![Vec::new(); num_users];
        let mut item_counts = vec![0usize; num_items];
        let mut user_counts = vec![0usize; num_users];
        for (u, i) in pairs {
            if u >= num_users {
                return Err(Error::Index { kind: "user", index: u, len: num_users });
            }
            if i >= num_items {
                return Err(Error::Index { kind: "item", index: i, len: num_items });
            }
            if !seen.insert((u, i)) {
                continue;
            }
            interactions.push((u, i));
            user_positives[u].push(i);
            item_counts[i] += 1;
            user_counts[u] += 1;
        }
        user_positives.iter_mut().for_each(|p| p.sort_unstable());
        Ok(Self {
            num_users,
            num_items,
            interactions,
            user_positives,
            item_counts,
            user_counts,
            user_ids,
            item_ids,
        })
    }

    /// Builds a dataset from external id pairs, densifying ids in first-seen order.
    pub fn from_pairs<S: AsRef<str>>(pairs: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let indexed: Vec<_> = pairs
            .into_iter()
            .map(|(u, i)| (users.get_or_insert(u.as_ref()), items.get_or_insert(i.as_ref())))
            .collect();
        Self::from_indexed(users, items, indexed)
    }

    /// A dataset over the same universe holding only `pairs`.
    pub fn with_pairs(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self::from_indexed(self.user_ids.clone(), self.item_ids.clone(), pairs)
            .expect("pairs drawn from the same universe")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    /// Sorted positive items of `user`.
    pub fn positives(&self, user: usize) -> &[usize] {
        &self.user_positives[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.user_positives[user].binary_search(&item).is_ok()
    }

    pub fn item_counts(&self) -> &[usize] {
        &self.item_counts
    }

    pub fn user_counts(&self) -> &[usize] {
        &self.user_counts
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.item_ids
    }
}

fn parse_rows<R: BufRead>(
    reader: R,
    path: &Path,
    format: Format,
    mut on_row: impl FnMut(&str, &str),
) -> Result<usize> {
    let sep = format.separator();
    let mut rows = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(sep);
        let user = fields.next().map(str::trim).unwrap_or("");
        let item = match fields.next() {
            Some(f) => f.trim(),
            None => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: n + 1,
                    message: format!("expected at least 2 `{}`-separated fields", sep.escape_default()),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: n + 1,
                message: "empty user or item id".into(),
            });
        }
        on_row(user, item);
        rows += 1;
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads `user<sep>item[<sep>ignored...]` rows. Extra columns are ignored,
/// duplicate pairs collapse to one interaction.
pub fn load_interactions(path: impl AsRef<Path>, format: Format) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut pairs = Vec::new();
    parse_rows(open(path)?, path, format, |u, i| {
        pairs.push((users.get_or_insert(u), items.get_or_insert(i)));
    })?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    InteractionDataset::from_indexed(users, items, pairs)
}

/// Reads rows into an existing universe. Rows naming unknown ids are dropped
/// and counted in the second return value.
pub fn load_interactions_in(
    path: impl AsRef<Path>,
    format: Format,
    users: &IdMap,
    items: &IdMap,
) -> Result<(InteractionDataset, usize)> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    let mut unknown = 0;
    let rows = parse_rows(open(path)?, path, format, |u, i| {
        match (users.index_of(u), items.index_of(i)) {
            (Some(u), Some(i)) => pairs.push((u, i)),
            _ => unknown += 1,
        }
    })?;
    if rows == 0 {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let ds = InteractionDataset::from_indexed(users.clone(), items.clone(), pairs)?;
    Ok((ds, unknown))
}

pub fn write_interactions(ds: &InteractionDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let sep = format.separator();
    for &(u, i) in ds.interactions() {
        writeln!(w, "{}{sep}{}", ds.user_ids.id(u), ds.item_ids.id(i)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One id per line, in index order.
pub fn write_ids(ids: &IdMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for id in ids.ids() {
        out.push_str(id);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ids(path: impl AsRef<Path>) -> Result<IdMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    IdMap::from_ids(text.lines().map(str::to_owned).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitProtocol {
    Iid,
    Intervened,
}

impl fmt::Display for SplitProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitProtocol::Iid => "iid",
            SplitProtocol::Intervened => "intervened",
        })
    }
}

impl FromStr for SplitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(SplitProtocol::Iid),
            "intervened" => Ok(SplitProtocol::Intervened),
            other => Err(Error::Config(format!(
                "unknown split protocol `{other}` (expected iid or intervened)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = Self { train, validation, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("validation", self.validation), ("test", self.test)] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!(
                    "{name} ratio must lie strictly between 0 and 1 (got {v})"
                )));
            }
        }
        let sum = self.train + self.validation + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1 (got {sum})")));
        }
        Ok(())
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `a,b,c`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("ratio `{p}` is not a number")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Config(format!(
                "expected three comma-separated ratios, got {}",
                parts.len()
            ))),
        }
    }
}

/// Entities of the source that ended up with no training interaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWarnings {
    pub users_without_train: usize,
    pub items_without_train: usize,
}

#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: InteractionDataset,
    pub validation: InteractionDataset,
    pub test: InteractionDataset,
    pub protocol: SplitProtocol,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub warnings: SplitWarnings,
}

fn part_sizes(n: usize, ratios: &SplitRatios) -> Result<(usize, usize)> {
    let n_val = ((ratios.validation * n as f64).round() as usize).max(1);
    let n_test = ((ratios.test * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::Config(format!(
            "{n} interactions are too few for ratios {}/{}/{}",
            ratios.train, ratios.validation, ratios.test
        )));
    }
    Ok((n_val, n_test))
}

/// Order of successive weighted draws without replacement (exponential-key
/// method): position `k` of the result is the `k`-th interaction drawn.
fn weighted_draw_order(weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(idx, &w)| {
            let u: f64 = rng.random();
            (-(1.0 - u).ln() / w, idx)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, idx)| idx).collect()
}

fn split_weighted(
    ds: &InteractionDataset,
    ratios: SplitRatios,
    seed: u64,
    protocol: SplitProtocol,
) -> Result<SplitBundle> {
    ratios.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let n = ds.len();
    let (n_val, n_test) = part_sizes(n, &ratios)?;
    let weights: Vec<f64> = match protocol {
        SplitProtocol::Iid => vec![1.0; n],
        SplitProtocol::Intervened => ds
            .interactions
            .iter()
            .map(|&(_, i)| 1.0 / ds.item_counts[i] as f64)
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = weighted_draw_order(&weights, &mut rng);

    // 0 = train, 1 = validation, 2 = test; parts keep source order.
    let mut part = vec![0u8; n];
    order[..n_test].iter().for_each(|&k| part[k] = 2);
    order[n_test..n_test + n_val].iter().for_each(|&k| part[k] = 1);
    let pick = |p: u8| {
        ds.interactions
            .iter()
            .zip(&part)
            .filter(move |(_, &q)| q == p)
            .map(|(&x, _)| x)
    };
    let train = ds.with_pairs(pick(0));
    let validation = ds.with_pairs(pick(1));
    let test = ds.with_pairs(pick(2));

    let warnings = SplitWarnings {
        users_without_train: (0..ds.num_users)
            .filter(|&u| ds.user_counts[u] > 0 && train.user_counts[u] == 0)
            .count(),
        items_without_train: (0..ds.num_items)
            .filter(|&i| ds.item_counts[i] > 0 && train.item_counts[i] == 0)
            .count(),
    };
    Ok(SplitBundle {
        train,
        validation,
        test,
        protocol,
        ratios,
        seed,
        warnings,
    })
}

/// Validation and test drawn so that every item carries the same expected
/// sampling mass: each interaction is weighted by `1 / item_count`.
pub fn split_intervened(ds: &InteractionDataset, ratios: SplitRatios, seed: u64) -> Result<SplitBundle> {
    split_weighted(ds, ratios, seed, SplitProtocol::Intervened)
}

/// Uniform sampling over interactions.
pub fn split_iid(ds: &InteractionDataset, ratios: SplitRatios, seed: u64) -> Result<SplitBundle> {
    split_weighted(ds, ratios, seed, SplitProtocol::Iid)
}

pub fn split(
    ds: &InteractionDataset,
    protocol: SplitProtocol,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitBundle> {
    split_weighted(ds, ratios, seed, protocol)
}

/// Removes a uniform random `fraction` of interactions, returning
/// `(rest, holdout)`. Used to reserve an IID test pool that is disjoint from
/// a subsequent intervened split of `rest`.
pub fn holdout_iid(
    ds: &InteractionDataset,
    fraction: f64,
    seed: u64,
) -> Result<(InteractionDataset, InteractionDataset)> {
    if !(fraction.is_finite() && fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie strictly between 0 and 1 (got {fraction})"
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot hold out from an empty dataset".into()));
    }
    let n = ds.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; n];
    idx[..k].iter().for_each(|&j| held[j] = true);
    let rest = ds.with_pairs(ds.interactions.iter().zip(&held).filter(|(_, &h)| !h).map(|(&p, _)| p));
    let holdout = ds.with_pairs(ds.interactions.iter().zip(&held).filter(|(_, &h)| h).map(|(&p, _)| p));
    Ok((rest, holdout))
}

/// Mixes two equally sized test sets: `floor(proportion * N)` interactions
/// from `intervened_test`, the rest from `iid_test`, where `N` is the smaller
/// of the two sizes (the larger is trimmed by uniform subsampling). Duplicate
/// pairs are replaced by further draws from the donor pools. The output is
/// sorted by `(user, item)`.
pub fn mix_test_sets(
    intervened_test: &InteractionDataset,
    iid_test: &InteractionDataset,
    proportion: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::Config(format!("proportion must lie in [0, 1] (got {proportion})")));
    }
    if intervened_test.is_empty() && iid_test.is_empty() {
        return Err(Error::EmptyDataset("both test sets are empty".into()));
    }
    if intervened_test.num_users != iid_test.num_users || intervened_test.num_items != iid_test.num_items {
        return Err(Error::Config("test sets are drawn from different universes".into()));
    }
    let n = intervened_test.len().min(iid_test.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut int_pool = intervened_test.interactions.clone();
    let mut iid_pool = iid_test.interactions.clone();
    int_pool.shuffle(&mut rng);
    iid_pool.shuffle(&mut rng);

    let n_int = (proportion * n as f64).floor() as usize;
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    let mut take_from = |pool: &[(usize, usize)], cursor: &mut usize, want: usize, chosen: &mut Vec<_>| {
        while chosen.len() < want && *cursor < pool.len() {
            let p = pool[*cursor];
            *cursor += 1;
            if seen.insert(p) {
                chosen.push(p);
            }
        }
    };
    let (mut ci, mut cd) = (0, 0);
    take_from(&int_pool[..n], &mut ci, n_int, &mut chosen);
    take_from(&iid_pool[..n], &mut cd, n, &mut chosen);
    // backfill: remaining trimmed pools, then the untrimmed leftovers
    take_from(&int_pool[..n], &mut ci, n, &mut chosen);
    take_from(&iid_pool, &mut cd, n, &mut chosen);
    take_from(&int_pool, &mut ci, n, &mut chosen);

    chosen.sort_unstable();
    Ok(intervened_test.with_pairs(chosen))
}

/// Popular/unpopular items and active/inactive users by the covering-prefix
/// rule, plus five item bins for fine-grained analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityGrouping {
    pub threshold_fraction: f64,
    item_order: Vec<usize>,
    user_order: Vec<usize>,
    item_counts: Vec<usize>,
    user_counts: Vec<usize>,
    popular: Vec<bool>,
    active: Vec<bool>,
    group_bins: Vec<Vec<usize>>,
    item_bin: Vec<usize>,
}

pub const NUM_BINS: usize = 5;
pub const BIN_FRACTION: f64 = 0.05;

/// Indices sorted by count descending, ties by ascending index.
fn descending_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Marks the minimal prefix of `order` whose cumulative count reaches
/// `threshold * total`.
fn covering_prefix(order: &[usize], counts: &[usize], threshold: f64) -> Vec<bool> {
    let total: usize = counts.iter().sum();
    let target = threshold * total as f64;
    let slack = 1e-9 * total as f64;
    let mut flags = vec![false; counts.len()];
    let mut cum = 0usize;
    for &x in order {
        if cum as f64 >= target - slack {
            break;
        }
        flags[x] = true;
        cum += counts[x];
    }
    flags
}

pub fn compute_grouping(ds: &InteractionDataset, threshold_fraction: f64) -> Result<PopularityGrouping> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "threshold fraction must lie in (0, 1] (got {threshold_fraction})"
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot group an empty dataset".into()));
    }
    let item_order = descending_order(&ds.item_counts);
    let user_order = descending_order(&ds.user_counts);
    let popular = covering_prefix(&item_order, &ds.item_counts, threshold_fraction);
    let active = covering_prefix(&user_order, &ds.user_counts, threshold_fraction);

    let per_bin = (BIN_FRACTION * ds.num_items as f64).floor() as usize;
    let mut group_bins = vec![Vec::new(); NUM_BINS];
    let mut item_bin = vec![0; ds.num_items];
    for (rank, &item) in item_order.iter().enumerate() {
        let b = rank.checked_div(per_bin).map_or(NUM_BINS - 1, |b| b.min(NUM_BINS - 1));
        group_bins[b].push(item);
        item_bin[item] = b;
    }
    Ok(PopularityGrouping {
        threshold_fraction,
        item_order,
        user_order,
        item_counts: ds.item_counts.clone(),
        user_counts: ds.user_counts.clone(),
        popular,
        active,
        group_bins,
        item_bin,
    })
}

impl PopularityGrouping {
    pub fn is_popular(&self, item: usize) -> bool {
        self.popular[item]
    }

    pub fn is_active(&self, user: usize) -> bool {
        self.active[user]
    }

    /// Popular items in descending-count order.
    pub fn popular_items(&self) -> Vec<usize> {
        self.item_order.iter().copied().filter(|&i| self.popular[i]).collect()
    }

    pub fn unpopular_items(&self) -> Vec<usize> {
        self.item_order.iter().copied().filter(|&i| !self.popular[i]).collect()
    }

    pub fn active_users(&self) -> Vec<usize> {
        self.user_order.iter().copied().filter(|&u| self.active[u]).collect()
    }

    pub fn inactive_users(&self) -> Vec<usize> {
        self.user_order.iter().copied().filter(|&u| !self.active[u]).collect()
    }

    /// Items, most popular first.
    pub fn item_order(&self) -> &[usize] {
        &self.item_order
    }

    /// Users, most active first.
    pub fn user_order(&self) -> &[usize] {
        &self.user_order
    }

    pub fn item_counts(&self) -> &[usize] {
        &self.item_counts
    }

    pub fn user_counts(&self) -> &[usize] {
        &self.user_counts
    }

    pub fn group_bins(&self) -> &[Vec<usize>] {
        &self.group_bins
    }

    pub fn bin_of(&self, item: usize) -> usize {
        self.item_bin[item]
    }

    pub fn num_items(&self) -> usize {
        self.item_counts.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_counts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserGroupRow {
    pub group: &'static str,
    pub users: usize,
    /// Mean number of popular positive items per user.
    pub pop_i4u: f64,
    pub unp_i4u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemGroupRow {
    pub group: &'static str,
    pub items: usize,
    /// Mean number of active users per item.
    pub act_u4i: f64,
    pub ina_u4i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    /// All, Active, Inactive.
    pub users: Vec<UserGroupRow>,
    /// All, Popular, Unpopular.
    pub items: Vec<ItemGroupRow>,
}

/// Per-group means of popular/unpopular items per user and active/inactive
/// users per item. Empty groups report zero means.
pub fn grouping_stats(ds: &InteractionDataset, grouping: &PopularityGrouping) -> GroupStats {
    let mut pop_per_user = vec![0usize; ds.num_users];
    let mut unp_per_user = vec![0usize; ds.num_users];
    let mut act_per_item = vec![0usize; ds.num_items];
    let mut ina_per_item = vec![0usize; ds.num_items];
    for &(u, i) in &ds.interactions {
        if grouping.is_popular(i) {
            pop_per_user[u] += 1;
        } else {
            unp_per_user[u] += 1;
        }
        if grouping.is_active(u) {
            act_per_item[i] += 1;
        } else {
            ina_per_item[i] += 1;
        }
    }
    let mean = |members: &[usize], values: &[usize]| {
        if members.is_empty() {
            0.0
        } else {
            members.iter().map(|&x| values[x] as f64).sum::<f64>() / members.len() as f64
        }
    };
    let all_users: Vec<usize> = (0..ds.num_users).collect();
    let all_items: Vec<usize> = (0..ds.num_items).collect();
    let user_row = |group, members: &[usize]| UserGroupRow {
        group,
        users: members.len(),
        pop_i4u: mean(members, &pop_per_user),
        unp_i4u: mean(members, &unp_per_user),
    };
    let item_row = |group, members: &[usize]| ItemGroupRow {
        group,
        items: members.len(),
        act_u4i: mean(members, &act_per_item),
        ina_u4i: mean(members, &ina_per_item),
    };
    GroupStats {
        users: vec![
            user_row("all", &all_users),
            user_row("active", &grouping.active_users()),
            user_row("inactive", &grouping.inactive_users()),
        ],
        items: vec![
            item_row("all", &all_items),
            item_row("popular", &grouping.popular_items()),
            item_row("unpopular", &grouping.unpopular_items()),
        ],
    }
}
