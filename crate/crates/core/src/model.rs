//! User/item embedding tables, inner-product scoring and checkpoints.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_ids, write_ids, IdMap};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Embeddings};
use crate::trainer::{GradientAccumulators, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitDistribution {
    /// Normal with mean 0 and standard deviation `scale`.
    Gaussian,
    /// Uniform on `[-scale, scale)`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub distribution: InitDistribution,
    pub scale: f64,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            distribution: InitDistribution::Gaussian,
            scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub(crate) users: Embeddings,
    pub(crate) items: Embeddings,
    pub normalize_users: bool,
    pub init: InitSpec,
}

fn fill(table: &mut Embeddings, spec: &InitSpec, rng: &mut ChaCha8Rng) -> Result<()> {
    if spec.scale == 0.0 {
        return Ok(());
    }
    match spec.distribution {
        InitDistribution::Gaussian => {
            let normal = Normal::new(0.0, spec.scale)
                .map_err(|e| Error::Config(format!("init scale {}: {e}", spec.scale)))?;
            table.as_mut_slice().iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        InitDistribution::Uniform => {
            table
                .as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-spec.scale..spec.scale));
        }
    }
    Ok(())
}

/// Seeded i.i.d. initialization; users are drawn before items from one stream.
pub fn init_model(num_users: usize, num_items: usize, dim: usize, init: InitSpec) -> Result<EmbeddingModel> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    if num_users == 0 || num_items == 0 {
        return Err(Error::Config(format!(
            "model needs at least one user and one item (got {num_users} users, {num_items} items)"
        )));
    }
    if !(init.scale.is_finite() && init.scale >= 0.0) {
        return Err(Error::Config(format!("init scale must be finite and non-negative (got {})", init.scale)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut users = Embeddings::zeros(num_users, dim);
    let mut items = Embeddings::zeros(num_items, dim);
    fill(&mut users, &init, &mut rng)?;
    fill(&mut items, &init, &mut rng)?;
    Ok(EmbeddingModel {
        users,
        items,
        normalize_users: false,
        init,
    })
}

impl EmbeddingModel {
    /// Wraps hand-built tables; both must share the same dimension.
    pub fn from_tables(users: Embeddings, items: Embeddings, normalize_users: bool) -> Result<Self> {
        if users.dim() != items.dim() || users.dim() == 0 {
            return Err(Error::Config(format!(
                "user dim {} and item dim {} must match and be positive",
                users.dim(),
                items.dim()
            )));
        }
        Ok(Self {
            users,
            items,
            normalize_users,
            init: InitSpec::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn users(&self) -> &Embeddings {
        &self.users
    }

    pub fn items(&self) -> &Embeddings {
        &self.items
    }

    pub fn users_mut(&mut self) -> &mut Embeddings {
        &mut self.users
    }

    pub fn items_mut(&mut self) -> &mut Embeddings {
        &mut self.items
    }

    pub fn user_vector(&self, u: usize) -> Result<&[f64]> {
        self.check_user(u)?;
        Ok(self.users.row(u))
    }

    pub fn item_vector(&self, i: usize) -> Result<&[f64]> {
        self.check_item(i)?;
        Ok(self.items.row(i))
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.num_users() {
            return Err(Error::Index { kind: "user", index: u, len: self.num_users() });
        }
        Ok(())
    }

    fn check_item(&self, i: usize) -> Result<()> {
        if i >= self.num_items() {
            return Err(Error::Index { kind: "item", index: i, len: self.num_items() });
        }
        Ok(())
    }

    /// The user vector as used in scoring: unit-normalized when
    /// `normalize_users` is set and the stored vector is nonzero.
    pub fn scoring_user_vector(&self, u: usize) -> Vec<f64> {
        let p = self.users.row(u);
        if self.normalize_users {
            let n = norm(p);
            if n > 0.0 {
                return p.iter().map(|x| x / n).collect();
            }
        }
        p.to_vec()
    }

    /// `P_u . Q_i`, or `(P_u / |P_u|) . Q_i` under user normalization. A zero
    /// user vector scores 0 with every item.
    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        let p = self.users.row(u);
        let q = self.items.row(i);
        let raw = dot(p, q);
        if self.normalize_users {
            let n = norm(p);
            if n > 0.0 {
                return Ok(raw / n);
            }
        }
        Ok(raw)
    }

    pub fn all_finite(&self) -> bool {
        self.users.all_finite() && self.items.all_finite()
    }
}

/// Stored checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

const USER_VECTORS: &str = "user_vectors.bin";
const ITEM_VECTORS: &str = "item_vectors.bin";
const ACCUM_USER: &str = "accum_user.bin";
const ACCUM_ITEM: &str = "accum_item.bin";
const ACCUM_ITEM_POS: &str = "accum_item_pos.bin";
const ACCUM_ITEM_NEG: &str = "accum_item_neg.bin";
const MANIFEST: &str = "manifest.json";
const USER_IDS: &str = "users.txt";
const ITEM_IDS: &str = "items.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PayloadEntry {
    file: String,
    rows: usize,
    cols: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    num_users: usize,
    num_items: usize,
    normalize_users: bool,
    init: InitSpec,
    config_hash: Option<String>,
    train_config: Option<String>,
    has_accumulators: bool,
    has_id_maps: bool,
    payloads: Vec<PayloadEntry>,
}

/// A trained model plus optional accumulators, id maps and the config that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub accumulators: Option<GradientAccumulators>,
    pub user_ids: Option<IdMap>,
    pub item_ids: Option<IdMap>,
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn new(model: EmbeddingModel) -> Self {
        Self {
            model,
            accumulators: None,
            user_ids: None,
            item_ids: None,
            train_config: None,
        }
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode(table: &Embeddings) -> Vec<u8> {
    table.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn write_payload(dir: &Path, name: &str, table: &Embeddings) -> Result<PayloadEntry> {
    let bytes = encode(table);
    let path = dir.join(name);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(PayloadEntry {
        file: name.to_owned(),
        rows: table.rows(),
        cols: table.dim(),
        sha256: sha256_hex(&bytes),
    })
}

fn read_payload(dir: &Path, entry: &PayloadEntry, rows: usize, cols: usize) -> Result<Embeddings> {
    let field = entry.file.trim_end_matches(".bin");
    if entry.rows != rows || entry.cols != cols {
        return Err(Error::checkpoint(
            field,
            format!("manifest shape {}x{} does not match expected {rows}x{cols}", entry.rows, entry.cols),
        ));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = rows * cols * 8;
    if bytes.len() != expected {
        return Err(Error::checkpoint(
            field,
            format!("size mismatch: {} bytes on disk, {expected} expected", bytes.len()),
        ));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::checkpoint(field, "corrupted payload: checksum mismatch"));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::checkpoint(field, "corrupted payload: non-finite value"));
    }
    Ok(Embeddings::from_vec(rows, cols, data))
}

/// Writes `dir/manifest.json` plus row-major little-endian `f64` payloads.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = &ckpt.model;
    let mut payloads = vec![
        write_payload(dir, USER_VECTORS, &model.users)?,
        write_payload(dir, ITEM_VECTORS, &model.items)?,
    ];
    if let Some(acc) = &ckpt.accumulators {
        if acc.user_acc.rows() != model.num_users() || acc.item_acc.rows() != model.num_items() {
            return Err(Error::checkpoint("accumulators", "shape does not match the model"));
        }
        payloads.push(write_payload(dir, ACCUM_USER, &acc.user_acc)?);
        payloads.push(write_payload(dir, ACCUM_ITEM, &acc.item_acc)?);
        payloads.push(write_payload(dir, ACCUM_ITEM_POS, &acc.item_pos_acc)?);
        payloads.push(write_payload(dir, ACCUM_ITEM_NEG, &acc.item_neg_acc)?);
    }
    let has_id_maps = match (&ckpt.user_ids, &ckpt.item_ids) {
        (Some(u), Some(i)) => {
            if u.len() != model.num_users() || i.len() != model.num_items() {
                return Err(Error::checkpoint("id_maps", "id map sizes do not match the model"));
            }
            write_ids(u, dir.join(USER_IDS))?;
            write_ids(i, dir.join(ITEM_IDS))?;
            true
        }
        _ => false,
    };
    let config_text = ckpt.train_config.as_ref().map(TrainConfig::to_config_text);
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dim: model.dim(),
        num_users: model.num_users(),
        num_items: model.num_items(),
        normalize_users: model.normalize_users,
        init: model.init,
        config_hash: config_text.as_deref().map(|t| sha256_hex(t.as_bytes())),
        train_config: config_text,
        has_accumulators: ckpt.accumulators.is_some(),
        has_id_maps,
        payloads,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::checkpoint(
            "version",
            format!("found {}, this build reads {CHECKPOINT_VERSION}", manifest.version),
        ));
    }
    let entry = |name: &str| {
        manifest
            .payloads
            .iter()
            .find(|p| p.file == name)
            .ok_or_else(|| Error::checkpoint(name.trim_end_matches(".bin"), "missing from manifest"))
    };
    let (nu, ni, d) = (manifest.num_users, manifest.num_items, manifest.dim);
    let users = read_payload(dir, entry(USER_VECTORS)?, nu, d)?;
    let items = read_payload(dir, entry(ITEM_VECTORS)?, ni, d)?;
    let accumulators = if manifest.has_accumulators {
        Some(GradientAccumulators {
            user_acc: read_payload(dir, entry(ACCUM_USER)?, nu, d)?,
            item_acc: read_payload(dir, entry(ACCUM_ITEM)?, ni, d)?,
            item_pos_acc: read_payload(dir, entry(ACCUM_ITEM_POS)?, ni, d)?,
            item_neg_acc: read_payload(dir, entry(ACCUM_ITEM_NEG)?, ni, d)?,
        })
    } else {
        None
    };
    let (user_ids, item_ids) = if manifest.has_id_maps {
        let u = read_ids(dir.join(USER_IDS))?;
        let i = read_ids(dir.join(ITEM_IDS))?;
        if u.len() != nu || i.len() != ni {
            return Err(Error::checkpoint("id_maps", "id map sizes do not match the manifest"));
        }
        (Some(u), Some(i))
    } else {
        (None, None)
    };
    let train_config = match &manifest.train_config {
        Some(t) => {
            if manifest.config_hash.as_deref() != Some(sha256_hex(t.as_bytes()).as_str()) {
                return Err(Error::checkpoint("config_hash", "does not match stored train_config"));
            }
            Some(TrainConfig::from_config_text(t).map_err(|e| Error::checkpoint("train_config", e.to_string()))?)
        }
        None => None,
    };
    Ok(Checkpoint {
        model: EmbeddingModel {
            users,
            items,
            normalize_users: manifest.normalize_users,
            init: manifest.init,
        },
        accumulators,
        user_ids,
        item_ids,
        train_config,
    })
}
