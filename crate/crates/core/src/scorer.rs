//! Ranking scores: a BPR matrix-factorization trainer, score tables and
//! deterministic top-k ranking.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{for_each_record, CandidateSet, InteractionSet, ItemId, SplitDataset, Universe, UserId};
use crate::error::{Error, Result};
use crate::scalar::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BprConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for BprConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 60,
            learning_rate: 0.05,
            weight_decay: 1e-5,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

/// Inner-product model: one embedding row per user and per item.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    n_users: usize,
    n_items: usize,
    dim: usize,
    user_vectors: Vec<f64>,
    item_vectors: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PERKMF01";

impl ScoreModel {
    /// Embeddings drawn uniformly from (-0.01, 0.01).
    pub fn init(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-0.01..0.01)).collect::<Vec<f64>>();
        let user_vectors = draw(n_users * dim);
        let item_vectors = draw(n_items * dim);
        Self {
            n_users,
            n_items,
            dim,
            user_vectors,
            item_vectors,
        }
    }

    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        dim: usize,
        user_vectors: Vec<f64>,
        item_vectors: Vec<f64>,
    ) -> Result<Self> {
        if user_vectors.len() != n_users * dim || item_vectors.len() != n_items * dim {
            return Err(Error::InvalidArgument("embedding matrix shape mismatch".into()));
        }
        if user_vectors.iter().chain(&item_vectors).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("embedding entries must be finite".into()));
        }
        Ok(Self {
            n_users,
            n_items,
            dim,
            user_vectors,
            item_vectors,
        })
    }

    pub fn num_users(&self) -> usize {
        self.n_users
    }

    pub fn num_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_vector(&self, user: UserId) -> &[f64] {
        let u = user as usize;
        &self.user_vectors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_vector(&self, item: ItemId) -> &[f64] {
        let i = item as usize;
        &self.item_vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Inner product of the user and item embeddings.
    pub fn score(&self, user: UserId, item: ItemId) -> Result<f64> {
        if user as usize >= self.n_users {
            return Err(Error::UnknownUser(user.to_string()));
        }
        if item as usize >= self.n_items {
            return Err(Error::UnknownItem(item.to_string()));
        }
        Ok(dot(self.user_vector(user), self.item_vector(item)))
    }

    /// Binary checkpoint: 8-byte magic, three little-endian `u64`
    /// (users, items, dim), then user and item matrices as row-major
    /// little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for n in [self.n_users, self.n_items, self.dim] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for x in self.user_vectors.iter().chain(&self.item_vectors) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() < 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let header = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (n_users, n_items, dim) = (header(0), header(1), header(2));
        let n_values = (n_users + n_items)
            .checked_mul(dim)
            .ok_or_else(|| Error::Checkpoint("dimensions overflow".into()))?;
        if bytes.len() != 32 + 8 * n_values {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                8 * n_values,
                bytes.len() - 32
            )));
        }
        let mut values = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let user_vectors = values.by_ref().take(n_users * dim).collect();
        let item_vectors = values.collect();
        Self::from_parts(n_users, n_items, dim, user_vectors, item_vectors)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains BPR-MF by sequential SGD on `-ln σ(s(u,i) - s(u,j))` with uniformly
/// sampled unobserved negatives `j`. Returns the model and the mean loss of
/// every epoch.
pub fn train_bpr(train: &InteractionSet, config: &BprConfig) -> Result<(ScoreModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
    }
    let n_items = train.num_items();
    let dim = config.dim;
    let mut model = ScoreModel::init(train.num_users(), n_items, dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut pairs: Vec<(UserId, ItemId)> = train
        .pairs()
        .filter(|&(u, _)| train.items_of(u).len() < n_items)
        .collect();
    let (lr, wd) = (config.learning_rate, config.weight_decay);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut grad_u = vec![0.0; dim];
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for &(u, pos) in &pairs {
            for _ in 0..config.negatives_per_positive {
                let neg = loop {
                    let j = rng.random_range(0..n_items as ItemId);
                    if !train.contains(u, j) {
                        break j;
                    }
                };
                let (ui, pi, ni) = (u as usize * dim, pos as usize * dim, neg as usize * dim);
                let uvec = &model.user_vectors[ui..ui + dim];
                let pvec = &model.item_vectors[pi..pi + dim];
                let nvec = &model.item_vectors[ni..ni + dim];
                let margin = dot(uvec, pvec) - dot(uvec, nvec);
                // -ln σ(x) = ln(1 + e^-x); its slope is -σ(-x).
                total += crate::scalar::softplus(-margin);
                steps += 1;
                let g = sigmoid(-margin);
                for (((gu, &p), &n), &u) in grad_u.iter_mut().zip(pvec).zip(nvec).zip(uvec) {
                    *gu = g * (p - n) - wd * u;
                }
                for (d, &gu) in grad_u.iter().enumerate() {
                    let uv = model.user_vectors[ui + d];
                    model.item_vectors[pi + d] += lr * (g * uv - wd * model.item_vectors[pi + d]);
                    model.item_vectors[ni + d] += lr * (-g * uv - wd * model.item_vectors[ni + d]);
                    model.user_vectors[ui + d] += lr * gu;
                }
            }
        }
        let mean = if steps == 0 { 0.0 } else { total / steps as f64 };
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                last_finite: losses.last().copied().unwrap_or(f64::NAN),
            });
        }
        log::debug!("bpr epoch {}: mean loss {mean:.6}", epoch + 1);
        losses.push(mean);
    }
    Ok((model, losses))
}

/// Per-user ranking scores, each user's entries sorted by item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    by_user: Vec<Vec<(ItemId, f64)>>,
}

impl ScoreTable {
    pub fn from_user_lists(mut by_user: Vec<Vec<(ItemId, f64)>>) -> Result<Self> {
        for (u, entries) in by_user.iter_mut().enumerate() {
            entries.sort_by_key(|&(i, _)| i);
            if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!("duplicate item scores for user {u}")));
            }
            if entries.iter().any(|(_, s)| !s.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite score for user {u}")));
            }
        }
        Ok(Self { by_user })
    }

    /// Scores of `model` over every user's unobserved (non-training) items.
    pub fn from_model(model: &ScoreModel, split: &SplitDataset) -> Result<Self> {
        let by_user = (0..split.num_users() as UserId)
            .map(|u| {
                let candidates = crate::dataset::candidate_items(u, split, false)?;
                candidates
                    .items
                    .iter()
                    .map(|&i| Ok((i, model.score(u, i)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { by_user })
    }

    pub fn num_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn entries(&self, user: UserId) -> &[(ItemId, f64)] {
        self.by_user.get(user as usize).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, user: UserId, item: ItemId) -> Option<f64> {
        let entries = self.entries(user);
        entries
            .binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|k| entries[k].1)
    }

    pub fn has_user(&self, user: UserId) -> bool {
        !self.entries(user).is_empty()
    }

    /// `user\titem\tscore` lines; scores use the shortest representation that
    /// parses back to the identical `f64`.
    pub fn write_tsv<W: Write>(&self, universe: &Universe, mut w: W) -> std::io::Result<()> {
        for (u, entries) in self.by_user.iter().enumerate() {
            let user = universe.user_name(u as UserId);
            for &(i, s) in entries {
                writeln!(w, "{user}\t{}\t{s:?}", universe.item_name(i))?;
            }
        }
        Ok(())
    }
}

/// Reads a `user\titem\tscore` file, resolving names against `universe`.
/// Non-finite scores, unknown names and duplicate pairs are rejected with the
/// offending line number.
pub fn import_scores(path: impl AsRef<Path>, universe: &Universe) -> Result<ScoreTable> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut by_user: Vec<Vec<(ItemId, f64)>> = vec![Vec::new(); universe.num_users()];
    let mut seen = std::collections::HashSet::new();
    for_each_record(reader, path, |line, fields| {
        let [user, item, score, ..] = fields.as_slice() else {
            return Err(Error::parse(path, line, "expected `user<TAB>item<TAB>score`"));
        };
        let u = universe
            .user_id(user)
            .ok_or_else(|| Error::parse(path, line, format!("unknown user {user:?}")))?;
        let i = universe
            .item_id(item)
            .ok_or_else(|| Error::parse(path, line, format!("unknown item {item:?}")))?;
        let s: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("invalid score {score:?}")))?;
        if !s.is_finite() {
            return Err(Error::parse(path, line, format!("non-finite score {score:?}")));
        }
        if !seen.insert((u, i)) {
            return Err(Error::parse(path, line, format!("duplicate pair ({user}, {item})")));
        }
        by_user[u as usize].push((i, s));
        Ok(())
    })?;
    ScoreTable::from_user_lists(by_user)
}

/// Items in display order: descending score, ties by ascending item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `k` entries (or all if shorter).
    pub fn prefix(&self, k: usize) -> RankedList {
        let k = k.min(self.len());
        RankedList {
            user: self.user,
            items: self.items[..k].to_vec(),
            scores: self.scores[..k].to_vec(),
        }
    }
}

fn rank_order(a: &(ItemId, f64), b: &(ItemId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`min(k, |candidates|)` candidates by score. Candidates without a score
/// in the table are not rankable and are skipped.
pub fn rank_topk(scores: &ScoreTable, candidates: &CandidateSet, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut scored = scored_candidates(scores, candidates)?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(RankedList {
        user: candidates.user,
        items: scored.iter().map(|e| e.0).collect(),
        scores: scored.iter().map(|e| e.1).collect(),
    })
}

/// Every scored candidate, fully ranked.
pub fn rank_all(scores: &ScoreTable, candidates: &CandidateSet) -> Result<RankedList> {
    rank_topk(scores, candidates, candidates.items.len().max(1))
}

fn scored_candidates(scores: &ScoreTable, candidates: &CandidateSet) -> Result<Vec<(ItemId, f64)>> {
    let entries = scores.entries(candidates.user);
    let mut scored = Vec::with_capacity(candidates.items.len());
    let mut cursor = 0;
    // Both lists are sorted by item id.
    for &item in &candidates.items {
        while cursor < entries.len() && entries[cursor].0 < item {
            cursor += 1;
        }
        if cursor < entries.len() && entries[cursor].0 == item {
            scored.push(entries[cursor]);
        }
    }
    if scored.is_empty() {
        return Err(Error::DegenerateUser(candidates.user.to_string()));
    }
    Ok(scored)
}
