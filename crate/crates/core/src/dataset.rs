//! Implicit-feedback interactions, k-core filtering, per-user splits and
//! candidate sets.
//!
//! Raw user and item names are remapped to dense `u32` ids on load. The
//! [`Universe`] owning the name tables is shared (via `Arc`) by every set
//! derived from the same load so ids stay comparable across splits.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// Name tables for dense user and item ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Universe {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, UserId>,
    item_index: HashMap<String, ItemId>,
}

impl Universe {
    pub fn new(users: Vec<String>, items: Vec<String>) -> Result<Self> {
        let user_index = index_names(&users, "user")?;
        let item_index = index_names(&items, "item")?;
        Ok(Self {
            users,
            items,
            user_index,
            item_index,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_name(&self, user: UserId) -> &str {
        &self.users[user as usize]
    }

    pub fn item_name(&self, item: ItemId) -> &str {
        &self.items[item as usize]
    }

    pub fn user_id(&self, name: &str) -> Option<UserId> {
        self.user_index.get(name).copied()
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.item_index.get(name).copied()
    }

    /// JSON id mapping `{"users": {...}, "items": {...}, "seed": n}`.
    pub fn to_mapping_json(&self, seed: u64) -> String {
        let mapping = IdMapping {
            users: self
                .users
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i as u32))
                .collect(),
            items: self
                .items
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i as u32))
                .collect(),
            seed,
        };
        serde_json::to_string_pretty(&mapping).expect("mapping serializes")
    }

    /// Inverse of [`Universe::to_mapping_json`]; returns the universe and the
    /// recorded seed.
    pub fn from_mapping_json(json: &str) -> Result<(Self, u64)> {
        let mapping: IdMapping = serde_json::from_str(json)?;
        let users = names_by_id(mapping.users, "user")?;
        let items = names_by_id(mapping.items, "item")?;
        Ok((Self::new(users, items)?, mapping.seed))
    }
}

#[derive(Serialize, Deserialize)]
struct IdMapping {
    users: BTreeMap<String, u32>,
    items: BTreeMap<String, u32>,
    seed: u64,
}

fn index_names(names: &[String], what: &str) -> Result<HashMap<String, u32>> {
    let mut index = HashMap::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if index.insert(name.clone(), i as u32).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate {what} name {name:?}")));
        }
    }
    Ok(index)
}

fn names_by_id(map: BTreeMap<String, u32>, what: &str) -> Result<Vec<String>> {
    let mut names = vec![None; map.len()];
    for (name, id) in map {
        match names.get_mut(id as usize) {
            Some(slot @ None) => *slot = Some(name),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{what} ids in mapping are not a dense 0-based range"
                )))
            }
        }
    }
    Ok(names.into_iter().map(Option::unwrap).collect())
}

/// A set of observed (user, item) pairs over a shared [`Universe`].
///
/// Stored per user as a sorted, duplicate-free item list.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    universe: Arc<Universe>,
    by_user: Vec<Vec<ItemId>>,
}

impl InteractionSet {
    /// Builds a set from per-user item lists; lists are sorted and deduplicated.
    pub fn from_user_lists(universe: Arc<Universe>, mut by_user: Vec<Vec<ItemId>>) -> Result<Self> {
        if by_user.len() != universe.num_users() {
            return Err(Error::InvalidArgument(format!(
                "{} user lists for {} users",
                by_user.len(),
                universe.num_users()
            )));
        }
        let n_items = universe.num_items() as ItemId;
        for items in &mut by_user {
            items.sort_unstable();
            items.dedup();
            if let Some(&bad) = items.iter().find(|&&i| i >= n_items) {
                return Err(Error::UnknownItem(bad.to_string()));
            }
        }
        Ok(Self { universe, by_user })
    }

    pub fn universe(&self) -> &Arc<Universe> {
        &self.universe
    }

    pub fn num_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn num_items(&self) -> usize {
        self.universe.num_items()
    }

    /// Number of (user, item) pairs.
    pub fn len(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.iter().all(Vec::is_empty)
    }

    /// Sorted items of `user`; empty for out-of-range ids.
    pub fn items_of(&self, user: UserId) -> &[ItemId] {
        self.by_user.get(user as usize).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.items_of(user).binary_search(&item).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as UserId, i)))
    }

    /// Writes `user\titem` lines in (user id, item id) order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (u, i) in self.pairs() {
            writeln!(w, "{}\t{}", self.universe.user_name(u), self.universe.item_name(i))?;
        }
        Ok(())
    }
}

/// Reads `user\titem` lines (extra tab-separated fields ignored), remapping
/// names to dense ids in order of first appearance. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionSet> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut by_user: Vec<Vec<ItemId>> = Vec::new();
    for_each_record(reader, path, |line_no, fields| {
        let (user, item) = two_fields(path, line_no, fields)?;
        let u = *user_index.entry(user.to_owned()).or_insert_with(|| {
            users.push(user.to_owned());
            by_user.push(Vec::new());
            (users.len() - 1) as u32
        });
        let i = *item_index.entry(item.to_owned()).or_insert_with(|| {
            items.push(item.to_owned());
            (items.len() - 1) as u32
        });
        by_user[u as usize].push(i);
        Ok(())
    })?;
    if users.is_empty() {
        return Err(Error::Empty(path.to_owned()));
    }
    let universe = Arc::new(Universe {
        users,
        items,
        user_index,
        item_index,
    });
    InteractionSet::from_user_lists(universe, by_user)
}

/// Reads `user\titem` lines against an existing universe; unknown names are
/// errors. An empty file yields an empty set.
pub fn load_interactions_in(path: impl AsRef<Path>, universe: &Arc<Universe>) -> Result<InteractionSet> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut by_user = vec![Vec::new(); universe.num_users()];
    for_each_record(reader, path, |line_no, fields| {
        let (user, item) = two_fields(path, line_no, fields)?;
        let u = universe
            .user_id(user)
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown user {user:?}")))?;
        let i = universe
            .item_id(item)
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown item {item:?}")))?;
        by_user[u as usize].push(i);
        Ok(())
    })?;
    InteractionSet::from_user_lists(universe.clone(), by_user)
}

/// Calls `f(line_number, fields)` for every non-comment, non-blank line.
pub(crate) fn for_each_record<R: BufRead>(
    reader: R,
    path: &Path,
    mut f: impl FnMut(usize, Vec<&str>) -> Result<()>,
) -> Result<()> {
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        f(idx + 1, line.split('\t').collect())?;
    }
    Ok(())
}

fn two_fields<'a>(path: &Path, line: usize, fields: Vec<&'a str>) -> Result<(&'a str, &'a str)> {
    match fields.as_slice() {
        [user, item, ..] if !user.is_empty() && !item.is_empty() => Ok((user, item)),
        _ => Err(Error::parse(path, line, "expected `user<TAB>item`")),
    }
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every survivor has at least `k`. Survivors are re-indexed densely,
/// preserving their relative id order.
pub fn kcore_filter(set: &InteractionSet, k: usize) -> InteractionSet {
    let k = k.max(1);
    let n_users = set.num_users();
    let n_items = set.num_items();
    let mut user_alive = vec![true; n_users];
    let mut item_alive = vec![true; n_items];
    let mut user_deg: Vec<usize> = set.by_user.iter().map(Vec::len).collect();
    let mut item_deg = vec![0usize; n_items];
    let mut item_users: Vec<Vec<UserId>> = vec![Vec::new(); n_items];
    for (u, i) in set.pairs() {
        item_deg[i as usize] += 1;
        item_users[i as usize].push(u);
    }

    let mut user_queue: Vec<usize> = (0..n_users).filter(|&u| user_deg[u] < k).collect();
    let mut item_queue: Vec<usize> = (0..n_items).filter(|&i| item_deg[i] < k).collect();
    while !user_queue.is_empty() || !item_queue.is_empty() {
        while let Some(u) = user_queue.pop() {
            if !user_alive[u] {
                continue;
            }
            user_alive[u] = false;
            for &i in &set.by_user[u] {
                let i = i as usize;
                if item_alive[i] {
                    item_deg[i] -= 1;
                    if item_deg[i] < k {
                        item_queue.push(i);
                    }
                }
            }
        }
        while let Some(i) = item_queue.pop() {
            if !item_alive[i] {
                continue;
            }
            item_alive[i] = false;
            for &u in &item_users[i] {
                let u = u as usize;
                if user_alive[u] {
                    user_deg[u] -= 1;
                    if user_deg[u] < k {
                        user_queue.push(u);
                    }
                }
            }
        }
    }

    let mut item_map = vec![u32::MAX; n_items];
    let mut items = Vec::new();
    for i in (0..n_items).filter(|&i| item_alive[i]) {
        item_map[i] = items.len() as u32;
        items.push(set.universe.items[i].clone());
    }
    let mut users = Vec::new();
    let mut by_user = Vec::new();
    for u in (0..n_users).filter(|&u| user_alive[u]) {
        users.push(set.universe.users[u].clone());
        by_user.push(
            set.by_user[u]
                .iter()
                .filter(|&&i| item_alive[i as usize])
                .map(|&i| item_map[i as usize])
                .collect(),
        );
    }
    if users.is_empty() {
        log::warn!("{k}-core filtering removed every interaction");
    }
    let universe = Arc::new(Universe::new(users, items).expect("names stay unique"));
    InteractionSet::from_user_lists(universe, by_user).expect("ids are in range")
}

/// Train/validation/test partition of one [`InteractionSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub val: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
}

impl SplitDataset {
    pub fn universe(&self) -> &Arc<Universe> {
        self.train.universe()
    }

    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }
}

/// Largest-remainder rounding of `n` into parts proportional to `ratios`.
/// Ties in the fractional part go to the earlier part.
pub fn part_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    const EPS: f64 = 1e-9;
    let quotas = ratios.map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| (q + EPS).floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    let frac = |j: usize| quotas[j] - sizes[j] as f64;
    order.sort_by(|&x, &y| frac(y).total_cmp(&frac(x)).then(x.cmp(&y)));
    for &j in order.iter().take(n.saturating_sub(assigned)) {
        sizes[j] += 1;
    }
    sizes
}

/// Randomly partitions each user's interactions by `ratios` (train, val,
/// test). One seeded generator is consumed in user-id order, so equal inputs
/// give equal splits.
pub fn split(set: &InteractionSet, ratios: [f64; 3], seed: u64) -> Result<SplitDataset> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = set.num_users();
    let (mut train, mut val, mut test) = (
        Vec::with_capacity(n_users),
        Vec::with_capacity(n_users),
        Vec::with_capacity(n_users),
    );
    for items in &set.by_user {
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let [n_train, n_val, _] = part_sizes(shuffled.len(), ratios);
        let rest = shuffled.split_off(n_train);
        let (v, t) = rest.split_at(n_val);
        train.push(shuffled);
        val.push(v.to_vec());
        test.push(t.to_vec());
    }
    let universe = set.universe().clone();
    Ok(SplitDataset {
        train: InteractionSet::from_user_lists(universe.clone(), train)?,
        val: InteractionSet::from_user_lists(universe.clone(), val)?,
        test: InteractionSet::from_user_lists(universe, test)?,
        seed,
    })
}

/// Items a user has not interacted with in training, ascending by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

impl CandidateSet {
    /// A user with no candidates cannot receive a recommendation.
    pub fn is_degenerate(&self) -> bool {
        self.items.is_empty()
    }
}

/// All items outside `user`'s training set; with `exclude_val`, the user's
/// validation positives are removed as well.
pub fn candidate_items(user: UserId, split: &SplitDataset, exclude_val: bool) -> Result<CandidateSet> {
    if user as usize >= split.num_users() {
        return Err(Error::UnknownUser(user.to_string()));
    }
    let train = split.train.items_of(user);
    let val = if exclude_val { split.val.items_of(user) } else { &[] };
    let items = (0..split.num_items() as ItemId)
        .filter(|i| train.binary_search(i).is_err() && val.binary_search(i).is_err())
        .collect();
    Ok(CandidateSet { user, items })
}
