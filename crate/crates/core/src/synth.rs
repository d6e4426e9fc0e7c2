//! Seeded synthetic data: a latent-factor interaction log for end-to-end
//! runs, and a world with known per-pair interaction probabilities.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{InteractionSet, ItemId, Universe};
use crate::error::Result;
use crate::scalar::sigmoid;
use crate::scorer::ScoreTable;

fn universe(n_users: usize, n_items: usize) -> Arc<Universe> {
    Arc::new(
        Universe::new(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
        )
        .expect("generated names are unique"),
    )
}

/// Each user samples between `min_per_user` and `max_per_user` distinct
/// items, without replacement, with weights `exp(affinity)` from a random
/// low-rank model plus item popularity.
pub fn latent_interactions(
    n_users: usize,
    n_items: usize,
    min_per_user: usize,
    max_per_user: usize,
    seed: u64,
) -> InteractionSet {
    const DIM: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let users: Vec<[f64; DIM]> = (0..n_users).map(|_| std::array::from_fn(|_| gauss(&mut rng))).collect();
    let items: Vec<[f64; DIM]> = (0..n_items).map(|_| std::array::from_fn(|_| gauss(&mut rng))).collect();
    let popularity: Vec<f64> = (0..n_items).map(|_| 0.5 * gauss(&mut rng)).collect();
    let max_per_user = max_per_user.min(n_items);
    let by_user = users
        .iter()
        .map(|u| {
            let n = rng.random_range(min_per_user.min(max_per_user)..=max_per_user);
            // Gumbel-top-n sampling without replacement.
            let mut keyed: Vec<(f64, ItemId)> = items
                .iter()
                .zip(&popularity)
                .enumerate()
                .map(|(i, (v, pop))| {
                    let affinity: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * 0.8 + pop;
                    let g: f64 = -(-rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
                    (affinity + g, i as ItemId)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.truncate(n);
            keyed.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    InteractionSet::from_user_lists(universe(n_users, n_items), by_user).expect("ids in range")
}

/// Knobs for [`ProbabilityWorld::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Range of the per-user mean logit of the interaction probability.
    pub logit_mean: (f64, f64),
    /// Range of the per-user spread of logits across items.
    pub logit_spread: (f64, f64),
    /// Standard deviation of the noise added to the logit before scoring.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 2000,
            logit_mean: (-6.0, -3.0),
            logit_spread: (1.0, 2.5),
            score_noise: 0.5,
            seed: 0,
        }
    }
}

/// Every (user, item) pair has a known interaction probability; the
/// observed interactions are one Bernoulli draw of all pairs, and the
/// scores are a noisy, user-specific increasing transform of the logits.
#[derive(Debug, Clone)]
pub struct ProbabilityWorld {
    pub probs: Vec<Vec<f64>>,
    pub interactions: InteractionSet,
    /// Raw scores over every item, row per user.
    pub scores: Vec<Vec<f64>>,
}

impl ProbabilityWorld {
    pub fn generate(config: &WorldConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noise = Normal::new(0.0, config.score_noise.max(0.0)).expect("valid noise");
        let mut probs = Vec::with_capacity(config.n_users);
        let mut scores = Vec::with_capacity(config.n_users);
        let mut by_user = Vec::with_capacity(config.n_users);
        for _ in 0..config.n_users {
            let mean = rng.random_range(config.logit_mean.0..=config.logit_mean.1);
            let spread = rng.random_range(config.logit_spread.0..=config.logit_spread.1);
            // Score scale and offset differ per user.
            let scale = rng.random_range(0.3..3.0);
            let offset = rng.random_range(-4.0..4.0);
            let mut p_row = Vec::with_capacity(config.n_items);
            let mut s_row = Vec::with_capacity(config.n_items);
            let mut positives = Vec::new();
            for i in 0..config.n_items {
                let z: f64 = StandardNormal.sample(&mut rng);
                let logit = mean + spread * z;
                let p = sigmoid(logit);
                if rng.random::<f64>() < p {
                    positives.push(i as ItemId);
                }
                p_row.push(p);
                s_row.push(scale * (logit + noise.sample(&mut rng)) + offset);
            }
            probs.push(p_row);
            scores.push(s_row);
            by_user.push(positives);
        }
        let interactions =
            InteractionSet::from_user_lists(universe(config.n_users, config.n_items), by_user).expect("ids in range");
        Self {
            probs,
            interactions,
            scores,
        }
    }

    /// Score table over each user's items outside `train`.
    pub fn score_table(&self, train: &InteractionSet) -> Result<ScoreTable> {
        let by_user = self
            .scores
            .iter()
            .enumerate()
            .map(|(u, row)| {
                let seen = train.items_of(u as u32);
                row.iter()
                    .enumerate()
                    .filter(|(i, _)| seen.binary_search(&(*i as ItemId)).is_err())
                    .map(|(i, &s)| (i as ItemId, s))
                    .collect()
            })
            .collect();
        ScoreTable::from_user_lists(by_user)
    }
}
