//! Platt scaling of ranking scores into interaction probabilities, fitted
//! per user (or globally) by Newton's method on binary cross-entropy, and the
//! expected calibration error.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{candidate_items, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::scalar::{logit, sigmoid, softplus, Real};
use crate::scorer::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// The user's own fit was unusable; global parameters were substituted.
    FallbackGlobal,
    /// No usable fit exists (e.g. a pooled set with a single label class).
    Degenerate,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::FallbackGlobal => "fallback_global",
            FitStatus::Degenerate => "degenerate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(FitStatus::Converged),
            "fallback_global" => Some(FitStatus::FallbackGlobal),
            "degenerate" => Some(FitStatus::Degenerate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    User(UserId),
    Global,
}

/// `p = σ(a·s + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattParams<F> {
    pub a: F,
    pub b: F,
    pub scope: Scope,
    pub status: FitStatus,
}

impl<F: Real> PlattParams<F> {
    pub fn new(a: F, b: F, scope: Scope, status: FitStatus) -> Self {
        Self { a, b, scope, status }
    }

    /// Calibrated probability, kept strictly inside (0, 1).
    pub fn apply(&self, score: F) -> F {
        let eps = F::epsilon();
        sigmoid(self.a * score + self.b).max(eps).min(F::one() - eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Bound on the max-norm of the mean-BCE gradient.
    pub tolerance: f64,
    /// `|a|` or `|b|` beyond this marks separable data.
    pub divergence_bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tolerance: 1e-8,
            divergence_bound: 50.0,
        }
    }
}

/// Scored, labelled pairs used to fit one calibration map.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet<F> {
    pub user: Option<UserId>,
    pub entries: Vec<(F, bool)>,
}

impl<F: Real> CalibrationSet<F> {
    pub fn new(user: Option<UserId>, entries: Vec<(F, bool)>) -> Self {
        Self { user, entries }
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.1).count()
    }

    /// No positive labels; such a set cannot support a per-user fit.
    pub fn has_no_positives(&self) -> bool {
        self.positives() == 0
    }

    /// Pools several sets into one (for the global fit).
    pub fn pooled<'a>(sets: impl IntoIterator<Item = &'a CalibrationSet<F>>) -> Self {
        Self {
            user: None,
            entries: sets.into_iter().flat_map(|s| s.entries.iter().copied()).collect(),
        }
    }
}

/// Labels every scored non-training item of `user`: validation positives are
/// 1, everything else 0. With `subsample_negatives = Some((count, seed))`
/// all positives are kept and `count` negatives are sampled uniformly.
pub fn build_calibration_set(
    user: UserId,
    split: &SplitDataset,
    scores: &ScoreTable,
    subsample_negatives: Option<(usize, u64)>,
) -> Result<CalibrationSet<f64>> {
    if !scores.has_user(user) {
        return Err(Error::UnknownUser(user.to_string()));
    }
    let candidates = candidate_items(user, split, false)?;
    let val = split.val.items_of(user);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for &item in &candidates.items {
        let Some(s) = scores.get(user, item) else { continue };
        if val.binary_search(&item).is_ok() {
            positives.push((item, s));
        } else {
            negatives.push((item, s));
        }
    }
    if let Some((count, seed)) = subsample_negatives {
        if count < negatives.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(user).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut keep = sample(&mut rng, negatives.len(), count).into_vec();
            keep.sort_unstable();
            negatives = keep.into_iter().map(|j| negatives[j]).collect();
        }
    }
    let mut entries: Vec<(u32, f64, bool)> = positives
        .into_iter()
        .map(|(i, s)| (i, s, true))
        .chain(negatives.into_iter().map(|(i, s)| (i, s, false)))
        .collect();
    entries.sort_unstable_by_key(|e| e.0);
    let set = CalibrationSet::new(Some(user), entries.into_iter().map(|(_, s, y)| (s, y)).collect());
    if set.has_no_positives() {
        log::debug!("user {user} has no validation positives");
    }
    Ok(set)
}

/// Mean binary cross-entropy of `σ(a·s + b)` and its gradient and Hessian.
struct Objective<F> {
    loss: F,
    grad: [F; 2],
    hess: [F; 3],
}

fn objective<F: Real>(entries: &[(F, bool)], a: F, b: F) -> Objective<F> {
    let mut loss = F::zero();
    let (mut ga, mut gb) = (F::zero(), F::zero());
    let (mut haa, mut hab, mut hbb) = (F::zero(), F::zero(), F::zero());
    for &(s, y) in entries {
        let z = a * s + b;
        let p = sigmoid(z);
        let yf = if y { F::one() } else { F::zero() };
        loss += softplus(z) - yf * z;
        let r = p - yf;
        ga += r * s;
        gb += r;
        let w = p * (F::one() - p);
        haa += w * s * s;
        hab += w * s;
        hbb += w;
    }
    let n = F::from_usize_lossy(entries.len());
    Objective {
        loss: loss / n,
        grad: [ga / n, gb / n],
        hess: [haa / n, hab / n, hbb / n],
    }
}

fn loss_only<F: Real>(entries: &[(F, bool)], a: F, b: F) -> F {
    let total: F = entries
        .iter()
        .map(|&(s, y)| {
            let z = a * s + b;
            softplus(z) - if y { z } else { F::zero() }
        })
        .sum();
    total / F::from_usize_lossy(entries.len())
}

/// Mean BCE of the map `σ(a·s + b)` on `set`.
pub fn mean_bce<F: Real>(set: &CalibrationSet<F>, a: F, b: F) -> F {
    loss_only(&set.entries, a, b)
}

/// Gradient of the mean BCE at `(a, b)`.
pub fn bce_gradient<F: Real>(set: &CalibrationSet<F>, a: F, b: F) -> [F; 2] {
    objective(&set.entries, a, b).grad
}

enum NewtonOutcome<F> {
    Converged(F, F),
    Diverged,
    Stalled,
}

/// Damped Newton iterations from `(a, b)`; a step is halved until the loss
/// does not increase. Once the gradient is inside tolerance one more full
/// step is taken if it lowers the gradient further.
fn newton<F: Real>(entries: &[(F, bool)], mut a: F, mut b: F, config: &FitConfig) -> NewtonOutcome<F> {
    let tol = F::lit(config.tolerance);
    let bound = F::lit(config.divergence_bound);
    let mut obj = objective(entries, a, b);
    for _ in 0..config.max_iters {
        let gnorm = obj.grad[0].abs().max(obj.grad[1].abs());
        if gnorm < tol {
            if let Some((da, db)) = newton_step(&obj) {
                let polished = objective(entries, a - da, b - db);
                if polished.grad[0].abs().max(polished.grad[1].abs()) < gnorm {
                    return NewtonOutcome::Converged(a - da, b - db);
                }
            }
            return NewtonOutcome::Converged(a, b);
        }
        let Some((da, db)) = newton_step(&obj) else {
            return NewtonOutcome::Stalled;
        };
        let mut t = F::one();
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (a - t * da, b - t * db);
            if loss_only(entries, na, nb) <= obj.loss {
                a = na;
                b = nb;
                accepted = true;
                break;
            }
            t *= F::lit(0.5);
        }
        if !accepted {
            return NewtonOutcome::Stalled;
        }
        if !(a.abs() <= bound && b.abs() <= bound) {
            return NewtonOutcome::Diverged;
        }
        obj = objective(entries, a, b);
    }
    let gnorm = obj.grad[0].abs().max(obj.grad[1].abs());
    if gnorm < tol {
        NewtonOutcome::Converged(a, b)
    } else {
        NewtonOutcome::Stalled
    }
}

fn newton_step<F: Real>(obj: &Objective<F>) -> Option<(F, F)> {
    let [haa, hab, hbb] = obj.hess;
    let det = haa * hbb - hab * hab;
    // Written so that a NaN determinant also counts as singular.
    let well_conditioned = det > F::epsilon() * (haa * hbb).max(F::min_positive_value());
    if !well_conditioned {
        return None;
    }
    let [ga, gb] = obj.grad;
    Some(((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det))
}

/// Outcome of fitting one set, before any global substitution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawFit<F> {
    Converged { a: F, b: F },
    /// Single label class, separable data, or no convergence.
    Unusable,
}

/// Fits `(a, b)` from an explicit starting point.
pub fn fit_from<F: Real>(set: &CalibrationSet<F>, config: &FitConfig, start: (F, F)) -> RawFit<F> {
    let positives = set.positives();
    if set.entries.is_empty() || positives == 0 || positives == set.entries.len() {
        return RawFit::Unusable;
    }
    let rate = F::from_usize_lossy(positives) / F::from_usize_lossy(set.entries.len());
    let first = set.entries[0].0;
    if set.entries.iter().all(|e| e.0 == first) {
        // Slope is unidentifiable: intercept-only MLE.
        return RawFit::Converged {
            a: F::zero(),
            b: logit(rate),
        };
    }
    match newton(&set.entries, start.0, start.1, config) {
        NewtonOutcome::Converged(a, b) => RawFit::Converged { a, b },
        NewtonOutcome::Diverged | NewtonOutcome::Stalled => RawFit::Unusable,
    }
}

/// Unregularized fit started from the intercept-only solution
/// `(0, logit(positive rate))`.
pub fn fit_raw<F: Real>(set: &CalibrationSet<F>, config: &FitConfig) -> RawFit<F> {
    let positives = set.positives();
    let start = if set.entries.is_empty() || positives == 0 || positives == set.entries.len() {
        (F::zero(), F::zero())
    } else {
        let rate = F::from_usize_lossy(positives) / F::from_usize_lossy(set.entries.len());
        (F::zero(), logit(rate))
    };
    fit_from(set, config, start)
}

/// Per-user fit; an unusable fit takes the global parameters with status
/// [`FitStatus::FallbackGlobal`].
pub fn fit_user<F: Real>(set: &CalibrationSet<F>, config: &FitConfig, global: &PlattParams<F>) -> PlattParams<F> {
    let scope = set.user.map_or(Scope::Global, Scope::User);
    match fit_raw(set, config) {
        RawFit::Converged { a, b } => PlattParams::new(a, b, scope, FitStatus::Converged),
        RawFit::Unusable => PlattParams::new(global.a, global.b, scope, FitStatus::FallbackGlobal),
    }
}

/// One map fitted on all users' pooled entries. A pool with a single label
/// class yields the clamped intercept-only map with status `Degenerate`.
pub fn fit_global<F: Real>(sets: &[CalibrationSet<F>], config: &FitConfig) -> Result<PlattParams<F>> {
    let pooled = CalibrationSet::pooled(sets);
    if pooled.entries.is_empty() {
        return Err(Error::InvalidArgument("global calibration pool is empty".into()));
    }
    Ok(match fit_raw(&pooled, config) {
        RawFit::Converged { a, b } => PlattParams::new(a, b, Scope::Global, FitStatus::Converged),
        RawFit::Unusable => {
            let n = F::from_usize_lossy(pooled.entries.len());
            let eps = F::lit(1e-6);
            let rate = (F::from_usize_lossy(pooled.positives()) / n).max(eps).min(F::one() - eps);
            PlattParams::new(F::zero(), logit(rate), Scope::Global, FitStatus::Degenerate)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_prediction: f64,
    pub mean_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    pub ece: f64,
    pub bins: usize,
    pub per_bin: Vec<EceBin>,
}

pub const DEFAULT_ECE_BINS: usize = 15;

/// Expected calibration error over `bins` equal-width bins of [0, 1];
/// a prediction of exactly 1 falls in the last bin.
pub fn ece<F: Real>(predictions: &[F], labels: &[bool], bins: usize) -> Result<EceReport> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("ECE of an empty sample".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut pred_sum = vec![0.0f64; bins];
    let mut label_sum = vec![0.0f64; bins];
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = p.to_f64().unwrap_or(f64::NAN);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityDomain {
                index: 0,
                value: p,
            });
        }
        let bin = ((p * bins as f64) as usize).min(bins - 1);
        count[bin] += 1;
        pred_sum[bin] += p;
        label_sum[bin] += if y { 1.0 } else { 0.0 };
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let per_bin = (0..bins)
        .map(|j| {
            let (mp, ml) = if count[j] == 0 {
                (0.0, 0.0)
            } else {
                (pred_sum[j] / count[j] as f64, label_sum[j] / count[j] as f64)
            };
            total += count[j] as f64 / n * (ml - mp).abs();
            EceBin {
                lower: j as f64 / bins as f64,
                upper: (j + 1) as f64 / bins as f64,
                count: count[j],
                mean_prediction: mp,
                mean_label: ml,
            }
        })
        .collect();
    Ok(EceReport {
        ece: total,
        bins,
        per_bin,
    })
}

/// Fitted maps for a whole split: the global map plus one map per user, in
/// user order. Users are fitted in parallel on the current rayon pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub global: PlattParams<f64>,
    pub users: Vec<PlattParams<f64>>,
}

pub fn fit_split(
    split: &SplitDataset,
    scores: &ScoreTable,
    config: &FitConfig,
    subsample_negatives: Option<(usize, u64)>,
) -> Result<Calibration> {
    let sets = (0..split.num_users() as UserId)
        .into_par_iter()
        .map(|u| build_calibration_set(u, split, scores, subsample_negatives))
        .collect::<Result<Vec<_>>>()?;
    let global = fit_global(&sets, config)?;
    let users = sets.par_iter().map(|set| fit_user(set, config, &global)).collect();
    Ok(Calibration { global, users })
}

/// Calibrated probabilities of the user's scored candidates outside train
/// and validation, with test membership as the label.
pub fn held_out_predictions(
    user: UserId,
    split: &SplitDataset,
    scores: &ScoreTable,
    params: &PlattParams<f64>,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let candidates = candidate_items(user, split, true)?;
    let test = split.test.items_of(user);
    let mut preds = Vec::with_capacity(candidates.items.len());
    let mut labels = Vec::with_capacity(candidates.items.len());
    for &item in &candidates.items {
        if let Some(s) = scores.get(user, item) {
            preds.push(params.apply(s));
            labels.push(test.binary_search(&item).is_ok());
        }
    }
    Ok((preds, labels))
}

/// Held-out calibration error of a set of maps: the ECE of all users'
/// predictions pooled, and the mean of per-user ECEs over users with at
/// least one held-out candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEce {
    pub pooled: EceReport,
    pub mean_user: f64,
    pub users: usize,
}

pub fn held_out_ece(
    split: &SplitDataset,
    scores: &ScoreTable,
    params: impl Fn(UserId) -> PlattParams<f64> + Sync,
    bins: usize,
) -> Result<HeldOutEce> {
    let per_user = (0..split.num_users() as UserId)
        .into_par_iter()
        .map(|u| held_out_predictions(u, split, scores, &params(u)))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut users = 0;
    for (preds, labels) in &per_user {
        if !preds.is_empty() {
            sum += ece(preds, labels, bins)?.ece;
            users += 1;
        }
    }
    let (preds, labels): (Vec<f64>, Vec<bool>) = per_user.into_iter().flat_map(|(p, l)| p.into_iter().zip(l)).unzip();
    Ok(HeldOutEce {
        pooled: ece(&preds, &labels, bins)?,
        mean_user: if users == 0 { 0.0 } else { sum / users as f64 },
        users,
    })
}
