//! Size selection: expected-utility maximization per user, the fixed /
//! random / validation / oracle baselines, and held-out evaluation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::PlattParams;
use crate::dataset::{candidate_items, ItemId, SplitDataset, UserId};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scorer::{rank_all, RankedList, ScoreTable};
use crate::utility::{
    expected_curves_exact, realized_utility, ApproxEstimator, Measure, Mode, UtilityCurve, DEFAULT_EXACT_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Perk,
    Fixed(usize),
    Rand,
    ValK,
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Perk => f.write_str("perk"),
            Method::Fixed(k) => write!(f, "top-{k}"),
            Method::Rand => f.write_str("rand"),
            Method::ValK => f.write_str("val_k"),
            Method::Oracle => f.write_str("oracle"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perk" => Ok(Method::Perk),
            "rand" => Ok(Method::Rand),
            "val_k" => Ok(Method::ValK),
            "oracle" => Ok(Method::Oracle),
            _ => s
                .strip_prefix("top-")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(Method::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

/// Recommendation with a per-user size.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedRec {
    pub user: UserId,
    pub method: Method,
    pub k: usize,
    /// The first `k` items of the user's ranked list.
    pub items: Vec<ItemId>,
    /// Expected utility at `k` (PerK only; NaN for the baselines).
    pub expected_value: f64,
}

/// 1-based argmax of the curve; ties go to the smallest size.
pub fn perk_select<F: Real>(curve: &UtilityCurve<F>) -> usize {
    argmax_first(&curve.values)
}

fn argmax_first<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (idx, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = idx;
        }
    }
    best + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    pub max_size: usize,
    pub bound_m: usize,
    pub mode: Mode,
    pub exact_cap: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            max_size: 50,
            bound_m: 2000,
            mode: Mode::Approx,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

/// Calibrated probabilities of every ranked candidate, in rank order.
pub fn calibrated_probs(ranked: &RankedList, params: &PlattParams<f64>) -> Vec<f64> {
    ranked.scores.iter().map(|&s| params.apply(s)).collect()
}

/// Expected-utility curves for several measures from one ranked list.
pub fn expected_curves(
    ranked: &RankedList,
    params: &PlattParams<f64>,
    measures: &[Measure],
    options: &SelectOptions,
) -> Result<Vec<UtilityCurve<f64>>> {
    if ranked.is_empty() {
        return Err(Error::DegenerateUser(ranked.user.to_string()));
    }
    let probs = calibrated_probs(ranked, params);
    match options.mode {
        Mode::Approx => {
            let estimator = ApproxEstimator::new(&probs, options.max_size, options.bound_m)?;
            Ok(measures.iter().map(|&m| estimator.curve(m)).collect())
        }
        Mode::Exact => expected_curves_exact(measures, &probs, options.max_size, options.exact_cap),
    }
}

/// Picks the size maximizing the curve and slices the ranked list.
pub fn recommend_from_curve(ranked: &RankedList, curve: &UtilityCurve<f64>) -> PersonalizedRec {
    let k = perk_select(curve);
    PersonalizedRec {
        user: ranked.user,
        method: Method::Perk,
        k,
        items: ranked.items[..k].to_vec(),
        expected_value: curve.at(k),
    }
}

/// Ranks the user's candidates, calibrates, estimates expected utility for
/// every size up to K and returns the maximizing prefix.
pub fn recommend(
    scores: &ScoreTable,
    candidates: &crate::dataset::CandidateSet,
    params: &PlattParams<f64>,
    measure: Measure,
    options: &SelectOptions,
) -> Result<PersonalizedRec> {
    if candidates.is_degenerate() {
        return Err(Error::DegenerateUser(candidates.user.to_string()));
    }
    let ranked = rank_all(scores, candidates)?;
    let curve = expected_curves(&ranked, params, &[measure], options)?
        .pop()
        .expect("one curve");
    Ok(recommend_from_curve(&ranked, &curve))
}

pub fn baseline_fixed(ranked: &RankedList, k: usize) -> PersonalizedRec {
    let k = k.max(1).min(ranked.len());
    PersonalizedRec {
        user: ranked.user,
        method: Method::Fixed(k),
        k,
        items: ranked.items[..k].to_vec(),
        expected_value: f64::NAN,
    }
}

/// Uniform size in `1..=max_size`, from a generator keyed by (seed, user).
pub fn baseline_rand(user: UserId, max_size: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(user));
    rng.random_range(1..=max_size.max(1))
}

/// Realized utility of each prefix size `1..=min(K, len)` of `ranked`
/// against the sorted `positives`.
pub fn realized_curve(ranked: &RankedList, positives: &[ItemId], measure: Measure, max_size: usize) -> Vec<f64> {
    let kmax = max_size.min(ranked.len());
    let labels: Vec<bool> = ranked.items[..kmax]
        .iter()
        .map(|i| positives.binary_search(i).is_ok())
        .collect();
    (1..=kmax)
        .map(|k| realized_utility(measure, &labels[..k], positives.len()).expect("positives cover the prefix hits"))
        .collect()
}

/// Size maximizing realized utility against validation positives, and
/// whether the choice is degenerate (no positives, size 1 by convention).
pub fn baseline_val_k(ranked: &RankedList, val_positives: &[ItemId], measure: Measure, max_size: usize) -> (usize, bool) {
    if val_positives.is_empty() || ranked.is_empty() {
        return (1, true);
    }
    (argmax_first(&realized_curve(ranked, val_positives, measure, max_size)), false)
}

/// Size maximizing realized utility against test positives.
pub fn oracle_k(ranked: &RankedList, test_positives: &[ItemId], measure: Measure, max_size: usize) -> usize {
    if ranked.is_empty() {
        return 1;
    }
    argmax_first(&realized_curve(ranked, test_positives, measure, max_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub measures: Vec<Measure>,
    pub fixed_sizes: Vec<usize>,
    pub rand: bool,
    pub val_k: bool,
    pub oracle: bool,
    pub options: SelectOptions,
    /// Drop validation positives from the evaluated ranking.
    pub exclude_val: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            measures: Measure::ALL.to_vec(),
            fixed_sizes: vec![1, 5, 10, 20, 50],
            rand: true,
            val_k: true,
            oracle: true,
            options: SelectOptions::default(),
            exclude_val: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn methods(&self) -> Vec<Method> {
        let mut methods = vec![Method::Perk];
        methods.extend(self.fixed_sizes.iter().map(|&k| Method::Fixed(k)));
        if self.rand {
            methods.push(Method::Rand);
        }
        if self.val_k {
            methods.push(Method::ValK);
        }
        if self.oracle {
            methods.push(Method::Oracle);
        }
        methods
    }
}

/// One method's outcome for one user and measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub method: Method,
    pub measure: Measure,
    pub k: usize,
    pub realized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEvaluation {
    pub user: UserId,
    /// The evaluated ranking, truncated to K.
    pub top: RankedList,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub measure: Measure,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub users: usize,
    pub skipped: Vec<SkippedUser>,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn mean(&self, method: &str, measure: Measure) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.measure == measure)
            .map(|r| r.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedUser {
    pub user: UserId,
    pub reason: String,
}

enum UserResult {
    NotEvaluable,
    Skipped(SkippedUser),
    Done(UserEvaluation),
}

/// Evaluates one user; `None` when the user has no test positives.
pub fn evaluate_user(
    user: UserId,
    split: &SplitDataset,
    scores: &ScoreTable,
    params: &PlattParams<f64>,
    config: &EvalConfig,
) -> Result<Option<UserEvaluation>> {
    let test = split.test.items_of(user);
    if test.is_empty() {
        return Ok(None);
    }
    let opts = &config.options;
    let candidates = candidate_items(user, split, config.exclude_val)?;
    if candidates.is_degenerate() {
        return Err(Error::DegenerateUser(user.to_string()));
    }
    let ranked = rank_all(scores, &candidates)?;
    let curves = expected_curves(&ranked, params, &config.measures, opts)?;
    let kmax = opts.max_size.min(ranked.len());
    let val_ranked = if config.val_k && config.exclude_val {
        Some(rank_all(scores, &candidate_items(user, split, false)?)?)
    } else {
        None
    };
    let rand_k = baseline_rand(user, kmax, config.seed);
    let methods = config.methods();
    let mut outcomes = Vec::with_capacity(methods.len() * config.measures.len());
    for (&measure, curve) in config.measures.iter().zip(&curves) {
        let realized = realized_curve(&ranked, test, measure, opts.max_size);
        for &method in &methods {
            let k = match method {
                Method::Perk => perk_select(curve),
                Method::Fixed(k) => k.min(kmax),
                Method::Rand => rand_k,
                Method::ValK => baseline_val_k(
                    val_ranked.as_ref().unwrap_or(&ranked),
                    split.val.items_of(user),
                    measure,
                    kmax,
                )
                .0
                .min(kmax),
                Method::Oracle => argmax_first(&realized),
            };
            outcomes.push(Outcome {
                method,
                measure,
                k,
                realized: realized[k - 1],
            });
        }
    }
    Ok(Some(UserEvaluation {
        user,
        top: ranked.prefix(kmax),
        outcomes,
    }))
}

/// Evaluates every method on every user with at least one test positive.
/// Users are processed in parallel on the current rayon pool; the report is
/// reduced sequentially in user order, so thread count never changes it.
pub fn evaluate(
    split: &SplitDataset,
    scores: &ScoreTable,
    params: &[PlattParams<f64>],
    config: &EvalConfig,
) -> Result<(EvaluationReport, Vec<UserEvaluation>)> {
    if params.len() != split.num_users() {
        return Err(Error::InvalidArgument(format!(
            "{} calibration maps for {} users",
            params.len(),
            split.num_users()
        )));
    }
    let results: Vec<UserResult> = (0..split.num_users() as UserId)
        .into_par_iter()
        .map(|u| match evaluate_user(u, split, scores, &params[u as usize], config) {
            Ok(None) => UserResult::NotEvaluable,
            Ok(Some(e)) => UserResult::Done(e),
            Err(e) => UserResult::Skipped(SkippedUser {
                user: u,
                reason: e.to_string(),
            }),
        })
        .collect();
    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            UserResult::NotEvaluable => {}
            UserResult::Skipped(s) => skipped.push(s),
            UserResult::Done(e) => evaluated.push(e),
        }
    }
    if evaluated.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let report = summarize(&evaluated, skipped, config);
    Ok((report, evaluated))
}

/// Per-(method, measure) means over `evaluated`, summed in slice order.
pub fn summarize(evaluated: &[UserEvaluation], skipped: Vec<SkippedUser>, config: &EvalConfig) -> EvaluationReport {
    let methods = config.methods();
    let mut rows = Vec::new();
    for &method in &methods {
        for &measure in &config.measures {
            let mut sum = 0.0;
            for user in evaluated {
                sum += user
                    .outcomes
                    .iter()
                    .find(|o| o.method == method && o.measure == measure)
                    .map_or(0.0, |o| o.realized);
            }
            rows.push(ReportRow {
                method: method.to_string(),
                measure,
                mean: sum / evaluated.len() as f64,
            });
        }
    }
    EvaluationReport {
        users: evaluated.len(),
        skipped,
        rows,
    }
}
