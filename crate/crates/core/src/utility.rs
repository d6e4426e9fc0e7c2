//! Realized and expected user utilities (NDCG, PDCG, F1, truncated
//! precision) of top-k prefixes, for every k up to a maximum size.
//!
//! The expected value treats each candidate's relevance as an independent
//! Bernoulli variable with its calibrated probability. Conditioning on the
//! total relevant count `S` turns the ratio metrics into sums over the
//! Poisson-Binomial distribution of `S`:
//!
//! * exact: `Σ_{m=1..n} Σ_{r≤k} ω(r)·p_r·P(S₋ᵣ = m-1) / norm(m, k)`, where
//!   `S₋ᵣ` excludes rank `r`;
//! * approx: `P(S₋ᵣ = m-1)` is replaced by `P(S = m-1)` and the sum is cut
//!   at `m = M`, so one distribution serves all ranks.
//!
//! With `A[k] = Σ_{r≤k} p_r`, `W[k] = Σ_{r≤k} p_r/log₂(1+r)` and
//! `I[j] = Σ_{r≤j} 1/log₂(1+r)`, the approximate curves are
//!
//! ```text
//! NDCG[k] = W[k] · Σ_m D[m-1] / I[min(m,k)]
//! F1[k]   = 2·A[k] · Σ_m D[m-1] / (m+k)
//! TP[k]   = A[k] · Σ_m D[m-1] / min(k,m)
//! PDCG[k] = Σ_{r≤k} (2·p_r - 1) / log₂(1+r)      (exact by linearity)
//! ```
//!
//! so a user costs `O(n·M)` for the distribution plus `O(K·M)` for the
//! curves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poibin::{distribution, leave_one_out, CountDistribution};
use crate::scalar::{discount, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ndcg,
    Pdcg,
    F1,
    Tp,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Ndcg, Measure::Pdcg, Measure::F1, Measure::Tp];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Ndcg => "ndcg",
            Measure::Pdcg => "pdcg",
            Measure::F1 => "f1",
            Measure::Tp => "tp",
        }
    }

    /// Upper bound on `|U@k|`.
    pub fn bound<F: Real>(self, k: usize) -> F {
        match self {
            Measure::Pdcg => ideal_dcg(k),
            _ => F::one(),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Measure::Ndcg),
            "pdcg" => Ok(Measure::Pdcg),
            "f1" => Ok(Measure::F1),
            "tp" => Ok(Measure::Tp),
            other => Err(Error::InvalidArgument(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Approx,
    Exact,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Approx => "approx",
            Mode::Exact => "exact",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(Mode::Approx),
            "exact" => Ok(Mode::Exact),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// `values[k-1]` is the expected utility of the top-`k` prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCurve<F> {
    pub measure: Measure,
    pub mode: Mode,
    pub values: Vec<F>,
}

impl<F: Real> UtilityCurve<F> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Expected utility at size `k` (1-based).
    pub fn at(&self, k: usize) -> F {
        self.values[k - 1]
    }

    /// Every value finite and within the measure's range.
    pub fn within_bounds(&self, slack: F) -> bool {
        self.values.iter().enumerate().all(|(idx, &v)| {
            let k = idx + 1;
            let hi = self.measure.bound::<F>(k) + slack;
            v.is_finite()
                && match self.measure {
                    Measure::Pdcg => v.abs() <= hi,
                    _ => v >= -slack && v <= hi,
                }
        })
    }
}

fn ideal_dcg<F: Real>(k: usize) -> F {
    (1..=k).map(discount::<F>).sum()
}

/// Cumulative sums over the ranked top-K probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixStats<F> {
    /// `hits[k] = Σ_{r≤k} p_r`, `hits[0] = 0`.
    pub hits: Vec<F>,
    /// `weighted[k] = Σ_{r≤k} p_r / log₂(1+r)`.
    pub weighted: Vec<F>,
    /// `ideal[j] = Σ_{r≤j} 1 / log₂(1+r)`.
    pub ideal: Vec<F>,
}

impl<F: Real> PrefixStats<F> {
    pub fn new(top: &[F]) -> Self {
        let k = top.len();
        let mut hits = Vec::with_capacity(k + 1);
        let mut weighted = Vec::with_capacity(k + 1);
        let mut ideal = Vec::with_capacity(k + 1);
        let (mut a, mut w, mut i) = (F::zero(), F::zero(), F::zero());
        hits.push(a);
        weighted.push(w);
        ideal.push(i);
        for (idx, &p) in top.iter().enumerate() {
            let d = discount::<F>(idx + 1);
            a += p;
            w += p * d;
            i += d;
            hits.push(a);
            weighted.push(w);
            ideal.push(i);
        }
        Self { hits, weighted, ideal }
    }
}

/// Utility of a prefix with known labels; `total_relevant` is the user's
/// number of relevant items overall. NDCG, F1 and TP are 0 when it is 0.
pub fn realized_utility<F: Real>(measure: Measure, labels: &[bool], total_relevant: usize) -> Result<F> {
    let k = labels.len();
    if k == 0 {
        return Err(Error::InvalidArgument("prefix must hold at least one item".into()));
    }
    let hits = labels.iter().filter(|&&y| y).count();
    if hits > total_relevant {
        return Err(Error::InconsistentLabels {
            hits,
            total: total_relevant,
        });
    }
    let dcg = |penalize: bool| -> F {
        labels
            .iter()
            .enumerate()
            .map(|(idx, &y)| {
                let d = discount::<F>(idx + 1);
                if y {
                    d
                } else if penalize {
                    -d
                } else {
                    F::zero()
                }
            })
            .sum()
    };
    let s = total_relevant;
    Ok(match measure {
        Measure::Pdcg => dcg(true),
        _ if s == 0 => F::zero(),
        Measure::Ndcg => dcg(false) / ideal_dcg::<F>(s.min(k)),
        Measure::F1 => F::lit(2.0) * F::from_usize_lossy(hits) / F::from_usize_lossy(s + k),
        Measure::Tp => F::from_usize_lossy(hits) / F::from_usize_lossy(s.min(k)),
    })
}

/// `Σ_r (2·p_r - 1) / log₂(1+r)` over the whole slice.
pub fn expected_pdcg<F: Real>(top: &[F]) -> F {
    top.iter()
        .enumerate()
        .map(|(idx, &p)| (F::lit(2.0) * p - F::one()) * discount::<F>(idx + 1))
        .sum()
}

fn pdcg_curve<F: Real>(top: &[F]) -> Vec<F> {
    let mut acc = F::zero();
    top.iter()
        .enumerate()
        .map(|(idx, &p)| {
            acc += (F::lit(2.0) * p - F::one()) * discount::<F>(idx + 1);
            acc
        })
        .collect()
}

fn check_inputs<F: Real>(probs: &[F], max_size: usize) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if max_size == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(max_size.min(probs.len()))
}

/// Shared state of the approximate estimator for one user: one truncated
/// count distribution over all candidates plus prefix statistics of the
/// top-K. Curves for several measures can be drawn from it.
#[derive(Debug, Clone)]
pub struct ApproxEstimator<F> {
    top: Vec<F>,
    stats: PrefixStats<F>,
    dist: CountDistribution<F>,
    bound_m: usize,
}

impl<F: Real> ApproxEstimator<F> {
    /// `probs` holds every candidate's probability, its first `min(K, n)`
    /// entries being the ranked top-K; the remaining order is irrelevant.
    /// `bound_m` is the largest `m` kept in the sum over the relevant count.
    pub fn new(probs: &[F], max_size: usize, bound_m: usize) -> Result<Self> {
        let k = check_inputs(probs, max_size)?;
        if bound_m == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        let dist = distribution(probs, bound_m - 1)?;
        let top = probs[..k].to_vec();
        Ok(Self {
            stats: PrefixStats::new(&top),
            top,
            dist,
            bound_m,
        })
    }

    pub fn distribution(&self) -> &CountDistribution<F> {
        &self.dist
    }

    pub fn curve(&self, measure: Measure) -> UtilityCurve<F> {
        let values = match measure {
            Measure::Pdcg => pdcg_curve(&self.top),
            Measure::Ndcg => self.ndcg(),
            Measure::F1 => self.f1(),
            Measure::Tp => self.tp(),
        };
        UtilityCurve {
            measure,
            mode: Mode::Approx,
            values,
        }
    }

    /// Number of `m` terms that can be non-zero.
    fn terms(&self) -> usize {
        self.bound_m.min(self.dist.mass().len())
    }

    /// `tail[k] = Σ_{m=k..terms} D[m-1]` for `k = 1..=K+1` (index 0 unused).
    fn tails(&self) -> Vec<F> {
        let terms = self.terms();
        let kmax = self.top.len();
        let mut suffix = vec![F::zero(); terms + 2];
        for m in (1..=terms).rev() {
            suffix[m] = suffix[m + 1] + self.dist.get(m - 1);
        }
        (0..=kmax + 1)
            .map(|k| if k <= terms { suffix[k] } else { F::zero() })
            .collect()
    }

    fn ndcg(&self) -> Vec<F> {
        let terms = self.terms();
        let tails = self.tails();
        let ideal = &self.stats.ideal;
        let ideal_at = |m: usize| -> F {
            if m < ideal.len() {
                ideal[m]
            } else {
                ideal_dcg(m)
            }
        };
        // head = Σ_{m<k} D[m-1] / I[m]
        let mut head = F::zero();
        (1..=self.top.len())
            .map(|k| {
                if k >= 2 && k - 1 <= terms {
                    head += self.dist.get(k - 2) / ideal_at(k - 1);
                }
                self.stats.weighted[k] * (head + tails[k] / ideal[k])
            })
            .collect()
    }

    fn tp(&self) -> Vec<F> {
        let terms = self.terms();
        let tails = self.tails();
        let mut head = F::zero();
        (1..=self.top.len())
            .map(|k| {
                if k >= 2 && k - 1 <= terms {
                    head += self.dist.get(k - 2) / F::from_usize_lossy(k - 1);
                }
                self.stats.hits[k] * (head + tails[k] / F::from_usize_lossy(k))
            })
            .collect()
    }

    fn f1(&self) -> Vec<F> {
        let terms = self.terms();
        let mass = &self.dist.mass()[..terms];
        (1..=self.top.len())
            .map(|k| {
                let sum: F = mass
                    .iter()
                    .enumerate()
                    .map(|(idx, &d)| d / F::from_usize_lossy(idx + 1 + k))
                    .sum();
                F::lit(2.0) * self.stats.hits[k] * sum
            })
            .collect()
    }
}

/// Approximate expected-utility curve for `k = 1..=min(K, n)`.
pub fn expected_curve_approx<F: Real>(
    measure: Measure,
    probs: &[F],
    max_size: usize,
    bound_m: usize,
) -> Result<UtilityCurve<F>> {
    Ok(ApproxEstimator::new(probs, max_size, bound_m)?.curve(measure))
}

/// Default cap on the candidate count accepted by exact mode.
pub const DEFAULT_EXACT_CAP: usize = 2000;

/// Exact expected-utility curves (no truncation, per-rank leave-one-out
/// distributions) for every requested measure. Costs `O(K·n²)`.
pub fn expected_curves_exact<F: Real>(
    measures: &[Measure],
    probs: &[F],
    max_size: usize,
    cap: usize,
) -> Result<Vec<UtilityCurve<F>>> {
    let kmax = check_inputs(probs, max_size)?;
    let n = probs.len();
    if n > cap {
        return Err(Error::ExactCapExceeded { n, cap });
    }
    let needs_counts = measures.iter().any(|&m| m != Measure::Pdcg);
    // rows[k-1][m-1] = Σ_{r≤k} p_r P(S₋ᵣ = m-1), and the same with weight ω(r).
    let mut plain = vec![F::zero(); n];
    let mut weighted = vec![F::zero(); n];
    let ideal = PrefixStats::new(&probs[..kmax]).ideal;
    let mut curves: Vec<Vec<F>> = measures.iter().map(|_| Vec::with_capacity(kmax)).collect();
    for k in 1..=kmax {
        if needs_counts {
            let p = probs[k - 1];
            let d = discount::<F>(k);
            let loo = leave_one_out(probs, k - 1, n - 1)?;
            for (m0, &mass) in loo.mass().iter().enumerate() {
                plain[m0] += p * mass;
                weighted[m0] += p * d * mass;
            }
        }
        for (curve, &measure) in curves.iter_mut().zip(measures) {
            let value = match measure {
                Measure::Pdcg => expected_pdcg(&probs[..k]),
                Measure::Ndcg => (1..=n)
                    .map(|m| {
                        let norm = if m < k { ideal[m] } else { ideal[k] };
                        weighted[m - 1] / norm
                    })
                    .sum(),
                Measure::F1 => (1..=n)
                    .map(|m| F::lit(2.0) * plain[m - 1] / F::from_usize_lossy(m + k))
                    .sum(),
                Measure::Tp => (1..=n)
                    .map(|m| plain[m - 1] / F::from_usize_lossy(m.min(k)))
                    .sum(),
            };
            curve.push(value);
        }
    }
    Ok(measures
        .iter()
        .zip(curves)
        .map(|(&measure, values)| UtilityCurve {
            measure,
            mode: Mode::Exact,
            values,
        })
        .collect())
}

pub fn expected_curve_exact<F: Real>(
    measure: Measure,
    probs: &[F],
    max_size: usize,
    cap: usize,
) -> Result<UtilityCurve<F>> {
    Ok(expected_curves_exact(&[measure], probs, max_size, cap)?
        .pop()
        .expect("one curve per measure"))
}
