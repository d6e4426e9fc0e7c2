//! Poisson-Binomial distribution of the number of successes among
//! independent Bernoulli trials, truncated at a bound `M`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `mass[m] = P(S = m)` for `m = 0..=min(n, bound)`. Probability that would
/// land above `bound` is accumulated in `truncated_tail` and is not
/// redistributed.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution<F> {
    mass: Vec<F>,
    bound: usize,
    trials: usize,
    truncated_tail: F,
}

impl<F: Real> CountDistribution<F> {
    pub fn mass(&self) -> &[F] {
        &self.mass
    }

    /// `P(S = m)`, zero above the stored range.
    pub fn get(&self, m: usize) -> F {
        self.mass.get(m).copied().unwrap_or_else(F::zero)
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn truncated_tail(&self) -> F {
        self.truncated_tail
    }

    pub fn total_mass(&self) -> F {
        self.mass.iter().copied().sum()
    }

    pub fn to_json(&self) -> String
    where
        F: Into<f64>,
    {
        let values: Vec<f64> = self.mass.iter().map(|&x| x.into()).collect();
        serde_json::to_string(&values).expect("finite floats serialize")
    }
}

fn check_probs<F: Real>(probs: &[F]) -> Result<()> {
    for (index, &p) in probs.iter().enumerate() {
        if !(p >= F::zero() && p <= F::one()) {
            return Err(Error::ProbabilityDomain {
                index,
                value: p.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

/// Distribution of `Σ Y_j` with `Y_j ~ Bernoulli(probs[j])`, truncated at
/// `bound`, by the convolution recurrence
/// `D'[m] = p·D[m-1] + (1-p)·D[m]`. Costs `O(n · min(n, bound))`.
pub fn distribution<F: Real>(probs: &[F], bound: usize) -> Result<CountDistribution<F>> {
    check_probs(probs)?;
    Ok(convolve(probs.iter().copied(), probs.len(), bound))
}

/// Distribution over every trial except `probs[skip]`, recomputed from the
/// remaining probabilities.
pub fn leave_one_out<F: Real>(probs: &[F], skip: usize, bound: usize) -> Result<CountDistribution<F>> {
    if skip >= probs.len() {
        return Err(Error::IndexOutOfRange {
            index: skip,
            len: probs.len(),
        });
    }
    check_probs(probs)?;
    let rest = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &p)| p);
    Ok(convolve(rest, probs.len() - 1, bound))
}

fn convolve<F: Real>(probs: impl Iterator<Item = F>, n: usize, bound: usize) -> CountDistribution<F> {
    let width = n.min(bound) + 1;
    // Masses below the smallest normal value are dropped: subnormal
    // arithmetic is very slow, and for long candidate lists most of the
    // support is far below it. The live support is `cur[lo..hi]`; the
    // dropped mass is under `n · width · F::min_positive_value()` in total.
    let tiny = F::min_positive_value();
    // Double buffer: the update reads only the previous row, which lets the
    // inner loop vectorize.
    let mut cur = vec![F::zero(); width];
    let mut next = vec![F::zero(); width];
    cur[0] = F::one();
    let mut tail = F::zero();
    let (mut lo, mut hi) = (0usize, 1usize);
    for p in probs {
        let q = F::one() - p;
        let top = p * cur[hi - 1];
        if hi == width {
            tail += top;
        }
        next[lo] = q * cur[lo];
        for ((out, &a), &b) in next[lo + 1..hi].iter_mut().zip(&cur[lo..hi - 1]).zip(&cur[lo + 1..hi]) {
            *out = p * a + q * b;
        }
        if hi < width && top >= tiny {
            next[hi] = top;
            hi += 1;
        }
        // The lowest live mass can only shrink, so a dropped entry stays
        // negligible.
        while lo + 1 < hi && next[lo] < tiny {
            lo += 1;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    // Entries at and above `hi` were never written in either buffer.
    cur[..lo].fill(F::zero());
    CountDistribution {
        mass: cur,
        bound,
        trials: n,
        truncated_tail: tail,
    }
}
