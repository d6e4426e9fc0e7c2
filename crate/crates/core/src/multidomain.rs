//! Splitting a total slot budget across domains so that the summed utility
//! of the per-domain prefixes is maximal (a multiple-choice knapsack).
//!
//! Generic over any ordered additive scalar, so exact rationals work as well
//! as floats.

use std::ops::Add;

use num_traits::Zero;

use crate::error::{Error, Result};

/// Chosen size per domain; `objective = Σ curve_x[size_x]` with a size of 0
/// contributing zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    pub sizes: Vec<usize>,
    pub total: usize,
    pub objective: T,
}

fn gain<T: Copy + Zero>(curve: &[T], k: usize) -> T {
    if k == 0 {
        T::zero()
    } else {
        curve[k - 1]
    }
}

fn check<T>(curves: &[Vec<T>], budget: usize, max_size: usize, allow_zero: bool) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no domains to allocate".into()));
    }
    if max_size == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(x) = curves.iter().position(|c| c.len() < max_size) {
        return Err(Error::InvalidArgument(format!(
            "curve of domain {x} has {} values, expected {max_size}",
            curves[x].len()
        )));
    }
    if !allow_zero && budget < curves.len() {
        return Err(Error::Infeasible {
            budget,
            domains: curves.len(),
        });
    }
    Ok(())
}

/// Exact dynamic program over (domain, remaining budget). Among optimal
/// allocations the lexicographically smallest size vector is returned.
/// `O(|S| · N · K)` time.
pub fn allocate<T>(curves: &[Vec<T>], budget: usize, max_size: usize, allow_zero: bool) -> Result<Allocation<T>>
where
    T: Copy + PartialOrd + Zero + Add<Output = T>,
{
    check(curves, budget, max_size, allow_zero)?;
    let lo = usize::from(!allow_zero);
    let domains = curves.len();
    // best[x][b]: optimum of domains x.. using at most b slots.
    let mut best: Vec<Vec<Option<T>>> = vec![vec![None; budget + 1]; domains + 1];
    best[domains] = vec![Some(T::zero()); budget + 1];
    for x in (0..domains).rev() {
        for b in 0..=budget {
            let mut top: Option<T> = None;
            for k in lo..=max_size.min(b) {
                if let Some(rest) = best[x + 1][b - k] {
                    let v = gain(&curves[x], k) + rest;
                    if top.is_none_or(|t| v > t) {
                        top = Some(v);
                    }
                }
            }
            best[x][b] = top;
        }
    }
    let objective = best[0][budget].ok_or(Error::Infeasible {
        budget,
        domains,
    })?;
    let mut sizes = Vec::with_capacity(domains);
    let mut left = budget;
    for x in 0..domains {
        let target = best[x][left].expect("reachable state");
        let k = (lo..=max_size.min(left))
            .find(|&k| best[x + 1][left - k].is_some_and(|rest| gain(&curves[x], k) + rest == target))
            .expect("optimum is attained");
        sizes.push(k);
        left -= k;
    }
    Ok(Allocation {
        total: sizes.iter().sum(),
        sizes,
        objective,
    })
}

/// Largest search space [`brute_force_allocate`] accepts.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Exhaustive search in lexicographic order with the same objective
/// association as [`allocate`] (`c₀ + (c₁ + (… + 0))`).
pub fn brute_force_allocate<T>(curves: &[Vec<T>], budget: usize, max_size: usize, allow_zero: bool) -> Result<Allocation<T>>
where
    T: Copy + PartialOrd + Zero + Add<Output = T>,
{
    check(curves, budget, max_size, allow_zero)?;
    let lo = usize::from(!allow_zero);
    let choices = (max_size + 1 - lo) as u128;
    let space = choices
        .checked_pow(curves.len() as u32)
        .filter(|&s| s <= BRUTE_FORCE_LIMIT)
        .ok_or(Error::SearchSpaceTooLarge(choices.saturating_pow(curves.len() as u32)))?;
    let mut sizes = vec![lo; curves.len()];
    let mut best: Option<Allocation<T>> = None;
    for _ in 0..space {
        let total: usize = sizes.iter().sum();
        if total <= budget {
            let objective = sizes
                .iter()
                .zip(curves)
                .rev()
                .fold(T::zero(), |acc, (&k, c)| gain(c, k) + acc);
            if best.as_ref().is_none_or(|b| objective > b.objective) {
                best = Some(Allocation {
                    sizes: sizes.clone(),
                    total,
                    objective,
                });
            }
        }
        // Odometer, last domain fastest.
        for x in (0..sizes.len()).rev() {
            if sizes[x] < max_size {
                sizes[x] += 1;
                break;
            }
            sizes[x] = lo;
        }
    }
    best.ok_or(Error::Infeasible {
        budget,
        domains: curves.len(),
    })
}
