//! Adaptive stopping rules.
//!
//! Plain RANSAC stops once at least one all-inlier sample has been drawn with
//! probability `p0`. The latent variant needs two, and additionally the grid
//! has to detect the pair.

use crate::error::{Error, Result};

/// Returned when no finite number of iterations reaches the target.
pub const UNBOUNDED: u64 = u64::MAX;

const SEARCH_LIMIT: u64 = 1 << 62;

fn check_unit(name: &str, v: f64, allow_one: bool) -> Result<()> {
    let ok = v > 0.0 && (v < 1.0 || (allow_one && v == 1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidProbability(format!("{name} = {v}")))
    }
}

/// Probability that one sample of size `gamma` is all-inlier.
fn good_sample_probability(omega: f64, gamma: u32) -> f64 {
    omega.powi(gamma as i32)
}

/// `1 - (1 - p)^n`.
fn at_least_one(p: f64, n: u64) -> f64 {
    -(n as f64 * (-p).ln_1p()).exp_m1()
}

/// `P[G_n ≥ 2] = 1 - (1-p)^n - n p (1-p)^(n-1)` for `n` Bernoulli(p) draws.
pub fn prob_at_least_two(p: f64, n: u64) -> f64 {
    if n < 2 || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let lq = (-p).ln_1p();
    let nf = n as f64;
    let none = (nf * lq).exp();
    let one = (nf.ln() + p.ln() + (nf - 1.0) * lq).exp();
    (1.0 - none - one).clamp(0.0, 1.0)
}

/// Smallest `n` with `1 - (1 - ω^γ)^n ≥ p0`.
pub fn required_iterations_vanilla(p0: f64, omega: f64, gamma: u32) -> Result<u64> {
    check_unit("p0", p0, false)?;
    check_unit("omega", omega, true)?;
    if gamma < 1 {
        return Err(Error::InvalidProbability("gamma must be at least 1".into()));
    }
    let p = good_sample_probability(omega, gamma);
    if p >= 1.0 {
        return Ok(1);
    }
    let lq = (-p).ln_1p();
    if lq == 0.0 {
        return Ok(UNBOUNDED);
    }
    let estimate = ((1.0 - p0).ln() / lq).ceil();
    if !(estimate < SEARCH_LIMIT as f64) {
        return Ok(UNBOUNDED);
    }
    let mut n = (estimate as u64).max(1);
    while n > 1 && at_least_one(p, n - 1) >= p0 {
        n -= 1;
    }
    while at_least_one(p, n) < p0 {
        n += 1;
    }
    Ok(n)
}

/// Smallest `n` with `P[G_n ≥ 2] · detection ≥ p0`, where `detection` is the
/// probability that the grid reports a pair of good hypotheses. Returns
/// [`UNBOUNDED`] when the target cannot be reached.
pub fn required_iterations_latent(p0: f64, omega: f64, gamma: u32, detection: f64) -> Result<u64> {
    check_unit("p0", p0, false)?;
    check_unit("omega", omega, true)?;
    check_unit("detection probability", detection, true)?;
    if gamma < 1 {
        return Err(Error::InvalidProbability("gamma must be at least 1".into()));
    }
    let p = good_sample_probability(omega, gamma);
    let reached = |n: u64| prob_at_least_two(p, n) * detection >= p0;
    if p >= 1.0 {
        return Ok(if reached(2) { 2 } else { UNBOUNDED });
    }
    if p0 >= detection || p <= 0.0 {
        return Ok(UNBOUNDED);
    }
    let mut hi = 2u64;
    while !reached(hi) {
        if hi >= SEARCH_LIMIT {
            return Ok(UNBOUNDED);
        }
        hi *= 2;
    }
    let mut lo = hi / 2 + 1;
    if hi == 2 {
        return Ok(2);
    }
    // reached(hi), !reached(lo - 1)
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(hi)
}

/// Per-table lower bound `(1 - d/c)^λ` on the probability that two vectors
/// at ℓ∞ distance `d` share a cell of a randomly offset grid.
pub fn single_table_detection(distance: f64, cell_size: f64, dim: usize) -> f64 {
    (1.0 - distance / cell_size).clamp(0.0, 1.0).powi(dim as i32)
}

/// Lower bound `1 - (1 - (1 - d/c)^λ)^L` for `L` independent tables.
pub fn detection_lower_bound(distance: f64, cell_size: f64, dim: usize, tables: usize) -> f64 {
    let single = single_table_detection(distance, cell_size, dim);
    1.0 - (1.0 - single).powi(tables as i32)
}
