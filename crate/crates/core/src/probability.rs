//! Placement probability math.
//!
//! A cell's records are spread over `n` blocks following a normal density
//! `h` on `[0, lambda]`: block `a` (1-based) receives the mass of the interval
//! `[(a-1)Δ, aΔ)` with `Δ = lambda / n`. Cells are decorrelated by rotating
//! that vector by `(i-1)·δ` blocks (`δ = n / m`) so every block carries about
//! the same total mass. Indexes in this module are 1-based, matching the
//! placement function's domain `(i, j) ∈ [1, m] × [1, n]`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default standard deviation, roughly `1 / sqrt(2π)` so the peak density is 1.
pub const DEFAULT_SIGMA: f64 = 0.3989;
pub const DEFAULT_TRUNK_CAPACITY: usize = 1000;

/// Error function, accurate to a few ulps of `T`.
pub fn erf<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        return -erf(-x);
    }
    if x < T::of(2.0) {
        erf_series(x)
    } else {
        T::one() - erfc_cf(x)
    }
}

/// Complementary error function `1 - erf(x)` without cancellation in the
/// upper tail.
pub fn erfc<T: Scalar>(x: T) -> T {
    if x < T::zero() {
        T::of(2.0) - erfc(-x)
    } else if x < T::of(0.8) {
        T::one() - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

// erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_k 2^k x^(2k+1) / (2k+1)!!
// All terms are positive, so there is no cancellation.
fn erf_series<T: Scalar>(x: T) -> T {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let two = T::of(2.0);
    for k in 1..200 {
        term = term * two * x2 / T::of_usize(2 * k + 1);
        sum = sum + term;
        if term <= sum * T::epsilon() {
            break;
        }
    }
    T::FRAC_2_SQRT_PI() * (-x2).exp() * sum
}

// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
// evaluated with the modified Lentz method.
fn erfc_cf<T: Scalar>(x: T) -> T {
    let tiny = T::min_positive_value().sqrt();
    let half = T::of(0.5);
    let mut f = x;
    let mut c = f;
    let mut d = T::zero();
    for k in 1..2000 {
        let a = T::of_usize(k) * half;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = d.recip();
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    (-(x * x)).exp() / (T::PI().sqrt() * f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + DeserializeOwned")]
pub struct PlacementConfig<T> {
    /// Upper end of the density's support `[0, lambda]`.
    pub lambda: T,
    pub sigma: T,
    pub mu: T,
    /// Blocks per slot.
    pub n: usize,
    /// Cells in the table space.
    pub m: usize,
    pub slots: usize,
    pub trunk_capacity: usize,
}

impl<T: Scalar> PlacementConfig<T> {
    /// Config with the default density (`sigma = 0.3989`, `mu = lambda / 2`),
    /// one slot and the default trunk capacity.
    pub fn new(lambda: T, n: usize, m: usize) -> Self {
        PlacementConfig {
            lambda,
            sigma: T::of(DEFAULT_SIGMA),
            mu: lambda * T::of(0.5),
            n,
            m,
            slots: 1,
            trunk_capacity: DEFAULT_TRUNK_CAPACITY,
        }
    }

    pub fn with_mu(mut self, mu: T) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_slots(mut self, slots: usize) -> Self {
        self.slots = slots;
        self
    }

    pub fn with_trunk_capacity(mut self, cap: usize) -> Self {
        self.trunk_capacity = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !self.lambda.is_finite() || self.lambda <= T::zero() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !self.sigma.is_finite() || self.sigma <= T::zero() {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !self.mu.is_finite() {
            return bad(format!("mu must be finite, got {}", self.mu));
        }
        if self.lambda.fract() != T::zero() {
            return bad(format!("lambda must be integral, got {}", self.lambda));
        }
        let lambda = self.lambda.to_usize().unwrap_or(usize::MAX);
        if self.n <= lambda || !self.n.is_multiple_of(lambda) {
            return bad(format!(
                "block count n = {} must exceed lambda = {lambda} and be a multiple of it",
                self.n
            ));
        }
        if self.m == 0 || !self.n.is_multiple_of(self.m) {
            return bad(format!(
                "block count n = {} must be a multiple of cell count m = {}",
                self.n, self.m
            ));
        }
        if self.slots == 0 {
            return bad("slot count must be at least 1".into());
        }
        if self.trunk_capacity == 0 {
            return bad("trunk capacity must be at least 1".into());
        }
        Ok(())
    }

    /// Width of one block's interval, `lambda / n`.
    pub fn delta_x(&self) -> T {
        self.lambda / T::of_usize(self.n)
    }

    /// Rotation between consecutive cells, `n / m` blocks.
    pub fn offset_step(&self) -> usize {
        self.n / self.m
    }

    /// Mass of the density outside `[0, lambda]`.
    pub fn epsilon_tail(&self) -> T {
        cdf(T::zero(), self) + upper_tail(self.lambda, self)
    }
}

/// Normal density with mean `mu` and standard deviation `sigma`.
pub fn density<T: Scalar>(x: T, cfg: &PlacementConfig<T>) -> T {
    let z = (x - cfg.mu) / cfg.sigma;
    (-(z * z) * T::of(0.5)).exp() / (cfg.sigma * T::TAU().sqrt())
}

/// Normal CDF, `½[1 + erf((x - mu) / (sigma·√2))]`.
pub fn cdf<T: Scalar>(x: T, cfg: &PlacementConfig<T>) -> T {
    T::of(0.5) * erfc(-(x - cfg.mu) / (cfg.sigma * T::SQRT_2()))
}

/// `1 - cdf(x)`, accurate in the upper tail.
pub fn upper_tail<T: Scalar>(x: T, cfg: &PlacementConfig<T>) -> T {
    T::of(0.5) * erfc((x - cfg.mu) / (cfg.sigma * T::SQRT_2()))
}

/// Density mass on `[0, lambda]`, i.e. `H(lambda) - H(0)`.
pub fn support_mass<T: Scalar>(cfg: &PlacementConfig<T>) -> T {
    cdf(cfg.lambda, cfg) - cdf(T::zero(), cfg)
}

fn interval_mass<T: Scalar>(lo: T, hi: T, cfg: &PlacementConfig<T>) -> T {
    // difference of whichever tail is small, to keep precision far from mu
    let mass = if lo >= cfg.mu {
        upper_tail(lo, cfg) - upper_tail(hi, cfg)
    } else {
        cdf(hi, cfg) - cdf(lo, cfg)
    };
    mass.max(T::min_positive_value())
}

/// Placement probability of block `a` (1-based) for an unrotated cell:
/// `H(aΔ) - H((a-1)Δ)`, never zero.
pub fn block_pp<T: Scalar>(a: usize, cfg: &PlacementConfig<T>) -> Result<T> {
    if a == 0 || a > cfg.n {
        return Err(Error::InvalidArgument(format!(
            "block {a} outside 1..={}",
            cfg.n
        )));
    }
    let dx = cfg.delta_x();
    Ok(interval_mass(
        T::of_usize(a - 1) * dx,
        T::of_usize(a) * dx,
        cfg,
    ))
}

/// Rotated block index for cell `i` and block `j`, both 1-based:
/// `((j - 1 + (i - 1)·δ) mod n) + 1`.
pub fn offset_index<T: Scalar>(i: usize, j: usize, cfg: &PlacementConfig<T>) -> Result<usize> {
    if i == 0 || i > cfg.m {
        return Err(Error::InvalidArgument(format!(
            "cell {i} outside 1..={}",
            cfg.m
        )));
    }
    if j == 0 || j > cfg.n {
        return Err(Error::InvalidArgument(format!(
            "block {j} outside 1..={}",
            cfg.n
        )));
    }
    Ok((j - 1 + (i - 1) * cfg.offset_step()) % cfg.n + 1)
}

/// Inverse of [`offset_index`] in its second argument.
pub fn unoffset_index<T: Scalar>(i: usize, x: usize, cfg: &PlacementConfig<T>) -> usize {
    let shift = ((i - 1) * cfg.offset_step()) % cfg.n;
    (x - 1 + cfg.n - shift) % cfg.n + 1
}

/// Probability that a record of cell `i` is placed in block `j`.
pub fn dpa_prob<T: Scalar>(i: usize, j: usize, cfg: &PlacementConfig<T>) -> Result<T> {
    block_pp(offset_index(i, j, cfg)?, cfg)
}

/// Probability that a block with placement probability `p` holds at least one
/// of `omega` independently placed records: `1 - (1-p)^omega`.
pub fn existence_prob<T: Scalar>(p: T, omega: u64) -> T {
    -(T::of_u64(omega) * (-p).ln_1p()).exp_m1()
}

/// `(1-p)^omega`, the complement of [`existence_prob`].
pub fn not_existence_prob<T: Scalar>(p: T, omega: u64) -> T {
    (T::of_u64(omega) * (-p).ln_1p()).exp()
}

/// Precomputed block probabilities with prefix sums for inverse sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable<T> {
    cfg: PlacementConfig<T>,
    pp: Vec<T>,
    cum: Vec<T>,
}

impl<T: Scalar> ProbTable<T> {
    pub fn build(cfg: &PlacementConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let dx = cfg.delta_x();
        let pp: Vec<T> = (1..=cfg.n)
            .map(|a| interval_mass(T::of_usize(a - 1) * dx, T::of_usize(a) * dx, cfg))
            .collect();
        let cum = pp
            .iter()
            .scan(T::zero(), |acc, &p| {
                *acc = *acc + p;
                Some(*acc)
            })
            .collect();
        Ok(ProbTable { cfg: *cfg, pp, cum })
    }

    pub fn config(&self) -> &PlacementConfig<T> {
        &self.cfg
    }

    /// `pp[a]` is the probability of block `a + 1`.
    pub fn pp(&self) -> &[T] {
        &self.pp
    }

    pub fn cum(&self) -> &[T] {
        &self.cum
    }

    pub fn total(&self) -> T {
        *self.cum.last().expect("n >= 1")
    }

    /// Probability of block `j` (1-based) for cell `i` (1-based).
    pub fn dpa(&self, i: usize, j: usize) -> T {
        self.pp[offset_index(i, j, &self.cfg).expect("index in range") - 1]
    }

    /// Smallest block `a` (1-based) with `cum[a-1] > u`. Drawing `u`
    /// uniformly from `[0, total)` yields block `a` with probability
    /// `pp[a-1] / total`.
    pub fn sample_block(&self, u: T) -> Result<usize> {
        if !(u >= T::zero() && u < self.total()) {
            return Err(Error::InvalidArgument(format!(
                "sample point {u} outside [0, {})",
                self.total()
            )));
        }
        Ok(self.cum.partition_point(|&c| c <= u) + 1)
    }

    /// Block for a record of cell `i` (1-based) given sample point `u`.
    pub fn sample_cell_block(&self, i: usize, u: T) -> Result<usize> {
        let x = self.sample_block(u)?;
        Ok(unoffset_index(i, x, &self.cfg))
    }
}

pub fn build_prob_table<T: Scalar>(cfg: &PlacementConfig<T>) -> Result<ProbTable<T>> {
    ProbTable::build(cfg)
}

pub fn sample_block<T: Scalar>(table: &ProbTable<T>, u: T) -> Result<usize> {
    table.sample_block(u)
}

/// Per-block existence probability `1 - (1 - f(a))^omega` for an unrotated
/// cell, in block order.
pub fn existence_profile<T: Scalar>(table: &ProbTable<T>, omega: u64) -> Vec<T> {
    table.pp.iter().map(|&p| existence_prob(p, omega)).collect()
}
