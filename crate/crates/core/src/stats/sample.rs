//! Variate generators for the generative models used in simulation:
//! Poisson session counts, per-user rates from a truncated normal or a
//! uniform, Bernoulli/binomial outcomes, and plain uniforms.
//!
//! Everything draws from a [`RngStream`], so output is reproducible from
//! `(master_seed, stream_index)` alone.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::stats::rng::RngStream;

/// Iteration cap for rejection sampling; hitting it means the requested
/// truncation region has essentially no mass under the parent normal.
const MAX_REJECTIONS: u32 = 10_000;

/// Reusable Poisson sampler (validates λ once).
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    dist: Poisson<f64>,
}

impl PoissonSampler {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::domain(format!(
                "Poisson rate must be positive and finite, got {lambda}"
            )));
        }
        let dist = Poisson::new(lambda)
            .map_err(|e| Error::domain(format!("Poisson rate {lambda}: {e}")))?;
        Ok(PoissonSampler { dist })
    }

    pub fn sample(&self, rng: &mut RngStream) -> u64 {
        self.dist.sample(rng) as u64
    }

    /// Draw until the count is positive. Used where a zero would produce an
    /// empty cluster that can never appear in the data being modeled.
    pub fn sample_positive(&self, rng: &mut RngStream) -> u64 {
        loop {
            let n = self.sample(rng);
            if n > 0 {
                return n;
            }
        }
    }
}

/// Poisson draw with rate λ > 0.
pub fn sample_poisson(lambda: f64, rng: &mut RngStream) -> Result<u64> {
    Ok(PoissonSampler::new(lambda)?.sample(rng))
}

/// Reusable truncated-normal sampler (rejection against the parent normal).
#[derive(Debug, Clone)]
pub struct TruncatedNormalSampler {
    parent: Normal<f64>,
    lo: f64,
    hi: f64,
}

impl TruncatedNormalSampler {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::domain(format!(
                "truncated normal needs a positive standard deviation, got {sd}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!(
                "truncation bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let parent = Normal::new(mean, sd)
            .map_err(|e| Error::domain(format!("normal({mean}, {sd}): {e}")))?;
        Ok(TruncatedNormalSampler { parent, lo, hi })
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        for _ in 0..MAX_REJECTIONS {
            let x = self.parent.sample(rng);
            if x >= self.lo && x <= self.hi {
                return Ok(x);
            }
        }
        Err(Error::domain(format!(
            "rejection sampling did not accept within {MAX_REJECTIONS} draws; \
             the parent normal has almost no mass in [{}, {}]",
            self.lo, self.hi
        )))
    }
}

/// Normal(mean, sd) draw restricted to [lo, hi] by rejection.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    TruncatedNormalSampler::new(mean, sd, lo, hi)?.sample(rng)
}

/// Bernoulli draw; p may be 0 or 1.
pub fn sample_bernoulli(p: f64, rng: &mut RngStream) -> Result<bool> {
    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
        return Err(Error::domain(format!(
            "Bernoulli probability must lie in [0,1], got {p}"
        )));
    }
    Ok(rng.random::<f64>() < p)
}

/// Uniform draw in [lo, hi).
pub fn sample_uniform(lo: f64, hi: f64, rng: &mut RngStream) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!(
            "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok(rng.random_range(lo..hi))
}

/// Reusable binomial sampler (validates n, p once; O(1) per draw).
#[derive(Debug, Clone)]
pub struct BinomialSampler {
    dist: Binomial,
}

impl BinomialSampler {
    pub fn new(n: u64, p: f64) -> Result<Self> {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::domain(format!(
                "binomial probability must lie in [0,1], got {p}"
            )));
        }
        let dist =
            Binomial::new(n, p).map_err(|e| Error::domain(format!("binomial({n}, {p}): {e}")))?;
        Ok(BinomialSampler { dist })
    }

    pub fn sample(&self, rng: &mut RngStream) -> u64 {
        self.dist.sample(rng)
    }
}

/// Binomial(n, p) draw.
pub fn sample_binomial(n: u64, p: f64, rng: &mut RngStream) -> Result<u64> {
    Ok(BinomialSampler::new(n, p)?.sample(rng))
}
