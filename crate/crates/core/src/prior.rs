//! Gaussian-prior reference scores.
//!
//! A batch of `l` scores drawn from `N(mu, sigma^2)` stands in for the scores
//! of random normal samples. Their mean and spread anchor the deviation of
//! every bag score. The statistics are constants as far as differentiation
//! is concerned.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to the reference standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub mu: f64,
    pub sigma: f64,
    pub l: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
            l: 5000,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "prior needs finite mu and sigma > 0, got mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        if self.l < 2 {
            return Err(Error::Config(format!("prior sample size l must be >= 2, got {}", self.l)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub l: usize,
}

pub fn sample_reference_scores<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    let normal = Normal::new(cfg.mu, cfg.sigma)
        .map_err(|e| Error::Config(format!("prior distribution: {e}")))?;
    Ok((0..cfg.l).map(|_| normal.sample(rng)).collect())
}

/// Mean and population standard deviation (floored at [`SIGMA_FLOOR`]).
/// Single pass with Welford updates.
pub fn reference_stats(scores: &[f64]) -> Result<ReferenceStats> {
    if scores.len() < 2 {
        return Err(Error::Contract(format!(
            "reference statistics need at least 2 scores, got {}",
            scores.len()
        )));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &r) in scores.iter().enumerate() {
        let delta = r - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (r - mean);
    }
    let sigma = (m2 / scores.len() as f64).sqrt();
    Ok(ReferenceStats {
        mu_r: mean,
        sigma_r: sigma.max(SIGMA_FLOOR),
        l: scores.len(),
    })
}

/// One draw of the reference statistics, as done once per mini-batch.
pub fn draw_reference<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> Result<ReferenceStats> {
    reference_stats(&sample_reference_scores(cfg, rng)?)
}
