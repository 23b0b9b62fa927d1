//! Loss-percentile selection: a bounded loss history and the `percentile^beta` rule.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HISTORY: usize = 1024;

/// FIFO of the most recent losses, capped at `capacity`.
///
/// Percentile queries are a linear scan. At the default capacity this costs
/// about a microsecond per query; an order-statistics tree could replace the
/// deque if much larger histories are needed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    capacity: usize,
    entries: VecDeque<f64>,
}

impl LossHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("history", "capacity must be at least 1"));
        }
        Ok(LossHistory {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().copied()
    }

    pub fn push(&mut self, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Data(format!("non-finite loss {loss}")));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(loss);
        Ok(())
    }

    /// Fraction of held entries `<= loss`. Zero for an empty history.
    pub fn percentile(&self, loss: f64) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let at_or_below = self.entries.iter().filter(|&&e| e <= loss).count();
        at_or_below as f64 / self.entries.len() as f64
    }

    /// Push `loss`, then return its percentile among the held entries
    /// (inclusive of ties and of the value just pushed), so the result lies in `(0, 1]`.
    pub fn push_and_percentile(&mut self, loss: f64) -> Result<f64> {
        self.push(loss)?;
        Ok(self.percentile(loss))
    }
}

/// `percentile^beta`; `beta == 0` selects everything.
pub fn selection_probability(percentile: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    percentile.powf(beta)
}

/// The `beta` whose expected selection rate over uniform percentiles is `s`.
///
/// `E[U^beta] = 1 / (beta + 1)`, so `beta = 1/s - 1`.
pub fn beta_from_selectivity(s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::config(
            "selectivity",
            format!("must lie in (0, 1], got {s}"),
        ));
    }
    Ok((1.0 / s - 1.0).max(0.0))
}

/// Bernoulli draw. Probabilities `>= 1` return `true` without touching `rng`.
pub fn decide<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    if prob >= 1.0 {
        return true;
    }
    rng.gen::<f64>() < prob
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub beta: f64,
    #[serde(default = "default_history")]
    pub history_capacity: usize,
}

fn default_history() -> usize {
    DEFAULT_HISTORY
}

impl SamplerConfig {
    pub fn from_selectivity(s: f64, history_capacity: usize) -> Result<Self> {
        let cfg = SamplerConfig {
            beta: beta_from_selectivity(s)?,
            history_capacity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if self.history_capacity == 0 {
            return Err(Error::config("history", "capacity must be at least 1"));
        }
        Ok(())
    }
}

/// History plus exponent: the whole per-example probability calculation.
#[derive(Debug, Clone)]
pub struct Sampler {
    beta: f64,
    history: LossHistory,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sampler {
            beta: cfg.beta,
            history: LossHistory::new(cfg.history_capacity)?,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    pub fn calc_prob(&mut self, loss: f64) -> Result<f64> {
        let p = self.history.push_and_percentile(loss)?;
        Ok(selection_probability(p, self.beta))
    }
}
