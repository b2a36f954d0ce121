//! Chunk-level Shapley valuation.
//!
//! Each outer iteration draws a fresh pool of chunk subsets (see
//! [`select_subsets`]), initialises a model, and walks the chunks in order.
//! For chunk `j` every pooled subset `Z` that does not contain `j` is applied
//! as one summed-gradient SGD step from the previous checkpoint, then chunk
//! `j` is applied on top; the oriented validation score difference, weighted
//! by `C / (|D| * |Z|)`, is accumulated into `j`'s value. The checkpoint then
//! advances with one step over the union of those subsets. Final values are
//! the running mean over iterations.

mod engine;
mod subsets;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use engine::{cdash_value, chunk_value, EngineTrace, IterationTrace, ValuationResult};
pub use subsets::{select_subsets, SubsetPool};

/// Fraction of the pool a single chunk may appear in.
pub const MEMBERSHIP_CAP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdashConfig {
    /// Number of subsets in each pool (k).
    pub subset_count: usize,
    /// Chunks per subset. `None` picks `max(2, ceil(c / 10))`, capped at `c - 1`.
    pub subset_chunks: Option<usize>,
    /// Quality gate in raw metric units: minimum accuracy, or maximum RMSE.
    pub threshold: f64,
    pub eta: f64,
    /// Scale constant C.
    pub constant: f64,
    /// Relative stability tolerance for the running means.
    pub eps: f64,
    pub max_iters: usize,
    pub max_attempts: usize,
    pub seed: u64,
    /// Keep every pool and the subsets used per chunk in the result.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for CdashConfig {
    fn default() -> Self {
        CdashConfig {
            subset_count: 50,
            subset_chunks: None,
            threshold: 0.5,
            eta: 0.001,
            constant: 1.0,
            eps: 1e-3,
            max_iters: 50,
            max_attempts: 100,
            seed: 0,
            record_trace: false,
        }
    }
}

impl CdashConfig {
    /// Membership cap `floor(0.25 k)`.
    pub fn membership_cap(&self) -> usize {
        (MEMBERSHIP_CAP_FRACTION * self.subset_count as f64).floor() as usize
    }

    /// Chunks per subset for a partition of `c` chunks.
    pub fn chunks_per_subset(&self, c: usize) -> usize {
        self.subset_chunks
            .unwrap_or_else(|| 2.max(c.div_ceil(10)).min(c.saturating_sub(1)).max(1))
    }

    pub fn validate(&self, c: usize) -> Result<()> {
        if c < 2 {
            return Err(invalid(format!("need at least two chunks, got {c}")));
        }
        if self.subset_count < 4 {
            return Err(crate::Error::InfeasiblePool(format!(
                "k = {} gives a membership cap below one",
                self.subset_count
            )));
        }
        let s = self.chunks_per_subset(c);
        if s == 0 || s >= c {
            return Err(crate::Error::InfeasiblePool(format!(
                "{s} chunks per subset needs 1 <= s <= c - 1 with c = {c}"
            )));
        }
        if self.subset_count * s > self.membership_cap() * c {
            return Err(crate::Error::InfeasiblePool(format!(
                "{} subsets of {s} chunks cannot respect a cap of {} over {c} chunks",
                self.subset_count,
                self.membership_cap()
            )));
        }
        if !(self.eta > 0.0) || !(self.constant > 0.0) || !(self.eps >= 0.0) {
            return Err(invalid("eta and C must be positive, eps non-negative"));
        }
        if self.max_iters == 0 || self.max_attempts == 0 {
            return Err(invalid("max_iters and max_attempts must be positive"));
        }
        if !self.threshold.is_finite() {
            return Err(invalid("threshold must be finite"));
        }
        Ok(())
    }
}

/// Running mean of the first `t` rows of `history`.
pub fn running_mean(history: &[Vec<f64>], t: usize) -> Vec<f64> {
    let c = history.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; c];
    for row in &history[..t] {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    mean
}

/// Whether the running means have stabilised: the largest change between the
/// last two running-mean vectors is at most `eps` times their current range
/// (range floored at 1e-12).
pub fn values_stable(history: &[Vec<f64>], eps: f64) -> bool {
    let t = history.len();
    if t < 2 {
        return false;
    }
    let prev = running_mean(history, t - 1);
    let cur = running_mean(history, t);
    let change = prev
        .iter()
        .zip(&cur)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (lo, hi) = cur
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    change <= eps * (hi - lo).max(1e-12)
}

/// Stopping rule shared by every Monte-Carlo style method in the crate.
pub fn truncation_met(history: &[Vec<f64>], eps: f64, max_iters: usize) -> bool {
    history.len() >= max_iters || values_stable(history, eps)
}

/// Chunk ids ordered by ascending value; ties keep ascending id order.
pub fn rank_chunks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}
