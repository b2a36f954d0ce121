use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::engine::{chunk_gradients, step_with_chunks};
use super::CdashConfig;
use crate::dataset::{ChunkPartition, Dataset};
use crate::error::Result;
use crate::model::{evaluate_metric, init_params, Architecture, MetricSpec};
use crate::seeds::{self, tag};

/// `k` chunk subsets that passed the membership cap and the quality gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetPool {
    /// Sorted chunk ids per subset.
    pub subsets: Vec<Vec<usize>>,
    /// Number of subsets each chunk appears in.
    pub membership: Vec<usize>,
    /// Gate threshold in raw metric units.
    pub threshold: f64,
    /// Oriented gate score of each retained subset.
    pub scores: Vec<f64>,
    /// Candidates drawn before each subset was retained.
    pub attempts: Vec<usize>,
    /// Subsets kept as best-so-far after exhausting the attempt budget.
    pub violations: Vec<bool>,
}

impl SubsetPool {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn cap(&self) -> usize {
        (super::MEMBERSHIP_CAP_FRACTION * self.subsets.len() as f64).floor() as usize
    }

    pub fn cap_holds(&self) -> bool {
        let cap = self.cap();
        self.membership.iter().all(|&m| m <= cap)
    }

    pub fn threshold_holds(&self, metric: MetricSpec) -> bool {
        let bar = metric.orient(self.threshold);
        self.scores.iter().all(|&s| s >= bar)
    }

    pub fn any_violation(&self) -> bool {
        self.violations.iter().any(|&v| v)
    }

    /// Subsets not containing `chunk`; every subset when all of them do.
    pub fn excluding(&self, chunk: usize) -> Vec<usize> {
        let without: Vec<usize> = (0..self.subsets.len())
            .filter(|&i| self.subsets[i].binary_search(&chunk).is_err())
            .collect();
        if without.is_empty() {
            (0..self.subsets.len()).collect()
        } else {
            without
        }
    }
}

/// Build a subset pool with the configuration's seed.
///
/// Each subset holds `s` distinct chunks drawn uniformly among the chunks
/// still below the membership cap `floor(0.25 k)`. A candidate is kept when a
/// fresh model given one summed-gradient SGD step on its rows reaches the
/// threshold on `validation`; otherwise it is redrawn, up to
/// `max_attempts` times, after which the best candidate is kept and flagged.
pub fn select_subsets(
    partition: &ChunkPartition,
    train: &Dataset,
    validation: &Dataset,
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &CdashConfig,
) -> Result<SubsetPool> {
    select_pool(partition, train, validation, arch, metric, cfg, cfg.seed)
}

pub(crate) fn select_pool(
    partition: &ChunkPartition,
    train: &Dataset,
    validation: &Dataset,
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &CdashConfig,
    seed: u64,
) -> Result<SubsetPool> {
    let c = partition.len();
    cfg.validate(c)?;
    let k = cfg.subset_count;
    let s = cfg.chunks_per_subset(c);
    let cap = cfg.membership_cap();
    let bar = metric.orient(cfg.threshold);

    let gate_init = init_params(arch, seeds::derive(seed, tag::GATE_INIT))?;
    let all: Vec<usize> = (0..c).collect();
    let grads = chunk_gradients(&gate_init, train, partition, &all)?;
    let mut rng = seeds::rng(seeds::derive(seed, tag::POOL));

    let mut pool = SubsetPool {
        subsets: Vec::with_capacity(k),
        membership: vec![0; c],
        threshold: cfg.threshold,
        scores: Vec::with_capacity(k),
        attempts: Vec::with_capacity(k),
        violations: Vec::with_capacity(k),
    };
    for _ in 0..k {
        // (cap respected, score, subset)
        let mut best: Option<(bool, f64, Vec<usize>)> = None;
        let mut accepted = false;
        let mut attempts = 0;
        while attempts < cfg.max_attempts {
            attempts += 1;
            let eligible: Vec<usize> = (0..c).filter(|&j| pool.membership[j] < cap).collect();
            let cap_ok = eligible.len() >= s;
            let source = if cap_ok { &eligible } else { &all };
            let mut candidate: Vec<usize> = index::sample(&mut rng, source.len(), s)
                .into_iter()
                .map(|i| source[i])
                .collect();
            candidate.sort_unstable();
            let w = step_with_chunks(&gate_init, &grads, &candidate, cfg.eta);
            let score = evaluate_metric(&w, validation, metric)?;
            if !score.is_finite() {
                return Err(crate::Error::NonFinite("gate metric".into()));
            }
            let better = best
                .as_ref()
                .is_none_or(|(ok, sc, _)| (cap_ok, score) > (*ok, *sc));
            if better {
                best = Some((cap_ok, score, candidate));
            }
            if cap_ok && score >= bar {
                accepted = true;
                break;
            }
        }
        let (_, score, subset) = best.expect("at least one attempt");
        for &j in &subset {
            pool.membership[j] += 1;
        }
        pool.subsets.push(subset);
        pool.scores.push(score);
        pool.attempts.push(attempts);
        pool.violations.push(!accepted);
    }
    Ok(pool)
}
