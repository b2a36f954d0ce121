use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::subsets::{select_pool, SubsetPool};
use super::{running_mean, truncation_met, values_stable, CdashConfig};
use crate::dataset::{ChunkPartition, Dataset};
use crate::error::{invalid, Error, Result};
use crate::model::{
    gradient_sum, init_params, score, sgd_step, Architecture, Checkpoint, Gradient, MetricSpec,
};
use crate::seeds::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub pool: SubsetPool,
    /// Pool indices of the subsets used for each chunk.
    pub used: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineTrace {
    pub iterations: Vec<IterationTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationResult {
    /// Running mean of the per-iteration values, one per chunk.
    pub values: Vec<f64>,
    pub iterations_run: usize,
    /// Raw per-iteration values.
    pub history: Vec<Vec<f64>>,
    /// True when the stability rule (not the iteration cap) ended the run.
    pub converged: bool,
    pub wall_time: f64,
    /// Every pool built and the subsets used; empty unless requested.
    #[serde(default)]
    pub trace: EngineTrace,
    /// Checkpoint after the last chunk of the final iteration.
    #[serde(skip)]
    pub final_checkpoint: Option<Checkpoint>,
}

/// Summed gradients of each listed chunk at `w`. Entries for chunks not
/// listed are `None`.
pub(crate) fn chunk_gradients(
    w: &Checkpoint,
    train: &Dataset,
    partition: &ChunkPartition,
    chunks: &[usize],
) -> Result<Vec<Option<Gradient>>> {
    let computed: Vec<(usize, Gradient)> = chunks
        .par_iter()
        .map(|&j| {
            let (x, y) = train.rows(partition.chunk(j));
            gradient_sum(w, x, y).map(|g| (j, g))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![None; partition.len()];
    for (j, g) in computed {
        out[j] = Some(g);
    }
    Ok(out)
}

/// `w - eta * sum_{x in chunks} grad L(w, x)` from precomputed chunk sums.
pub(crate) fn step_with_chunks(
    w: &Checkpoint,
    grads: &[Option<Gradient>],
    chunks: &[usize],
    eta: f64,
) -> Checkpoint {
    let mut total = Gradient::zeros(&w.arch);
    for &j in chunks {
        total.add_assign(grads[j].as_ref().expect("gradient computed for chunk"));
    }
    w.apply(&total, eta)
}

/// Value of chunk `j` against checkpoint `w` for one pool: the weighted sum,
/// over the pooled subsets that exclude `j`, of the score gained by adding
/// `j`'s step on top of the subset's step.
#[allow(clippy::too_many_arguments)]
pub fn chunk_value(
    w: &Checkpoint,
    train: &Dataset,
    validation: &Dataset,
    partition: &ChunkPartition,
    pool: &SubsetPool,
    j: usize,
    metric: MetricSpec,
    cfg: &CdashConfig,
) -> Result<f64> {
    let members = pool.excluding(j);
    let mut union: Vec<usize> = members
        .iter()
        .flat_map(|&i| pool.subsets[i].iter().copied())
        .collect();
    union.sort_unstable();
    union.dedup();
    let grads = chunk_gradients(w, train, partition, &union)?;
    marginal_sum(
        w, &grads, train, validation, partition, pool, &members, j, metric, cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn marginal_sum(
    w: &Checkpoint,
    grads: &[Option<Gradient>],
    train: &Dataset,
    validation: &Dataset,
    partition: &ChunkPartition,
    pool: &SubsetPool,
    members: &[usize],
    j: usize,
    metric: MetricSpec,
    cfg: &CdashConfig,
) -> Result<f64> {
    let n = train.n_rows() as f64;
    let (vx, vy) = validation.view();
    let (jx, jy) = train.rows(partition.chunk(j));
    let marginals: Vec<f64> = members
        .par_iter()
        .map(|&i| {
            let subset = &pool.subsets[i];
            let with_z = step_with_chunks(w, grads, subset, cfg.eta);
            let m_z = score(&with_z, vx, vy, metric)?;
            let with_zj = sgd_step(&with_z, jx, jy, cfg.eta)?;
            let m_zj = score(&with_zj, vx, vy, metric)?;
            let rows: usize = subset.iter().map(|&ch| partition.chunk_len(ch)).sum();
            let weight = cfg.constant / (n * rows as f64);
            Ok(weight * (m_zj - m_z))
        })
        .collect::<Result<_>>()?;
    Ok(marginals.iter().sum())
}

/// Value every chunk of `partition` (rows of `train`) with the chunked
/// Shapley approximation, scoring on `validation`.
pub fn cdash_value(
    train: &Dataset,
    validation: &Dataset,
    partition: &ChunkPartition,
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &CdashConfig,
) -> Result<ValuationResult> {
    let started = Instant::now();
    let c = partition.len();
    cfg.validate(c)?;
    if partition.end() > train.n_rows() {
        return Err(invalid("partition extends past the training rows"));
    }
    if validation.n_rows() == 0 {
        return Err(invalid("empty validation set"));
    }

    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut trace = EngineTrace::default();
    let mut final_checkpoint = None;
    while !truncation_met(&history, cfg.eps, cfg.max_iters) {
        let iter_seed = seeds::derive_path(cfg.seed, &[tag::ITERATION, history.len() as u64]);
        let pool = select_pool(partition, train, validation, arch, metric, cfg, iter_seed)?;
        let mut w = init_params(arch, seeds::derive(iter_seed, tag::INIT))?;
        let mut values = vec![0.0; c];
        let mut used = Vec::with_capacity(if cfg.record_trace { c } else { 0 });

        for (j, value) in values.iter_mut().enumerate() {
            let members = pool.excluding(j);
            let mut union: Vec<usize> = members
                .iter()
                .flat_map(|&i| pool.subsets[i].iter().copied())
                .collect();
            union.sort_unstable();
            union.dedup();
            let grads = chunk_gradients(&w, train, partition, &union)?;
            *value = marginal_sum(
                &w, &grads, train, validation, partition, &pool, &members, j, metric, cfg,
            )?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("value of chunk {j}")));
            }
            w = step_with_chunks(&w, &grads, &union, cfg.eta);
            if cfg.record_trace {
                used.push(members);
            }
        }
        if cfg.record_trace {
            trace.iterations.push(IterationTrace { pool, used });
        }
        final_checkpoint = Some(w);
        history.push(values);
    }

    let t = history.len();
    Ok(ValuationResult {
        values: running_mean(&history, t),
        iterations_run: t,
        converged: values_stable(&history, cfg.eps),
        history,
        wall_time: started.elapsed().as_secs_f64(),
        trace,
        final_checkpoint,
    })
}
