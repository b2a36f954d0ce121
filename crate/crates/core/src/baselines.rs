//! Reference valuation methods: exact Shapley by enumeration, truncated Monte
//! Carlo (TMC) Shapley, gradient Shapley, and chunk averaging of per-tuple
//! values.
//!
//! Games are expressed as a [`PlayerSet`]: a list of players (each a group of
//! row indices) and a utility over coalitions of player ids. Surrogate
//! utilities with no training noise are provided for oracle checks.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChunkPartition, Dataset, Task};
use crate::error::{invalid, Error, Result};
use crate::model::{
    init_params, score, sgd_step, train_from, Architecture, Checkpoint, MetricSpec, TrainConfig,
};
use crate::seeds::{self, tag};
use crate::valuation::{running_mean, truncation_met, values_stable};

/// Largest game [`exact_shapley`] will enumerate.
pub const MAX_EXACT_PLAYERS: usize = 12;

type Utility<'a> = dyn Fn(&[usize]) -> Result<f64> + Sync + 'a;

/// Players of a cooperative game and the utility of each coalition.
///
/// The utility receives player ids in ascending order and must be
/// deterministic.
pub struct PlayerSet<'a> {
    pub units: Vec<Vec<usize>>,
    utility: Box<Utility<'a>>,
}

impl<'a> PlayerSet<'a> {
    pub fn new<F>(units: Vec<Vec<usize>>, utility: F) -> Self
    where
        F: Fn(&[usize]) -> Result<f64> + Sync + 'a,
    {
        PlayerSet {
            units,
            utility: Box::new(utility),
        }
    }

    /// A game on `players` abstract players, each owning the row of the same id.
    pub fn game<F>(players: usize, utility: F) -> Self
    where
        F: Fn(&[usize]) -> Result<f64> + Sync + 'a,
    {
        Self::new((0..players).map(|i| vec![i]).collect(), utility)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Utility of a coalition given in any order.
    pub fn utility(&self, coalition: &[usize]) -> Result<f64> {
        let mut ids = coalition.to_vec();
        ids.sort_unstable();
        let v = (self.utility)(&ids)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("utility of coalition {ids:?}")));
        }
        Ok(v)
    }
}

/// One player per row of `ds`.
pub fn tuple_units(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

/// One player per chunk.
pub fn chunk_units(partition: &ChunkPartition) -> Vec<Vec<usize>> {
    partition
        .ranges()
        .iter()
        .map(|r| r.clone().collect())
        .collect()
}

/// Accuracy on `eval` of a 1-nearest-neighbour classifier over the
/// coalition's rows of `train`. Distance ties go to the lower row index; the
/// empty coalition scores 0.
pub fn nearest_neighbor_game<'a>(
    train: &'a Dataset,
    eval: &'a Dataset,
    units: Vec<Vec<usize>>,
) -> Result<PlayerSet<'a>> {
    if train.task != Task::Classification || eval.task != Task::Classification {
        return Err(Error::TaskMismatch(
            "nearest-neighbour utility needs classification data".into(),
        ));
    }
    check_units(&units, train.n_rows())?;
    let mut ps = PlayerSet::new(units, |_| Ok(0.0));
    let units = ps.units.clone();
    ps.utility = Box::new(move |coalition: &[usize]| {
        let mut rows: Vec<usize> = coalition
            .iter()
            .flat_map(|&p| units[p].iter().copied())
            .collect();
        if rows.is_empty() {
            return Ok(0.0);
        }
        rows.sort_unstable();
        let mut correct = 0usize;
        for (q, &target) in eval.features.rows().into_iter().zip(&eval.targets) {
            let mut best = (f64::INFINITY, usize::MAX);
            for &r in &rows {
                let d: f64 = train
                    .features
                    .row(r)
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, r);
                }
            }
            if train.targets[best.1] == target {
                correct += 1;
            }
        }
        Ok(correct as f64 / eval.n_rows() as f64)
    });
    Ok(ps)
}

/// Negated RMSE on `eval` of an ordinary least-squares fit (with intercept)
/// to the coalition's rows of `train`. Underdetermined fits take the
/// minimum-norm solution; the empty coalition predicts 0.
pub fn least_squares_game<'a>(
    train: &'a Dataset,
    eval: &'a Dataset,
    units: Vec<Vec<usize>>,
) -> Result<PlayerSet<'a>> {
    if train.task != Task::Regression || eval.task != Task::Regression {
        return Err(Error::TaskMismatch(
            "least-squares utility needs regression data".into(),
        ));
    }
    check_units(&units, train.n_rows())?;
    let f = train.n_features();
    let mut ps = PlayerSet::new(units, |_| Ok(0.0));
    let units = ps.units.clone();
    ps.utility = Box::new(move |coalition: &[usize]| {
        let rows: Vec<usize> = coalition
            .iter()
            .flat_map(|&p| units[p].iter().copied())
            .collect();
        let coef = if rows.is_empty() {
            DVector::zeros(f + 1)
        } else {
            let a = DMatrix::from_fn(rows.len(), f + 1, |i, j| {
                if j == f {
                    1.0
                } else {
                    train.features[[rows[i], j]]
                }
            });
            let b = DVector::from_fn(rows.len(), |i, _| train.targets[rows[i]]);
            a.svd(true, true)
                .solve(&b, 1e-12)
                .map_err(|e| invalid(format!("least-squares solve failed: {e}")))?
        };
        let mse = eval
            .features
            .rows()
            .into_iter()
            .zip(&eval.targets)
            .map(|(x, t)| {
                let p = x.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>() + coef[f];
                (p - t) * (p - t)
            })
            .sum::<f64>()
            / eval.n_rows() as f64;
        Ok(-mse.sqrt())
    });
    Ok(ps)
}

/// Oriented validation score of a model retrained from a fixed
/// initialisation on the coalition's rows, using full-batch SGD for
/// `epochs` epochs. The empty coalition scores the untrained model.
pub fn mlp_game<'a>(
    train: &'a Dataset,
    validation: &'a Dataset,
    arch: &Architecture,
    metric: MetricSpec,
    epochs: usize,
    eta: f64,
    seed: u64,
    units: Vec<Vec<usize>>,
) -> Result<PlayerSet<'a>> {
    check_units(&units, train.n_rows())?;
    let w0 = init_params(arch, seeds::derive(seed, tag::INIT))?;
    let mut ps = PlayerSet::new(units, |_| Ok(0.0));
    let units = ps.units.clone();
    ps.utility = Box::new(move |coalition: &[usize]| {
        let rows: Vec<usize> = coalition
            .iter()
            .flat_map(|&p| units[p].iter().copied())
            .collect();
        let w = if rows.is_empty() {
            w0.clone()
        } else {
            let cfg = TrainConfig {
                epochs,
                eta,
                batch_size: rows.len(),
            };
            train_from(w0.clone(), &train.select(&rows), &cfg, seed)?
        };
        let (vx, vy) = validation.view();
        score(&w, vx, vy, metric)
    });
    Ok(ps)
}

fn check_units(units: &[Vec<usize>], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for unit in units {
        for &r in unit {
            if r >= n {
                return Err(invalid(format!("player row {r} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(invalid(format!("row {r} belongs to more than one player")));
            }
        }
    }
    Ok(())
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Exact Shapley values by enumerating all `2^p` coalitions.
pub fn exact_shapley(ps: &PlayerSet<'_>) -> Result<Vec<f64>> {
    let p = ps.len();
    if p > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            players: p,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let utilities: Vec<f64> = (0..1usize << p)
        .into_par_iter()
        .map(|mask| {
            let coalition: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
            ps.utility(&coalition)
        })
        .collect::<Result<_>>()?;
    let ln_p = ln_factorial(p);
    let weight: Vec<f64> = (0..p)
        .map(|s| (ln_factorial(s) + ln_factorial(p - s - 1) - ln_p).exp())
        .collect();
    let mut values = vec![0.0; p];
    for (i, value) in values.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..1usize << p).filter(|m| m & bit == 0) {
            *value +=
                weight[mask.count_ones() as usize] * (utilities[mask | bit] - utilities[mask]);
        }
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleValuationResult {
    /// Mean marginal contribution per player.
    pub values: Vec<f64>,
    pub iterations_run: usize,
    pub history: Vec<Vec<f64>>,
    pub converged: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmcConfig {
    /// Stop a permutation walk once the prefix score is this close to the
    /// full-data score. `None` never truncates.
    pub tolerance: Option<f64>,
    pub max_permutations: usize,
    /// Full-batch epochs per prefix refit (MLP utility only).
    pub epochs_per_fit: usize,
    pub eta: f64,
    /// Stability tolerance for the running means; `None` always runs
    /// `max_permutations`.
    pub eps: Option<f64>,
    pub seed: u64,
    /// Upper bound on `players * max_permutations`.
    pub budget: u64,
}

impl Default for TmcConfig {
    fn default() -> Self {
        TmcConfig {
            tolerance: Some(0.01),
            max_permutations: 50,
            epochs_per_fit: 1,
            eta: 0.001,
            eps: Some(1e-3),
            seed: 0,
            budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GShapConfig {
    pub eta: f64,
    pub max_permutations: usize,
    /// As [`TmcConfig::eps`].
    pub eps: Option<f64>,
    pub seed: u64,
    pub budget: u64,
}

impl Default for GShapConfig {
    fn default() -> Self {
        GShapConfig {
            eta: 0.001,
            max_permutations: 50,
            eps: Some(1e-3),
            seed: 0,
            budget: 10_000_000,
        }
    }
}

fn check_budget(players: usize, permutations: usize, budget: u64) -> Result<()> {
    let required = players as u64 * permutations as u64;
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    if permutations == 0 {
        return Err(invalid("max_permutations must be positive"));
    }
    Ok(())
}

fn permutation(p: usize, seed: u64, t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut seeds::rng(seeds::derive_path(
        seed,
        &[tag::PERMUTATION, t as u64],
    )));
    order
}

fn stop(history: &[Vec<f64>], eps: Option<f64>, max: usize) -> bool {
    match eps {
        Some(eps) => truncation_met(history, eps, max),
        None => history.len() >= max,
    }
}

fn finish(history: Vec<Vec<f64>>, eps: Option<f64>, started: Instant) -> TupleValuationResult {
    let t = history.len();
    TupleValuationResult {
        values: running_mean(&history, t),
        iterations_run: t,
        converged: eps.is_some_and(|eps| values_stable(&history, eps)),
        history,
        wall_time: started.elapsed().as_secs_f64(),
    }
}

/// Truncated Monte Carlo Shapley over an arbitrary game.
///
/// Each permutation walks the players in shuffled order and records the
/// utility gain of adding each one to the prefix. Once the prefix utility is
/// within `tolerance` of the grand coalition's, the remaining players of that
/// walk get a marginal of zero.
pub fn tmc_players(ps: &PlayerSet<'_>, cfg: &TmcConfig) -> Result<TupleValuationResult> {
    let started = Instant::now();
    let p = ps.len();
    check_budget(p, cfg.max_permutations, cfg.budget)?;
    if p == 0 {
        return Err(invalid("game has no players"));
    }
    let all: Vec<usize> = (0..p).collect();
    let full = ps.utility(&all)?;
    let empty = ps.utility(&[])?;
    let mut history: Vec<Vec<f64>> = Vec::new();
    while !stop(&history, cfg.eps, cfg.max_permutations) {
        let order = permutation(p, cfg.seed, history.len());
        let mut marginals = vec![0.0; p];
        let mut prev = empty;
        for (pos, &player) in order.iter().enumerate() {
            if cfg.tolerance.is_some_and(|tol| (full - prev).abs() <= tol) {
                break;
            }
            let cur = ps.utility(&order[..=pos])?;
            marginals[player] = cur - prev;
            prev = cur;
        }
        history.push(marginals);
    }
    Ok(finish(history, cfg.eps, started))
}

/// TMC Shapley for every row of `train` with the MLP as learner: each prefix
/// is refit from the same initialisation (see [`mlp_game`]).
pub fn tmc_shapley(
    train: &Dataset,
    validation: &Dataset,
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &TmcConfig,
) -> Result<TupleValuationResult> {
    check_budget(train.n_rows(), cfg.max_permutations, cfg.budget)?;
    let ps = mlp_game(
        train,
        validation,
        arch,
        metric,
        cfg.epochs_per_fit,
        cfg.eta,
        cfg.seed,
        tuple_units(train.n_rows()),
    )?;
    tmc_players(&ps, cfg)
}

/// Gradient Shapley: each permutation starts a fresh model and applies one
/// SGD step per row in permuted order; a row's marginal is the change in
/// validation score caused by its step.
pub fn g_shapley(
    train: &Dataset,
    validation: &Dataset,
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &GShapConfig,
) -> Result<TupleValuationResult> {
    let started = Instant::now();
    let n = train.n_rows();
    check_budget(n, cfg.max_permutations, cfg.budget)?;
    if n == 0 {
        return Err(invalid("empty training set"));
    }
    let (vx, vy) = validation.view();
    let mut history: Vec<Vec<f64>> = Vec::new();
    while !stop(&history, cfg.eps, cfg.max_permutations) {
        let t = history.len();
        let order = permutation(n, cfg.seed, t);
        let mut w: Checkpoint =
            init_params(arch, seeds::derive_path(cfg.seed, &[tag::INIT, t as u64]))?;
        let mut prev = score(&w, vx, vy, metric)?;
        let mut marginals = vec![0.0; n];
        for &i in &order {
            let (x, y) = train.rows(i..i + 1);
            w = sgd_step(&w, x, y, cfg.eta)?;
            let cur = score(&w, vx, vy, metric)?;
            marginals[i] = cur - prev;
            prev = cur;
        }
        history.push(marginals);
    }
    Ok(finish(history, cfg.eps, started))
}

/// Mean of the per-row values inside each chunk.
pub fn chunk_average(tuple_values: &[f64], partition: &ChunkPartition) -> Result<Vec<f64>> {
    if partition.end() > tuple_values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tuple values for a partition over {} rows",
            tuple_values.len(),
            partition.end()
        )));
    }
    Ok(partition
        .ranges()
        .iter()
        .map(|r| tuple_values[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect())
}
