//! Measurement harness: removal curves, local outlier factor scoring,
//! detection recall and speedup timing.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ChunkPartition, Dataset};
use crate::error::{invalid, Error, Result};
use crate::model::{evaluate_metric, train, Architecture, MetricSpec, TrainConfig};
use crate::seeds::{self, tag};
use crate::valuation::rank_chunks;

/// Default neighbourhood size for LOF.
pub const DEFAULT_LOF_NEIGHBORS: usize = 20;

/// Number of units removed at fraction `lambda` of `units`.
pub fn removal_count(lambda: f64, units: usize) -> usize {
    // the small slack keeps e.g. 0.29 * 100 from flooring to 28
    ((lambda * units as f64) + 1e-9).floor() as usize
}

/// Chunks removed at fraction `lambda`: the lowest-valued ones.
pub fn bottom_chunks(values: &[f64], lambda: f64) -> Vec<usize> {
    let mut order = rank_chunks(values);
    order.truncate(removal_count(lambda, values.len()));
    order
}

/// Rows kept after dropping the bottom-`lambda` chunks, in row order.
pub fn retained_rows(
    partition: &ChunkPartition,
    values: &[f64],
    lambda: f64,
) -> Result<Vec<usize>> {
    if values.len() != partition.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} units",
            values.len(),
            partition.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("removal fraction {lambda} outside [0, 1]")));
    }
    let removed = bottom_chunks(values, lambda);
    let kept: Vec<usize> = (0..partition.len())
        .filter(|j| !removed.contains(j))
        .collect();
    let rows = partition.rows_of(&kept);
    if rows.is_empty() {
        return Err(invalid(format!(
            "removal fraction {lambda} leaves no training rows"
        )));
    }
    Ok(rows)
}

/// Uniform random values, the reference point for removal and recall.
pub fn random_values(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    (0..len).map(|_| rng.random::<f64>()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalCurve {
    pub lambdas: Vec<f64>,
    /// Mean oriented validation score per fraction.
    pub mean_scores: Vec<f64>,
    /// Sample standard deviation across repeats (0 for one repeat).
    pub std_scores: Vec<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalConfig {
    pub train: TrainConfig,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            train: TrainConfig::default(),
            repeats: 5,
            seed: 0,
        }
    }
}

/// Seed of the `r`-th retraining repeat. Every removal fraction reuses the
/// same repeat seeds.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    seeds::derive_path(seed, &[tag::REPEAT, r as u64])
}

/// Retrain after removing the lowest-valued units and score on `validation`.
///
/// `partition` gives the units that `values` refer to; pass
/// [`ChunkPartition::singletons`] for per-row values.
#[allow(clippy::too_many_arguments)]
pub fn removal_curve(
    train_ds: &Dataset,
    validation: &Dataset,
    partition: &ChunkPartition,
    values: &[f64],
    lambdas: &[f64],
    arch: &Architecture,
    metric: MetricSpec,
    cfg: &RemovalConfig,
) -> Result<RemovalCurve> {
    if cfg.repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    let kept: Vec<Vec<usize>> = lambdas
        .iter()
        .map(|&l| retained_rows(partition, values, l))
        .collect::<Result<_>>()?;
    let mut mean_scores = Vec::with_capacity(lambdas.len());
    let mut std_scores = Vec::with_capacity(lambdas.len());
    for rows in kept {
        let subset = train_ds.select(&rows);
        let scores: Vec<f64> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                let w = train(&subset, arch, &cfg.train, repeat_seed(cfg.seed, r))?;
                evaluate_metric(&w, validation, metric)
            })
            .collect::<Result<_>>()?;
        let (m, s) = mean_std(&scores);
        mean_scores.push(m);
        std_scores.push(s);
    }
    Ok(RemovalCurve {
        lambdas: lambdas.to_vec(),
        mean_scores,
        std_scores,
        repeats: cfg.repeats,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Local outlier factor of every row, exact, with Euclidean distance.
///
/// The neighbourhood of a point holds every other point within its
/// k-distance, so ties can make it larger than `k`. A point whose
/// neighbours all coincide with it (local reachability density infinite)
/// gets a LOF of 1.
pub fn lof_scores(x: ArrayView2<'_, f64>, k: usize) -> Result<Vec<f64>> {
    let n = x.nrows();
    if k == 0 || n <= k {
        return Err(invalid(format!(
            "LOF needs n > k >= 1, got n = {n}, k = {k}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LOF input".into()));
    }
    // (neighbour ids, their distances, k-distance) per point
    let hoods: Vec<(Vec<usize>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dist = row
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    (dist, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let kdist = d[k - 1].0;
            let hood: Vec<(f64, usize)> = d
                .into_iter()
                .take_while(|&(dist, _)| dist <= kdist)
                .collect();
            (
                hood.iter().map(|h| h.1).collect(),
                hood.iter().map(|h| h.0).collect(),
                kdist,
            )
        })
        .collect();
    let lrd: Vec<f64> = hoods
        .iter()
        .map(|(ids, dists, _)| {
            let reach: f64 = ids
                .iter()
                .zip(dists)
                .map(|(&o, &d)| d.max(hoods[o].2))
                .sum();
            if reach == 0.0 {
                f64::INFINITY
            } else {
                ids.len() as f64 / reach
            }
        })
        .collect();
    Ok(hoods
        .iter()
        .enumerate()
        .map(|(i, (ids, _, _))| {
            if lrd[i].is_infinite() {
                return 1.0;
            }
            ids.iter().map(|&o| lrd[o]).sum::<f64>() / (ids.len() as f64 * lrd[i])
        })
        .collect())
}

/// Mean |LOF| of the feature rows kept after removing the bottom-`lambda`
/// units by value. Lower is better.
pub fn lof_average_after_removal(
    ds: &Dataset,
    partition: &ChunkPartition,
    values: &[f64],
    lambda: f64,
    k: usize,
) -> Result<f64> {
    let rows = retained_rows(partition, values, lambda)?;
    let kept = ds.select(&rows);
    let lof = lof_scores(kept.features.view(), k)?;
    Ok(lof.iter().map(|v| v.abs()).sum::<f64>() / lof.len() as f64)
}

/// Fraction of `corrupted` rows that fall in the bottom-`lambda` chunks.
pub fn detection_recall(
    values: &[f64],
    corrupted: &[usize],
    partition: &ChunkPartition,
    lambda: f64,
) -> Result<f64> {
    if corrupted.is_empty() {
        return Err(invalid("empty corruption mask"));
    }
    if values.len() != partition.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {} chunks",
            values.len(),
            partition.len()
        )));
    }
    let removed = bottom_chunks(values, lambda);
    let hits = corrupted
        .iter()
        .filter(|&&r| partition.chunk_of(r).is_some_and(|j| removed.contains(&j)))
        .count();
    Ok(hits as f64 / corrupted.len() as f64)
}

/// Where a timing was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineFingerprint {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub cpu_model: Option<String>,
    pub threads: usize,
}

impl MachineFingerprint {
    pub fn current() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        });
        MachineFingerprint {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    /// Seconds taken by the baseline (T1).
    pub t_baseline: f64,
    /// Seconds taken by the candidate (T2).
    pub t_candidate: f64,
    /// `t_baseline / t_candidate`.
    pub speedup: f64,
    pub machine: MachineFingerprint,
}

impl SpeedupReport {
    pub fn from_times(t_baseline: f64, t_candidate: f64) -> Result<Self> {
        if !(t_baseline > 0.0) || !(t_candidate > 0.0) {
            return Err(invalid("timings must be positive"));
        }
        Ok(SpeedupReport {
            t_baseline,
            t_candidate,
            speedup: t_baseline / t_candidate,
            machine: MachineFingerprint::current(),
        })
    }
}

/// Seconds taken by one call of `run`.
pub fn time_run<F: FnMut() -> Result<()>>(mut run: F) -> Result<f64> {
    let started = Instant::now();
    run()?;
    Ok(started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
}

/// Time `baseline` then `candidate`, one after the other. With `warm_up`,
/// each runner is called once untimed first.
pub fn measure_speedup<A, B>(
    mut baseline: A,
    mut candidate: B,
    warm_up: bool,
) -> Result<SpeedupReport>
where
    A: FnMut() -> Result<()>,
    B: FnMut() -> Result<()>,
{
    if warm_up {
        baseline()?;
        candidate()?;
    }
    let t1 = time_run(&mut baseline)?;
    let t2 = time_run(&mut candidate)?;
    SpeedupReport::from_times(t1, t2)
}

/// `lambda,mean,std` rows.
pub fn write_curve_csv<W: Write>(curve: &RemovalCurve, mut out: W) -> Result<()> {
    let io = |e| Error::Io {
        path: "<curve>".into(),
        source: e,
    };
    writeln!(out, "lambda,mean,std").map_err(io)?;
    for ((l, m), s) in curve
        .lambdas
        .iter()
        .zip(&curve.mean_scores)
        .zip(&curve.std_scores)
    {
        writeln!(out, "{l},{m},{s}").map_err(io)?;
    }
    Ok(())
}

/// Serialize any report as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
