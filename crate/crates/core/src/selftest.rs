//! Invariant checks on built-in synthetic data, run by `cdash selftest`.

use rand::Rng as _;

use crate::baselines::{chunk_average, exact_shapley, PlayerSet};
use crate::corruption::{changed_rows, flip_labels, inject_gaussian_noise};
use crate::dataset::{partition_fixed, split_train_validation, ChunkPartition};
use crate::error::Result;
use crate::evaluation::lof_scores;
use crate::model::{gradient_check, init_params, Architecture, MetricSpec};
use crate::seeds;
use crate::synth;
use crate::valuation::{cdash_value, rank_chunks, CdashConfig};

/// Outcome of one invariant check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Run every check. Takes a few seconds.
pub fn run_checks() -> Vec<Check> {
    let engine = engine_invariants().map_err(|e| e.to_string());
    let part = |pick: fn(&Triple) -> &(bool, String)| match &engine {
        Ok(t) => Ok(pick(t).clone()),
        Err(e) => Err(crate::Error::InvalidArgument(e.clone())),
    };
    vec![
        check("glove game", glove()),
        check("shapley axioms", axioms()),
        check("gradient vs finite differences", gradients()),
        check("subset pool cap and gate", part(|t| &t.0)),
        check("scale constant", part(|t| &t.1)),
        check("determinism", part(|t| &t.2)),
        check("iteration cap halts", halting()),
        check("chunk average affine", affine()),
        check("lof flags far point", lof_outlier()),
        check("corruption masks", masks()),
    ]
}

fn glove() -> Result<(bool, String)> {
    let ps = PlayerSet::game(3, |s| {
        Ok(f64::from(u8::from(s.contains(&0) && s.len() > 1)))
    });
    let v = exact_shapley(&ps)?;
    let want = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
    let ok = v.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
    Ok((ok, format!("{v:?}")))
}

fn axioms() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = seeds::rng(seed);
        let p = 2 + (seed as usize % 6);
        // player 0 is null: its presence never changes the utility
        let mut table: Vec<f64> = (0..1usize << p)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        for mask in (0..1usize << p).filter(|m| m & 1 == 1) {
            table[mask] = table[mask & !1];
        }
        let full = table[(1 << p) - 1];
        let empty = table[0];
        let ps = PlayerSet::game(p, move |s| {
            Ok(table[s.iter().map(|&i| 1usize << i).sum::<usize>()])
        });
        let v = exact_shapley(&ps)?;
        worst = worst
            .max((v.iter().sum::<f64>() - (full - empty)).abs())
            .max(v[0].abs());
    }
    Ok((worst < 1e-9, format!("max violation {worst:.2e}")))
}

fn gradients() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for seed in 0..4u64 {
        let ds = if seed % 2 == 0 {
            synth::two_class_blobs(12, 3, 2.0, seed)?
        } else {
            synth::hourly_series(1, 0.1, seed)?
        };
        let arch = Architecture::for_dataset(&ds, [5, 4])?;
        let w = init_params(&arch, seed)?;
        let (x, y) = ds.view();
        worst = worst.max(gradient_check(&w, x, y, 1e-5)?);
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

type Triple = ((bool, String), (bool, String), (bool, String));

fn engine_invariants() -> Result<Triple> {
    let ds = synth::two_class_blobs(400, 4, 3.0, 11)?;
    let split = split_train_validation(&ds, 0.25, 11)?;
    let part = partition_fixed(&split.train, 30)?;
    let arch = Architecture::for_dataset(&split.train, [16, 8])?;
    let cfg = CdashConfig {
        subset_count: 12,
        max_iters: 3,
        seed: 5,
        record_trace: true,
        ..CdashConfig::default()
    };
    let m = MetricSpec::ACCURACY;
    let a = cdash_value(&split.train, &split.validation, &part, &arch, m, &cfg)?;
    let pools_ok =
        a.trace.iterations.iter().all(|it| {
            it.pool.cap_holds() && (it.pool.any_violation() || it.pool.threshold_holds(m))
        });
    let doubled = CdashConfig {
        constant: 2.0,
        ..cfg.clone()
    };
    let b = cdash_value(&split.train, &split.validation, &part, &arch, m, &doubled)?;
    let scale_ok = a
        .values
        .iter()
        .zip(&b.values)
        .all(|(x, y)| (2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300))
        && rank_chunks(&a.values) == rank_chunks(&b.values);
    let again = cdash_value(&split.train, &split.validation, &part, &arch, m, &cfg)?;
    let same = again.values == a.values;
    Ok((
        (pools_ok, format!("{} pools", a.trace.iterations.len())),
        (scale_ok, "C = 1 vs C = 2".into()),
        (same, "two identical runs".into()),
    ))
}

fn halting() -> Result<(bool, String)> {
    let ds = synth::two_class_blobs(200, 3, 3.0, 2)?;
    let split = split_train_validation(&ds, 0.25, 2)?;
    let part = partition_fixed(&split.train, 15)?;
    let arch = Architecture::for_dataset(&split.train, [8, 4])?;
    let cfg = CdashConfig {
        subset_count: 8,
        eps: 0.0,
        max_iters: 4,
        ..CdashConfig::default()
    };
    let r = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )?;
    Ok((
        r.iterations_run == 4,
        format!("{} iterations", r.iterations_run),
    ))
}

fn affine() -> Result<(bool, String)> {
    let values: Vec<f64> = (0..37).map(|i| (i as f64 * 1.3).cos()).collect();
    let part = ChunkPartition::fixed(37, 6)?;
    let base = chunk_average(&values, &part)?;
    let shifted: Vec<f64> = values.iter().map(|v| 3.0 * v - 2.0).collect();
    let got = chunk_average(&shifted, &part)?;
    let ok = got
        .iter()
        .zip(&base)
        .all(|(g, b)| (g - (3.0 * b - 2.0)).abs() < 1e-12);
    Ok((ok, format!("{} chunks", base.len())))
}

fn lof_outlier() -> Result<(bool, String)> {
    let ds = synth::two_class_blobs(60, 2, 0.0, 4)?;
    let far = synth::plant_far_outliers(&ds, &[17], 50.0, 4);
    let lof = lof_scores(far.features.view(), 5)?;
    let top = rank_chunks(&lof).last().copied();
    Ok((top == Some(17), format!("max at row {top:?}")))
}

fn masks() -> Result<(bool, String)> {
    let ds = synth::two_class_blobs(300, 3, 2.0, 8)?;
    let (flipped, r1) = flip_labels(&ds, 0.2, 1)?;
    let (noisy, r2) = inject_gaussian_noise(&ds, 0.1, 1.0, 2)?;
    let ok = changed_rows(&ds, &flipped) == r1.affected_rows
        && changed_rows(&ds, &noisy) == r2.affected_rows
        && r1.affected_rows.len() == 60;
    Ok((
        ok,
        format!(
            "{} flipped, {} noised",
            r1.affected_rows.len(),
            r2.affected_rows.len()
        ),
    ))
}
