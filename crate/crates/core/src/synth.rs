//! Synthetic datasets used by the examples, the self-test and the test suites.

use chrono::{NaiveDate, TimeDelta};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Table, Task};
use crate::error::Result;
use crate::seeds;

fn std_normal() -> Normal<f64> {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two Gaussian classes with unit variance whose means are `separation`
/// apart along a random direction. Labels are balanced and interleaved.
pub fn two_class_blobs(n: usize, dims: usize, separation: f64, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng(seed);
    let normal = std_normal();
    let mut dir = Array1::from_shape_simple_fn(dims, || normal.sample(&mut rng));
    dir /= dir.dot(&dir).sqrt();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut x = Array2::from_shape_simple_fn((n, dims), || normal.sample(&mut rng));
    for (mut row, &y) in x.rows_mut().into_iter().zip(&labels) {
        let sign = if y == 1 { 0.5 } else { -0.5 };
        row.scaled_add(sign * separation, &dir);
    }
    Dataset::classification(x, &labels, 2)
}

/// Two classes split by a curved boundary in the first two features
/// (`x1 > sin(2 x0)`), with `dims - 2` extra uniform nuisance features.
pub fn two_class_moons(n: usize, dims: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng(seed);
    let x: Array2<f64> =
        Array2::from_shape_simple_fn((n, dims.max(2)), || rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = x
        .rows()
        .into_iter()
        .map(|r| usize::from(r[1] > (2.0 * r[0]).sin()))
        .collect();
    Dataset::classification(x, &labels, 2)
}

/// Hourly regression series over `days` days starting 2024-01-01.
///
/// Features: a daily cycle (sin, cos of the hour angle), two smooth drivers
/// and one noise feature. The target is a fixed nonlinear function of the
/// features plus Gaussian noise of std `noise`.
pub fn hourly_series(days: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng(seed);
    let normal = std_normal();
    let n = days * 24;
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let mut x = Array2::zeros((n, 5));
    let mut y = Vec::with_capacity(n);
    let mut drift = 0.0;
    for i in 0..n {
        let angle = 2.0 * std::f64::consts::PI * (i % 24) as f64 / 24.0;
        drift = 0.95 * drift + 0.3 * normal.sample(&mut rng);
        let load = normal.sample(&mut rng);
        let nuisance = normal.sample(&mut rng);
        let row = [angle.sin(), angle.cos(), drift, load, nuisance];
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
        y.push(
            2.0 * row[0]
                + row[1]
                + 1.5 * row[2]
                + row[3]
                + 0.5 * row[3] * row[3]
                + noise * normal.sample(&mut rng),
        );
    }
    let ts = (0..n).map(|i| start + TimeDelta::hours(i as i64)).collect();
    Dataset::regression(x, y)?.with_timestamps(ts)
}

/// Replace the features of `rows` with isolated points far from the data:
/// each row is placed at `distance` data-scales from the feature means in an
/// independent random direction.
pub fn plant_far_outliers(ds: &Dataset, rows: &[usize], distance: f64, seed: u64) -> Dataset {
    let mut rng = seeds::rng(seed);
    let normal = std_normal();
    let f = ds.n_features();
    let means = ds.features.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let stds = ds.features.std_axis(ndarray::Axis(0), 0.0);
    let mut out = ds.clone();
    for &r in rows {
        let mut dir = Array1::from_shape_simple_fn(f, || normal.sample(&mut rng));
        dir /= dir.dot(&dir).sqrt();
        let radius = distance * rng.random_range(1.0..2.0);
        for j in 0..f {
            out.features[[r, j]] = means[j] + radius * stds[j].max(1e-12) * dir[j];
        }
    }
    out
}

/// Render a synthetic dataset as a CSV table: features `x0..`, an optional
/// `timestamp` column and the `target` column (class labels as written in
/// `class_labels`, or `y` for regression).
pub fn to_table(ds: &Dataset) -> Table {
    let mut headers: Vec<String> = (0..ds.n_features()).map(|j| format!("x{j}")).collect();
    if ds.timestamps.is_some() {
        headers.push("timestamp".into());
    }
    headers.push("target".into());
    let rows = (0..ds.n_rows())
        .map(|i| {
            let mut row: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(ts) = &ds.timestamps {
                row.push(ts[i].format("%Y-%m-%d %H:%M:%S").to_string());
            }
            row.push(match ds.task {
                Task::Classification => ds.class_labels[ds.label(i)].clone(),
                Task::Regression => ds.targets[i].to_string(),
            });
            row
        })
        .collect();
    Table {
        headers,
        rows,
        delimiter: ',',
    }
}
