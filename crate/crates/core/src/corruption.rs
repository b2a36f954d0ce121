//! Controlled data-quality defects with ground-truth masks.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Task};
use crate::error::{invalid, Result};
use crate::seeds::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    LabelFlip,
    Missing,
}

/// What was corrupted and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub kind: CorruptionKind,
    /// Affected row indices, ascending.
    pub affected_rows: Vec<usize>,
    pub fraction: f64,
    pub sigma: Option<f64>,
    pub seed: u64,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("fraction {fraction} not in (0, 1]")))
    }
}

/// `round(fraction * n)` distinct rows, ascending.
fn choose_rows(n: usize, fraction: f64, rng: &mut seeds::Rng) -> Vec<usize> {
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rows = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}

/// Per-feature standard deviation over non-missing entries (population).
fn feature_std(ds: &Dataset, j: usize) -> f64 {
    let vals: Vec<f64> = ds
        .features
        .column(j)
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt()
}

/// Add zero-mean Gaussian noise with std `sigma * std(feature)` to the
/// numeric features of a uniformly chosen `fraction` of rows.
pub fn inject_gaussian_noise(
    ds: &Dataset,
    fraction: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, CorruptionReport)> {
    check_fraction(fraction)?;
    let mut rng = seeds::rng(seeds::derive(seed, tag::CORRUPT));
    let rows = choose_rows(ds.n_rows(), fraction, &mut rng);
    let out = noise_rows(ds, &rows, sigma, &mut rng)?;
    Ok((
        out,
        CorruptionReport {
            kind: CorruptionKind::GaussianNoise,
            affected_rows: rows,
            fraction,
            sigma: Some(sigma),
            seed,
        },
    ))
}

/// Gaussian noise on the given rows only.
pub fn noise_rows(
    ds: &Dataset,
    rows: &[usize],
    sigma: f64,
    rng: &mut seeds::Rng,
) -> Result<Dataset> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma {sigma} must be positive")));
    }
    let numeric = ds.numeric_features();
    if numeric.is_empty() {
        return Err(invalid("dataset has no numeric features to perturb"));
    }
    let stds: Vec<f64> = numeric.iter().map(|&j| feature_std(ds, j)).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = ds.clone();
    for &r in rows {
        for (&j, &sd) in numeric.iter().zip(&stds) {
            out.features[[r, j]] += sigma * sd * normal.sample(rng);
        }
    }
    Ok(out)
}

/// Replace the labels of a uniformly chosen `fraction` of rows with a
/// different class drawn uniformly.
pub fn flip_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, CorruptionReport)> {
    check_fraction(fraction)?;
    let mut rng = seeds::rng(seeds::derive(seed, tag::CORRUPT));
    let rows = choose_rows(ds.n_rows(), fraction, &mut rng);
    let out = flip_rows(ds, &rows, &mut rng)?;
    Ok((
        out,
        CorruptionReport {
            kind: CorruptionKind::LabelFlip,
            affected_rows: rows,
            fraction,
            sigma: None,
            seed,
        },
    ))
}

/// Flip the labels of exactly the given rows.
pub fn flip_rows(ds: &Dataset, rows: &[usize], rng: &mut seeds::Rng) -> Result<Dataset> {
    if ds.task != Task::Classification {
        return Err(invalid("label flipping needs a classification dataset"));
    }
    let k = ds.n_classes;
    let mut out = ds.clone();
    for &r in rows {
        let old = ds.label(r);
        // Uniform over the k - 1 other classes.
        let mut new = rng.random_range(0..k - 1);
        if new >= old {
            new += 1;
        }
        out.targets[r] = new as f64;
    }
    Ok(out)
}

/// Mark one uniformly chosen feature cell missing (`NaN`) in a uniformly
/// chosen `fraction` of rows.
pub fn inject_missing(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, CorruptionReport)> {
    check_fraction(fraction)?;
    let mut rng = seeds::rng(seeds::derive(seed, tag::CORRUPT));
    let rows = choose_rows(ds.n_rows(), fraction, &mut rng);
    let mut out = ds.clone();
    for &r in &rows {
        let j = rng.random_range(0..ds.n_features());
        out.features[[r, j]] = f64::NAN;
    }
    Ok((
        out,
        CorruptionReport {
            kind: CorruptionKind::Missing,
            affected_rows: rows,
            fraction,
            sigma: None,
            seed,
        },
    ))
}

/// Rows whose features or target differ between two datasets of equal shape.
pub fn changed_rows(before: &Dataset, after: &Dataset) -> Vec<usize> {
    (0..before.n_rows())
        .filter(|&r| {
            before.targets[r].to_bits() != after.targets[r].to_bits()
                || before
                    .features
                    .row(r)
                    .iter()
                    .zip(after.features.row(r))
                    .any(|(a, b)| a.to_bits() != b.to_bits())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureKind, MissingPolicy};
    use ndarray::Array2;

    fn numeric(n: usize, seed: u64) -> Dataset {
        let mut rng = seeds::rng(seed);
        let x = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-5.0..5.0));
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        Dataset::classification(x, &labels, 2).unwrap()
    }

    #[test]
    fn noise_counts_and_vanishing_limit() {
        let ds = numeric(1000, 1);
        let (noisy, rep) = inject_gaussian_noise(&ds, 0.2, 1.0, 3).unwrap();
        assert_eq!(rep.affected_rows.len(), 200);
        assert_eq!(changed_rows(&ds, &noisy), rep.affected_rows);
        assert_eq!(noisy.targets, ds.targets);
        let (tiny, _) = inject_gaussian_noise(&ds, 0.2, 1e-12, 3).unwrap();
        assert!(ds
            .features
            .iter()
            .zip(tiny.features.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn noise_std_matches_request() {
        let ds = numeric(2000, 2);
        let (noisy, rep) = inject_gaussian_noise(&ds, 0.5, 0.7, 5).unwrap();
        for j in 0..3 {
            let sd = feature_std(&ds, j);
            let deltas: Vec<f64> = rep
                .affected_rows
                .iter()
                .map(|&r| noisy.features[[r, j]] - ds.features[[r, j]])
                .collect();
            let m = deltas.iter().sum::<f64>() / deltas.len() as f64;
            let s = (deltas.iter().map(|d| (d - m) * (d - m)).sum::<f64>()
                / (deltas.len() - 1) as f64)
                .sqrt();
            assert!(
                (s / (0.7 * sd) - 1.0).abs() < 0.2,
                "feature {j}: {s} vs {}",
                0.7 * sd
            );
        }
    }

    #[test]
    fn noise_skips_indicator_columns() {
        let mut ds = numeric(50, 3);
        ds.feature_kinds[2] = FeatureKind::Indicator {
            source: 2,
            category: "a".into(),
        };
        let (noisy, _) = inject_gaussian_noise(&ds, 1.0, 1.0, 0).unwrap();
        assert_eq!(noisy.features.column(2), ds.features.column(2));
        ds.feature_kinds = vec![
            FeatureKind::Indicator {
                source: 0,
                category: "a".into()
            };
            3
        ];
        assert!(inject_gaussian_noise(&ds, 0.5, 1.0, 0).is_err());
    }

    #[test]
    fn binary_flip_is_an_involution() {
        let ds = numeric(100, 4);
        let (flipped, rep) = flip_labels(&ds, 0.2, 9).unwrap();
        assert_eq!(rep.affected_rows.len(), 20);
        for &r in &rep.affected_rows {
            assert_eq!(flipped.label(r), 1 - ds.label(r));
        }
        let mut rng = seeds::rng(0);
        let back = flip_rows(&flipped, &rep.affected_rows, &mut rng).unwrap();
        assert_eq!(back.targets, ds.targets);
    }

    #[test]
    fn multiclass_flip_always_changes_label() {
        let x = Array2::zeros((300, 1));
        let labels: Vec<usize> = (0..300).map(|i| i % 5).collect();
        let ds = Dataset::classification(x, &labels, 5).unwrap();
        let (flipped, rep) = flip_labels(&ds, 0.5, 1).unwrap();
        assert_eq!(changed_rows(&ds, &flipped), rep.affected_rows);
        assert!(rep
            .affected_rows
            .iter()
            .all(|&r| flipped.label(r) != ds.label(r)));
    }

    #[test]
    fn flip_rejects_regression_and_bad_fraction() {
        let ds = Dataset::regression(Array2::zeros((4, 1)), vec![0.0; 4]).unwrap();
        assert!(flip_labels(&ds, 0.5, 0).is_err());
        assert!(flip_labels(&numeric(10, 0), 0.0, 0).is_err());
        assert!(flip_labels(&numeric(10, 0), 1.5, 0).is_err());
    }

    #[test]
    fn missing_cells_and_policies() {
        let ds = numeric(100, 5);
        let (holed, rep) = inject_missing(&ds, 0.1, 2).unwrap();
        assert_eq!(rep.affected_rows.len(), 10);
        for r in 0..100 {
            let nan = holed.features.row(r).iter().filter(|v| v.is_nan()).count();
            assert_eq!(nan, usize::from(rep.affected_rows.contains(&r)));
        }
        let dropped = holed.apply_missing_policy(MissingPolicy::DropRow).unwrap();
        assert_eq!(dropped.n_rows(), 90);
        let imputed = holed
            .apply_missing_policy(MissingPolicy::MeanImpute)
            .unwrap();
        for &r in &rep.affected_rows {
            let j = (0..3).find(|&j| holed.features[[r, j]].is_nan()).unwrap();
            let present: Vec<f64> = (0..100)
                .filter_map(|i| Some(holed.features[[i, j]]).filter(|v| !v.is_nan()))
                .collect();
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            assert!((imputed.features[[r, j]] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn injectors_are_deterministic() {
        let ds = numeric(200, 6);
        assert_eq!(
            inject_gaussian_noise(&ds, 0.3, 1.0, 4).unwrap().0,
            inject_gaussian_noise(&ds, 0.3, 1.0, 4).unwrap().0
        );
        assert_eq!(
            flip_labels(&ds, 0.3, 4).unwrap().1,
            flip_labels(&ds, 0.3, 4).unwrap().1
        );
        assert_eq!(
            inject_missing(&ds, 0.3, 4).unwrap().1,
            inject_missing(&ds, 0.3, 4).unwrap().1
        );
    }
}
