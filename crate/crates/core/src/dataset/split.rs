use rand::seq::SliceRandom;

use super::{Dataset, Task};
use crate::error::{invalid, Result};
use crate::seeds;

/// Result of [`split_train_validation`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    /// Row indices (into the input dataset) of each side.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub stratified: bool,
    /// Set when stratification was requested but had to be abandoned.
    pub warning: Option<String>,
}

fn holdout_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Carve a validation split off `ds`.
///
/// Temporal data is split by time (the latest rows become validation).
/// Otherwise rows are shuffled with `seed`, stratified by class for
/// classification when every present class has at least two rows. Both sides
/// keep input order (chronological order for temporal data).
pub fn split_train_validation(ds: &Dataset, validation_fraction: f64, seed: u64) -> Result<Split> {
    let n = ds.n_rows();
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(invalid(format!(
            "validation fraction {validation_fraction} not in (0, 1)"
        )));
    }
    if n < 2 {
        return Err(invalid("need at least two rows to split"));
    }
    let mut rng = seeds::rng(seeds::derive(seed, seeds::tag::SPLIT));
    let mut stratified = false;
    let mut warning = None;

    let (mut train, mut validation): (Vec<usize>, Vec<usize>) = if let Some(ts) = &ds.timestamps {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ts[i]);
        let n_val = holdout_count(n, validation_fraction);
        let validation = order.split_off(n - n_val);
        return finish(ds, order, validation, false, None);
    } else if ds.task == Task::Classification {
        let counts = ds.class_counts();
        if counts.iter().all(|&c| c == 0 || c >= 2) {
            stratified = true;
            let mut train = Vec::new();
            let mut validation = Vec::new();
            for class in 0..ds.n_classes {
                let mut members: Vec<usize> = (0..n).filter(|&i| ds.label(i) == class).collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(&mut rng);
                let k = holdout_count(members.len(), validation_fraction);
                validation.extend_from_slice(&members[..k]);
                train.extend_from_slice(&members[k..]);
            }
            (train, validation)
        } else {
            warning = Some("a class has a single row; split is not stratified".to_string());
            shuffled(n, validation_fraction, &mut rng)
        }
    } else {
        shuffled(n, validation_fraction, &mut rng)
    };
    train.sort_unstable();
    validation.sort_unstable();
    finish(ds, train, validation, stratified, warning)
}

fn shuffled(n: usize, fraction: f64, rng: &mut seeds::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let k = holdout_count(n, fraction);
    let train = order.split_off(k);
    (train, order)
}

fn finish(
    ds: &Dataset,
    train: Vec<usize>,
    validation: Vec<usize>,
    stratified: bool,
    warning: Option<String>,
) -> Result<Split> {
    Ok(Split {
        train: ds.select(&train),
        validation: ds.select(&validation),
        train_indices: train,
        validation_indices: validation,
        stratified,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};
    use ndarray::Array2;

    fn toy(labels: &[usize]) -> Dataset {
        let n = labels.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::classification(x, labels, 2).unwrap()
    }

    #[test]
    fn sizes_and_determinism() {
        let ds = Dataset::regression(Array2::zeros((10, 1)), vec![0.0; 10]).unwrap();
        let a = split_train_validation(&ds, 0.2, 7).unwrap();
        assert_eq!((a.train.n_rows(), a.validation.n_rows()), (8, 2));
        let b = split_train_validation(&ds, 0.2, 7).unwrap();
        assert_eq!(a.train_indices, b.train_indices);
        assert_eq!(a.validation_indices, b.validation_indices);
        let mut all = [a.train_indices.clone(), a.validation_indices.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_halves() {
        let ds = toy(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        let s = split_train_validation(&ds, 0.5, 3).unwrap();
        assert!(s.stratified);
        assert_eq!(s.validation.class_counts(), vec![3, 3]);
        assert_eq!(s.train.class_counts(), vec![3, 3]);
    }

    #[test]
    fn singleton_class_falls_back() {
        let ds = toy(&[0, 0, 0, 0, 1]);
        let s = split_train_validation(&ds, 0.4, 1).unwrap();
        assert!(!s.stratified);
        assert!(s.warning.is_some());
        assert_eq!(s.validation.n_rows(), 2);
    }

    #[test]
    fn temporal_split_holds_out_latest_rows() {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        // Rows stored newest first.
        let ts: Vec<_> = (0..10).rev().map(|h| start + TimeDelta::hours(h)).collect();
        let ds = Dataset::regression(Array2::zeros((10, 1)), vec![0.0; 10])
            .unwrap()
            .with_timestamps(ts.clone())
            .unwrap();
        let s = split_train_validation(&ds, 0.3, 0).unwrap();
        let max_train = s.train.timestamps.as_ref().unwrap().iter().max().unwrap();
        let min_val = s
            .validation
            .timestamps
            .as_ref()
            .unwrap()
            .iter()
            .min()
            .unwrap();
        assert!(max_train < min_val);
        assert!(s.train.timestamps.unwrap().is_sorted());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let ds = toy(&[0, 1]);
        assert!(split_train_validation(&ds, 0.0, 0).is_err());
        assert!(split_train_validation(&ds, 1.0, 0).is_err());
        let one = Dataset::regression(Array2::zeros((1, 1)), vec![0.0]).unwrap();
        assert!(split_train_validation(&one, 0.5, 0).is_err());
    }
}
