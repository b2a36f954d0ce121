//! Tabular data: loading, one-hot encoding, train/validation splits and
//! chunk partitions.

mod load;
mod partition;
mod split;

use chrono::NaiveDateTime;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use load::{load_table, parse_table, MissingPolicy, Schema, Table, MISSING_TOKENS};
pub use partition::{partition_fixed, partition_temporal, ChunkMode, ChunkPartition, Granularity};
pub use split::{split_train_validation, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Where an encoded feature column came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Numeric source column, copied as-is.
    Numeric { source: usize },
    /// One indicator of a one-hot encoded categorical source column.
    Indicator { source: usize, category: String },
}

impl FeatureKind {
    pub fn source(&self) -> usize {
        match self {
            FeatureKind::Numeric { source } | FeatureKind::Indicator { source, .. } => *source,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, FeatureKind::Numeric { .. })
    }
}

/// Encoded feature matrix plus targets.
///
/// Classification targets hold class indices `0..n_classes` stored as `f64`.
/// A `NaN` feature cell marks a missing value; such datasets must go through
/// [`Dataset::apply_missing_policy`] before any model sees them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array1<f64>,
    pub task: Task,
    /// Number of classes (classification) or 1 (regression).
    pub n_classes: usize,
    pub timestamps: Option<Vec<NaiveDateTime>>,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<FeatureKind>,
    /// Original class label strings, indexed by class id. Empty for regression.
    pub class_labels: Vec<String>,
    /// Row index in the source table for every row.
    pub source_rows: Vec<usize>,
}

impl Dataset {
    /// Build a classification dataset from a feature matrix and class ids.
    pub fn classification(
        features: Array2<f64>,
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(invalid("classification needs at least two classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(invalid(format!(
                "class id {bad} out of range 0..{n_classes}"
            )));
        }
        let targets = labels.iter().map(|&y| y as f64).collect();
        let class_labels = (0..n_classes).map(|k| k.to_string()).collect();
        Self::assemble(
            features,
            targets,
            Task::Classification,
            n_classes,
            class_labels,
        )
    }

    pub fn regression(features: Array2<f64>, targets: Vec<f64>) -> Result<Self> {
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(invalid("regression targets must be finite"));
        }
        Self::assemble(features, targets, Task::Regression, 1, Vec::new())
    }

    fn assemble(
        features: Array2<f64>,
        targets: Vec<f64>,
        task: Task,
        n_classes: usize,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, f) = features.dim();
        if n == 0 || f == 0 {
            return Err(invalid(format!("dataset must be non-empty, got {n}x{f}")));
        }
        if targets.len() != n {
            return Err(invalid(format!("{} targets for {n} rows", targets.len())));
        }
        Ok(Dataset {
            features,
            targets: Array1::from(targets),
            task,
            n_classes,
            timestamps: None,
            feature_names: (0..f).map(|i| format!("x{i}")).collect(),
            feature_kinds: (0..f)
                .map(|source| FeatureKind::Numeric { source })
                .collect(),
            class_labels,
            source_rows: (0..n).collect(),
        })
    }

    pub fn with_timestamps(mut self, timestamps: Vec<NaiveDateTime>) -> Result<Self> {
        if timestamps.len() != self.n_rows() {
            return Err(invalid("timestamp count does not match row count"));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Width of the model output layer.
    pub fn output_dim(&self) -> usize {
        match self.task {
            Task::Classification => self.n_classes,
            Task::Regression => 1,
        }
    }

    pub fn label(&self, row: usize) -> usize {
        self.targets[row] as usize
    }

    /// Contiguous row view.
    pub fn rows(
        &self,
        range: std::ops::Range<usize>,
    ) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        (
            self.features.slice(s![range.clone(), ..]),
            self.targets.slice(s![range]),
        )
    }

    pub fn view(&self) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        (self.features.view(), self.targets.view())
    }

    /// Copy of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            task: self.task,
            n_classes: self.n_classes,
            timestamps: self
                .timestamps
                .as_ref()
                .map(|ts| rows.iter().map(|&r| ts[r]).collect()),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            class_labels: self.class_labels.clone(),
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
        }
    }

    pub fn numeric_features(&self) -> Vec<usize> {
        (0..self.n_features())
            .filter(|&j| self.feature_kinds[j].is_numeric())
            .collect()
    }

    pub fn has_missing(&self) -> bool {
        self.features.iter().any(|v| v.is_nan())
    }

    /// Resolve `NaN` cells: drop affected rows or replace each by its column
    /// mean over non-missing entries.
    pub fn apply_missing_policy(&self, policy: MissingPolicy) -> Result<Dataset> {
        match policy {
            MissingPolicy::DropRow => {
                let keep: Vec<usize> = (0..self.n_rows())
                    .filter(|&r| self.features.row(r).iter().all(|v| !v.is_nan()))
                    .collect();
                if keep.is_empty() {
                    return Err(crate::Error::NoRows);
                }
                Ok(self.select(&keep))
            }
            MissingPolicy::MeanImpute => {
                let mut out = self.clone();
                for mut col in out.features.columns_mut() {
                    let (sum, count) = col
                        .iter()
                        .filter(|v| !v.is_nan())
                        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                    if count == 0 {
                        return Err(crate::Error::NoRows);
                    }
                    let mean = sum / count as f64;
                    col.mapv_inplace(|v| if v.is_nan() { mean } else { v });
                }
                Ok(out)
            }
        }
    }

    /// Per-class row counts (classification only).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        if self.task == Task::Classification {
            for &y in self.targets.iter() {
                counts[y as usize] += 1;
            }
        }
        counts
    }
}
