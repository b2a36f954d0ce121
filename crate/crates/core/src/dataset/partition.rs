use std::ops::Range;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMode {
    Fixed,
    Daily,
    Monthly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Daily,
    Monthly,
}

/// Ordered, pairwise disjoint row ranges. Each range is one chunk (player).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPartition {
    ranges: Vec<Range<usize>>,
    nominal_size: Option<usize>,
    mode: ChunkMode,
}

impl ChunkPartition {
    /// Fixed-size chunks over `0..n`; the last chunk keeps the remainder.
    pub fn fixed(n: usize, size: usize) -> Result<Self> {
        if size == 0 || size > n {
            return Err(invalid(format!("chunk size {size} not in 1..={n}")));
        }
        let ranges = (0..n)
            .step_by(size)
            .map(|start| start..(start + size).min(n))
            .collect();
        Ok(ChunkPartition {
            ranges,
            nominal_size: Some(size),
            mode: ChunkMode::Fixed,
        })
    }

    /// One chunk per row.
    pub fn singletons(n: usize) -> Self {
        ChunkPartition {
            ranges: (0..n).map(|i| i..i + 1).collect(),
            nominal_size: Some(1),
            mode: ChunkMode::Fixed,
        }
    }

    /// Build from explicit ranges; they must be non-empty, ordered and disjoint.
    pub fn from_ranges(ranges: Vec<Range<usize>>, mode: ChunkMode) -> Result<Self> {
        for r in &ranges {
            if r.is_empty() {
                return Err(invalid("empty chunk range"));
            }
        }
        if ranges.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(invalid("chunk ranges overlap or are out of order"));
        }
        Ok(ChunkPartition {
            ranges,
            nominal_size: None,
            mode,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn chunk(&self, j: usize) -> Range<usize> {
        self.ranges[j].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn nominal_size(&self) -> Option<usize> {
        self.nominal_size
    }

    pub fn mode(&self) -> ChunkMode {
        self.mode
    }

    pub fn chunk_len(&self, j: usize) -> usize {
        self.ranges[j].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Total rows covered.
    pub fn covered(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    /// Upper bound of all row indices.
    pub fn end(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Row indices of the given chunks, in chunk order.
    pub fn rows_of(&self, chunks: &[usize]) -> Vec<usize> {
        chunks
            .iter()
            .flat_map(|&j| self.ranges[j].clone())
            .collect()
    }

    /// Chunk holding `row`, if any.
    pub fn chunk_of(&self, row: usize) -> Option<usize> {
        let j = self.ranges.partition_point(|r| r.end <= row);
        (j < self.ranges.len() && self.ranges[j].contains(&row)).then_some(j)
    }
}

/// Split `ds` into chunks of `size` rows in row order.
pub fn partition_fixed(ds: &Dataset, size: usize) -> Result<ChunkPartition> {
    ChunkPartition::fixed(ds.n_rows(), size)
}

/// One chunk per calendar day or month present in the data.
///
/// Rows must already be in chronological order (as produced by the
/// temporal train/validation split).
pub fn partition_temporal(ds: &Dataset, granularity: Granularity) -> Result<ChunkPartition> {
    let ts = ds
        .timestamps
        .as_ref()
        .ok_or_else(|| invalid("temporal partitioning requires a timestamp column"))?;
    if !ts.is_sorted() {
        return Err(invalid("rows are not in chronological order"));
    }
    let key = |i: usize| {
        let d = ts[i].date();
        match granularity {
            Granularity::Daily => (d.year(), d.month(), d.day()),
            Granularity::Monthly => (d.year(), d.month(), 1),
        }
    };
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=ts.len() {
        if i == ts.len() || key(i) != key(start) {
            ranges.push(start..i);
            start = i;
        }
    }
    let mode = match granularity {
        Granularity::Daily => ChunkMode::Daily,
        Granularity::Monthly => ChunkMode::Monthly,
    };
    ChunkPartition::from_ranges(ranges, mode)
}
