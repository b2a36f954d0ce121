use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind, Task};
use crate::error::{invalid, Error, Result};

/// Cell contents treated as missing.
pub const MISSING_TOKENS: &[&str] = &["", "NA", "NaN", "nan", "?"];

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    MeanImpute,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" | "drop-row" => Ok(MissingPolicy::DropRow),
            "mean" | "mean-impute" => Ok(MissingPolicy::MeanImpute),
            other => Err(invalid(format!("unknown missing policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub target_column: String,
    pub task: Task,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub missing: MissingPolicy,
}

fn default_delimiter() -> char {
    ','
}

impl Schema {
    pub fn new(target_column: impl Into<String>, task: Task) -> Self {
        Schema {
            target_column: target_column.into(),
            task,
            categorical_columns: Vec::new(),
            timestamp_column: None,
            delimiter: ',',
            missing: MissingPolicy::DropRow,
        }
    }

    pub fn categorical<I, S>(mut self, columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.categorical_columns = columns.into_iter().map(Into::into).collect();
        self
    }

    pub fn timestamp(mut self, column: impl Into<String>) -> Self {
        self.timestamp_column = Some(column.into());
        self
    }

    pub fn missing(mut self, policy: MissingPolicy) -> Self {
        self.missing = policy;
        self
    }
}

/// Raw CSV contents, cells kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub delimiter: char,
}

impl Table {
    pub fn read(path: &Path, delimiter: char) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Table::from_reader(file, delimiter)
    }

    pub fn from_reader<R: Read>(reader: R, delimiter: char) -> Result<Table> {
        if !delimiter.is_ascii() {
            return Err(invalid("delimiter must be an ASCII character"));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            rows.push(record?.iter().map(str::to_string).collect());
        }
        Ok(Table {
            headers,
            rows,
            delimiter,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_to(file)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(self.delimiter as u8)
            .from_writer(writer);
        wtr.write_record(&self.headers)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

pub(crate) fn parse_timestamp(value: &str) -> Option<NaiveDateTime> {
    let v = value.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(v, fmt) {
            return Some(ts);
        }
    }
    NaiveDate::parse_from_str(v, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Read a CSV file and encode it according to `schema`.
pub fn load_table(path: &Path, schema: &Schema) -> Result<Dataset> {
    let table = Table::read(path, schema.delimiter)?;
    parse_table(&table, schema)
}

/// Encode a parsed table.
///
/// Numeric columns come first in source order, followed by one indicator
/// column per category of each categorical column (categories sorted
/// lexicographically). Rows with a missing target are dropped; missing
/// feature cells are resolved by `schema.missing`.
pub fn parse_table(table: &Table, schema: &Schema) -> Result<Dataset> {
    let target = table.column(&schema.target_column)?;
    let categorical: Vec<usize> = schema
        .categorical_columns
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    if categorical.contains(&target) {
        return Err(invalid("target column cannot also be categorical"));
    }
    let timestamp = schema
        .timestamp_column
        .as_deref()
        .map(|c| table.column(c))
        .transpose()?;
    let numeric: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != target && !categorical.contains(&c) && Some(c) != timestamp)
        .collect();

    let rows: Vec<usize> = (0..table.rows.len())
        .filter(|&r| {
            table.rows[r]
                .get(target)
                .is_some_and(|cell| !is_missing(cell))
        })
        .collect();

    let mut kinds = Vec::new();
    let mut names = Vec::new();
    for &c in &numeric {
        kinds.push(FeatureKind::Numeric { source: c });
        names.push(table.headers[c].clone());
    }
    for &c in &categorical {
        let cats: BTreeSet<&str> = rows
            .iter()
            .map(|&r| table.rows[r][c].trim())
            .filter(|v| !is_missing(v))
            .collect();
        for cat in cats {
            kinds.push(FeatureKind::Indicator {
                source: c,
                category: cat.to_string(),
            });
            names.push(format!("{}={}", table.headers[c], cat));
        }
    }
    if kinds.is_empty() {
        return Err(invalid("no feature columns"));
    }

    let mut features = Array2::<f64>::zeros((rows.len(), kinds.len()));
    for (i, &r) in rows.iter().enumerate() {
        let record = &table.rows[r];
        for (j, kind) in kinds.iter().enumerate() {
            let cell = record[kind.source()].trim();
            features[[i, j]] = match kind {
                _ if is_missing(cell) => f64::NAN,
                FeatureKind::Numeric { source } => {
                    parse_number(cell).ok_or_else(|| Error::NonNumeric {
                        column: table.headers[*source].clone(),
                        row: r,
                        value: cell.to_string(),
                    })?
                }
                FeatureKind::Indicator { category, .. } => f64::from(u8::from(cell == category)),
            };
        }
    }

    let mut class_labels = Vec::new();
    let (targets, n_classes) = match schema.task {
        Task::Classification => {
            let labels: BTreeSet<&str> =
                rows.iter().map(|&r| table.rows[r][target].trim()).collect();
            class_labels = labels.iter().map(|s| s.to_string()).collect();
            let t = rows
                .iter()
                .map(|&r| {
                    let l = table.rows[r][target].trim();
                    class_labels.iter().position(|c| c == l).unwrap() as f64
                })
                .collect::<Vec<_>>();
            (t, class_labels.len())
        }
        Task::Regression => {
            let t = rows
                .iter()
                .map(|&r| {
                    let cell = table.rows[r][target].trim();
                    parse_number(cell).ok_or_else(|| Error::NonNumeric {
                        column: schema.target_column.clone(),
                        row: r,
                        value: cell.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (t, 1)
        }
    };

    let mut timestamps = None;
    if let Some(c) = timestamp {
        let mut ts = Vec::with_capacity(rows.len());
        for &r in &rows {
            let cell = &table.rows[r][c];
            ts.push(parse_timestamp(cell).ok_or_else(|| Error::BadTimestamp {
                row: r,
                value: cell.clone(),
            })?);
        }
        timestamps = Some(ts);
    }

    if rows.is_empty() {
        return Err(Error::NoRows);
    }
    let ds = Dataset {
        features,
        targets: targets.into(),
        task: schema.task,
        n_classes,
        timestamps,
        feature_names: names,
        feature_kinds: kinds,
        class_labels,
        source_rows: rows,
    };
    let ds = if ds.has_missing() {
        ds.apply_missing_policy(schema.missing)?
    } else {
        ds
    };
    if ds.task == Task::Classification && ds.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(invalid("classification target has fewer than two classes"));
    }
    Ok(ds)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}
