//! Dataset ingestion.
//!
//! CSV files hold one row per datum; a header line is optional. When a model
//! needs a response, the last CSV column is split off as the response (see
//! [`Dataset::split_response`]). JSON files hold an array of
//! `{"x": [...], "y": number}` objects where `y` may be omitted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HoijError, Result};

/// Input file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv { has_header: bool },
    Json,
}

/// Immutable table of `N` rows with `P` features and an optional response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    response: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, response: Option<Vec<f64>>) -> Result<Self> {
        let first = features.first().ok_or(HoijError::NoRows)?;
        let p = first.len();
        for (row, x) in features.iter().enumerate() {
            if x.len() != p {
                return Err(HoijError::RaggedRows {
                    row: row + 1,
                    expected: p,
                    found: x.len(),
                });
            }
            if let Some((column, value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(HoijError::NonFinite {
                    row: row + 1,
                    column: column + 1,
                    value: *value,
                });
            }
        }
        if let Some(y) = &response {
            if y.len() != features.len() {
                return Err(HoijError::Dimension(format!(
                    "{} responses for {} rows",
                    y.len(),
                    features.len()
                )));
            }
            if let Some((row, value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(HoijError::NonFinite {
                    row: row + 1,
                    column: p + 1,
                    value: *value,
                });
            }
        }
        Ok(Dataset { features, response })
    }

    /// Convenience constructor for one-feature data.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Dataset::new(xs.iter().map(|x| vec![*x]).collect(), None)
    }

    pub fn n_rows(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.features[n]
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    /// Moves the last feature column into the response. A dataset that
    /// already has a response is returned unchanged.
    pub fn split_response(self) -> Result<Self> {
        if self.response.is_some() {
            return Ok(self);
        }
        if self.n_features() < 2 {
            return Err(HoijError::Dimension(
                "need at least one feature column plus a response column".into(),
            ));
        }
        let mut features = self.features;
        let response = features
            .iter_mut()
            .map(|row| row.pop().expect("checked above"))
            .collect();
        Ok(Dataset {
            features,
            response: Some(response),
        })
    }
}

/// Reads a dataset from disk.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HoijError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        DataFormat::Csv { has_header } => parse_csv(&text, has_header),
        DataFormat::Json => parse_json(&text),
    }
}

pub fn parse_csv(text: &str, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| HoijError::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let column = j + 1;
            let value: f64 = field.parse().map_err(|_| HoijError::Parse {
                row,
                column,
                message: format!("`{field}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(HoijError::NonFinite { row, column, value });
            }
            values.push(value);
        }
        rows.push(values);
    }
    Dataset::new(rows, None)
}

#[derive(Deserialize)]
struct JsonRow {
    x: Vec<f64>,
    y: Option<f64>,
}

pub fn parse_json(text: &str) -> Result<Dataset> {
    let rows: Vec<JsonRow> = serde_json::from_str(text).map_err(|e| HoijError::Parse {
        row: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let with_y = rows.iter().filter(|r| r.y.is_some()).count();
    if with_y != 0 && with_y != rows.len() {
        return Err(HoijError::Dimension(
            "either every row or no row must carry `y`".into(),
        ));
    }
    let response = (with_y > 0).then(|| rows.iter().map(|r| r.y.unwrap_or_default()).collect());
    Dataset::new(rows.into_iter().map(|r| r.x).collect(), response)
}
