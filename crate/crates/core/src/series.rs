// SPDX-License-Identifier: MIT OR Apache-2.0

//! Observation sequences and file ingestion.
//!
//! Input files are delimiter-separated text with one observation per row.
//! The delimiter is sniffed among comma, tab and semicolon; the first row is
//! treated as a header when none of its cells parses as a number. Non-finite
//! values are rejected, never dropped, so change-point indices always refer to
//! file order.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::Serialize;

use crate::error::{DpdError, Result};

/// An ordered, non-empty sequence of finite observations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<String>>,
}

impl Series {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DpdError::EmptySelection(String::new()));
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DpdError::NonFinite { row: i + 1, value: v });
        }
        Ok(Self {
            values,
            label: None,
            timestamps: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Attaches one timestamp per observation.
    pub fn with_timestamps(mut self, timestamps: Vec<String>) -> Result<Self> {
        if timestamps.len() != self.values.len() {
            return Err(DpdError::invalid(format!(
                "{} timestamps for {} observations",
                timestamps.len(),
                self.values.len()
            )));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; a `Series` holds at least one observation.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Timestamp of the observation at 1-based position `t`.
    pub fn timestamp(&self, t: usize) -> Option<&str> {
        self.timestamps
            .as_ref()
            .and_then(|ts| t.checked_sub(1).and_then(|i| ts.get(i)))
            .map(String::as_str)
    }

    /// Sub-series over a 0-based half-open range, keeping timestamps.
    pub fn slice(&self, range: Range<usize>) -> Result<Series> {
        if range.start >= range.end || range.end > self.values.len() {
            return Err(DpdError::invalid(format!(
                "slice {}..{} out of bounds for length {}",
                range.start,
                range.end,
                self.values.len()
            )));
        }
        Ok(Series {
            values: self.values[range.clone()].to_vec(),
            label: self.label.clone(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[range].to_vec()),
        })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Biased (1/n) sample variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.len() as f64
    }

    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }
}

/// Column selection for [`load_series`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    /// 0-based column index.
    Index(usize),
    /// Header name, matched case-insensitively.
    Name(String),
}

impl Column {
    /// Integers are read as 0-based indices, anything else as a header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.trim().to_string()),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub column: Option<Column>,
    /// Column holding timestamps; auto-detected from a `date`/`time` header if unset.
    pub time_column: Option<Column>,
}

/// Reads one column of a delimited text file; `column` defaults as described in [`load_series_with`].
pub fn load_series(path: impl AsRef<Path>, column: Option<Column>) -> Result<Series> {
    load_series_with(
        path,
        &LoadOptions {
            column,
            time_column: None,
        },
    )
}

/// Reads a series with explicit options.
///
/// Without an explicit column the value column is `close` when the header has
/// one, otherwise the first column whose first data cell is numeric.
pub fn load_series_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Series> {
    let path = path.as_ref();
    let io_err = |source| DpdError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut first_line = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err)?;
        if !line.trim().is_empty() {
            first_line = line;
            break;
        }
    }
    if first_line.is_empty() {
        return Err(DpdError::EmptySelection(format!(" ({} is empty)", path.display())));
    }
    let delimiter = sniff_delimiter(&first_line);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_to_io(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }

    let has_header = rows
        .first()
        .map(|(_, cells)| cells.iter().all(|c| parse_number(c).is_none()))
        .unwrap_or(false);
    let header: Option<Vec<String>> = if has_header { Some(rows.remove(0).1) } else { None };
    if rows.is_empty() {
        return Err(DpdError::EmptySelection(format!(
            " ({} has no data rows)",
            path.display()
        )));
    }

    let resolve = |col: &Column| -> Result<usize> {
        match col {
            Column::Index(i) => Ok(*i),
            Column::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c.eq_ignore_ascii_case(name)))
                .ok_or_else(|| DpdError::UnknownColumn(name.clone())),
        }
    };

    let time_idx = match &opts.time_column {
        Some(c) => Some(resolve(c)?),
        None => header.as_ref().and_then(|h| {
            h.iter().position(|c| {
                matches!(
                    c.to_ascii_lowercase().as_str(),
                    "date" | "time" | "timestamp" | "datetime"
                )
            })
        }),
    };

    let value_idx = match &opts.column {
        Some(c) => resolve(c)?,
        None => {
            let by_name = header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c.eq_ignore_ascii_case("close")));
            match by_name {
                Some(i) => i,
                None => rows[0]
                    .1
                    .iter()
                    .enumerate()
                    .position(|(i, c)| Some(i) != time_idx && parse_number(c).is_some())
                    .unwrap_or(0),
            }
        }
    };

    let mut values = Vec::with_capacity(rows.len());
    let mut stamps = Vec::new();
    for (line, cells) in &rows {
        let cell = cells.get(value_idx).ok_or_else(|| DpdError::Parse {
            row: *line,
            value: String::new(),
        })?;
        let v = parse_number(cell).ok_or_else(|| DpdError::Parse {
            row: *line,
            value: cell.clone(),
        })?;
        if !v.is_finite() {
            return Err(DpdError::NonFinite { row: *line, value: v });
        }
        values.push(v);
        if let Some(ti) = time_idx {
            stamps.push(cells.get(ti).cloned().unwrap_or_default());
        }
    }

    let label = header
        .as_ref()
        .and_then(|h| h.get(value_idx).cloned())
        .unwrap_or_else(|| format!("column {value_idx}"));
    let mut series = Series::new(values)?.with_label(label);
    if time_idx.is_some() {
        series = series.with_timestamps(stamps)?;
    }
    Ok(series)
}

fn csv_to_io(path: &Path, e: csv::Error) -> DpdError {
    DpdError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    let s = cell.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok()
}

fn sniff_delimiter(line: &str) -> u8 {
    b",\t;"
        .iter()
        .copied()
        .max_by_key(|&d| (line.bytes().filter(|&b| b == d).count(), d == b','))
        .filter(|&d| line.as_bytes().contains(&d))
        .unwrap_or(b',')
}

/// Log returns `scale * ln(p[t+1] / p[t])`.
///
/// The returned series has `n - 1` elements; timestamps, when present, are
/// those of the later price in each pair.
pub fn log_returns(prices: &Series, scale: f64) -> Result<Series> {
    let p = prices.values();
    if p.len() < 2 {
        return Err(DpdError::invalid("log returns need at least two prices"));
    }
    if let Some((i, &v)) = p.iter().enumerate().find(|(_, &v)| v <= 0.0) {
        return Err(DpdError::invalid(format!(
            "price at position {} is not positive ({v})",
            i + 1
        )));
    }
    let values: Vec<f64> = p.windows(2).map(|w| scale * (w[1].ln() - w[0].ln())).collect();
    let mut out = Series::new(values)?;
    if let Some(label) = prices.label() {
        out = out.with_label(format!("{label} returns"));
    }
    if let Some(ts) = prices.timestamps() {
        out = out.with_timestamps(ts[1..].to_vec())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_column() {
        let f = write_tmp("1.0\n2.0\n");
        let s = load_series(f.path(), None).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn header_and_named_column() {
        let f = write_tmp("date,open,close\n2020-01-01,1,10\n2020-01-02,2,11\n");
        let s = load_series(f.path(), Some(Column::Name("close".into()))).unwrap();
        assert_eq!(s.values(), &[10.0, 11.0]);
        assert_eq!(s.timestamp(2), Some("2020-01-02"));
        let s = load_series(f.path(), None).unwrap();
        assert_eq!(s.values(), &[10.0, 11.0]);
        let s = load_series(f.path(), Some(Column::Index(1))).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0]);
    }

    #[test]
    fn bad_cell_reports_row() {
        let f = write_tmp("1\n2\n3\n4\n5\n6\nabc\n8\n");
        match load_series(f.path(), None) {
            Err(DpdError::Parse { row, value }) => {
                assert_eq!(row, 7);
                assert_eq!(value, "abc");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let f = write_tmp("1\nNaN\n3\n");
        assert!(matches!(
            load_series(f.path(), None),
            Err(DpdError::NonFinite { row: 2, .. })
        ));
    }

    #[test]
    fn delimiters_sniffed() {
        let f = write_tmp("a\tb\n1\t2\n3\t4\n");
        let s = load_series(f.path(), Some(Column::Name("b".into()))).unwrap();
        assert_eq!(s.values(), &[2.0, 4.0]);
        let f = write_tmp("a;b\n1;2\n3;4\n");
        let s = load_series(f.path(), Some(Column::Index(0))).unwrap();
        assert_eq!(s.values(), &[1.0, 3.0]);
    }

    #[test]
    fn missing_file_and_empty_selection() {
        assert!(matches!(
            load_series("/nonexistent/file.csv", None),
            Err(DpdError::Io { .. })
        ));
        let f = write_tmp("price\n");
        assert!(matches!(load_series(f.path(), None), Err(DpdError::EmptySelection(_))));
        let f = write_tmp("x,y\n1,2\n");
        assert!(matches!(
            load_series(f.path(), Some(Column::Name("z".into()))),
            Err(DpdError::UnknownColumn(_))
        ));
    }

    #[test]
    fn log_return_examples() {
        let s = Series::new(vec![1.0, 0.01f64.exp()]).unwrap();
        let r = log_returns(&s, 100.0).unwrap();
        assert!((r.values()[0] - 1.0).abs() < 1e-12);

        let s = Series::new(vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(log_returns(&s, 100.0).unwrap().values(), &[0.0, 0.0]);

        // 100 * ln(1.01) = 0.99503308531680828...
        let s = Series::new(vec![100.0, 101.0]).unwrap();
        let r = log_returns(&s, 100.0).unwrap();
        assert!((r.values()[0] - 0.995_033_085_316_808_3).abs() < 1e-13);
    }

    #[test]
    fn log_return_errors() {
        assert!(log_returns(&Series::new(vec![1.0]).unwrap(), 100.0).is_err());
        assert!(log_returns(&Series::new(vec![1.0, 0.0]).unwrap(), 100.0).is_err());
        assert!(log_returns(&Series::new(vec![-1.0, 2.0]).unwrap(), 100.0).is_err());
    }

    #[test]
    fn empty_series_rejected() {
        assert!(Series::new(vec![]).is_err());
        assert!(Series::new(vec![f64::INFINITY]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn returns_are_scale_invariant(
            prices in proptest::collection::vec(0.1f64..1e4, 2..40),
            c in 1e-3f64..1e3,
        ) {
            let p = Series::new(prices.clone()).unwrap();
            let q = Series::new(prices.iter().map(|x| x * c).collect()).unwrap();
            let a = log_returns(&p, 100.0).unwrap();
            let b = log_returns(&q, 100.0).unwrap();
            proptest::prop_assert_eq!(a.len(), prices.len() - 1);
            for (x, y) in a.values().iter().zip(b.values()) {
                proptest::prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }
}
