//! Signal records and their CSV representation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected two numeric columns, got {got:?}")]
    BadRow { line: usize, got: String },
    #[error("line {line}: non-finite value {value}")]
    NonFinite { line: usize, value: String },
    #[error("line {line}: x value {x} does not increase over the previous row")]
    NonMonotone { line: usize, x: f64 },
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("x and y must have equal nonzero length (got {x} and {y})")]
    BadLengths { x: usize, y: usize },
}

/// A 1-D signal: strictly increasing predictor, finite responses, and
/// free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

impl SignalRecord {
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        metadata: Vec<(String, String)>,
    ) -> Result<Self, IoError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(IoError::BadLengths {
                x: x.len(),
                y: y.len(),
            });
        }
        for i in 0..x.len() {
            if !x[i].is_finite() || !y[i].is_finite() {
                return Err(IoError::NonFinite {
                    line: i + 1,
                    value: format!("({}, {})", x[i], y[i]),
                });
            }
            if i > 0 && !(x[i] > x[i - 1]) {
                return Err(IoError::NonMonotone {
                    line: i + 1,
                    x: x[i],
                });
            }
        }
        Ok(Self { x, y, metadata })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

const MIN_ROWS: usize = 10;

/// Parse a two-column `x,y` CSV with an optional header row; a third
/// column, when present, is ignored. Rows must be finite and strictly
/// increasing in x, and line numbers are reported on violations.
pub fn ingest_csv(path: &Path) -> Result<SignalRecord, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut prev_x: Option<f64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',');
        let fx = fields.next().unwrap_or("").trim();
        let fy = fields.next().unwrap_or("").trim();
        let parsed = fx.parse::<f64>().and_then(|a| fy.parse::<f64>().map(|b| (a, b)));
        let (vx, vy) = match parsed {
            Ok(pair) => pair,
            Err(_) if idx == 0 => continue, // header row
            Err(_) => {
                return Err(IoError::BadRow {
                    line,
                    got: trimmed.to_string(),
                })
            }
        };
        if !vx.is_finite() || !vy.is_finite() {
            return Err(IoError::NonFinite {
                line,
                value: trimmed.to_string(),
            });
        }
        if let Some(prev) = prev_x {
            if !(vx > prev) {
                return Err(IoError::NonMonotone { line, x: vx });
            }
        }
        prev_x = Some(vx);
        x.push(vx);
        y.push(vy);
    }
    if x.len() < MIN_ROWS {
        return Err(IoError::TooFewRows {
            min: MIN_ROWS,
            got: x.len(),
        });
    }
    let metadata = vec![("source".into(), path.display().to_string())];
    SignalRecord::new(x, y, metadata)
}

/// Write `x,y` rows with a header. Floating-point values use the shortest
/// representation that round-trips, so `ingest(emit(r))` reproduces `r`.
pub fn emit_signal_csv(record: &SignalRecord, path: &Path) -> Result<(), IoError> {
    let mut text = String::from("x,y\n");
    for (x, y) in record.x.iter().zip(&record.y) {
        text.push_str(&format!("{x},{y}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Whole-file atomic write: write to a sibling temp file, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp-write");
    let fail = |source| IoError::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(&tmp).map_err(fail)?;
    file.write_all(bytes).map_err(fail)?;
    file.sync_all().map_err(fail)?;
    drop(file);
    fs::rename(&tmp, path).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("peakforge-io-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn parses_plain_rows_and_header() {
        let path = tmpfile("basic.csv");
        fs::write(&path, "x,y\n0,0\n1,2\n2,0\n3,1\n4,0\n5,3\n6,0\n7,1\n8,0\n9,2\n").unwrap();
        let record = ingest_csv(&path).unwrap();
        assert_eq!(record.len(), 10);
        assert_eq!(record.y[1], 2.0);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn third_column_is_ignored() {
        let path = tmpfile("third.csv");
        let rows: String = (0..12).map(|i| format!("{i},{},note\n", i * 2)).collect();
        fs::write(&path, rows).unwrap();
        let record = ingest_csv(&path).unwrap();
        assert_eq!(record.len(), 12);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn duplicate_x_names_the_line() {
        let path = tmpfile("dup.csv");
        let mut rows = String::new();
        for i in 0..8 {
            rows.push_str(&format!("{i},1\n"));
        }
        rows.push_str("7,1\n8,1\n9,1\n");
        fs::write(&path, rows).unwrap();
        let err = ingest_csv(&path).unwrap_err();
        match err {
            IoError::NonMonotone { line, .. } => assert_eq!(line, 9),
            other => panic!("unexpected error {other}"),
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn non_finite_and_short_files_are_rejected() {
        let path = tmpfile("nan.csv");
        fs::write(&path, "0,0\n1,nan\n2,0\n3,0\n4,0\n5,0\n6,0\n7,0\n8,0\n9,0\n").unwrap();
        assert!(matches!(
            ingest_csv(&path),
            Err(IoError::NonFinite { line: 2, .. })
        ));
        fs::write(&path, "0,0\n1,1\n").unwrap();
        assert!(matches!(ingest_csv(&path), Err(IoError::TooFewRows { .. })));
        fs::remove_file(&path).ok();
    }

    #[test]
    fn emit_then_ingest_round_trips() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.73 + 0.001).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 1.37).sin() * 1e-3 + 2.0 / 3.0).collect();
        let record = SignalRecord::new(x, y, vec![]).unwrap();
        let path = tmpfile("roundtrip.csv");
        emit_signal_csv(&record, &path).unwrap();
        let back = ingest_csv(&path).unwrap();
        assert_eq!(back.x, record.x);
        assert_eq!(back.y, record.y);
        fs::remove_file(&path).ok();
    }
}
