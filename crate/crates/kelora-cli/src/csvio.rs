//! CSV formats: datasets (features + final integer label column) and
//! metric/result tables. Floats print in Rust's shortest round-trip form,
//! so write-then-read reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use kelora::trainer::Dataset;
use kelora::Matrix;

use crate::error::{CliError, Result};

/// Loads a dataset CSV: header line, feature columns in file order, final
/// column an integer class label. Line and column numbers in errors are
/// 1-based file coordinates (the header is line 1).
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Dataset(format!("{}: empty file", path.display())))?;
    let columns = header.split(',').count();
    if columns < 2 {
        return Err(CliError::Dataset(format!(
            "{}: header needs at least one feature column and the label column",
            path.display()
        )));
    }
    let dim = columns - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (index, line) in lines {
        let line_no = index + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(CliError::Dataset(format!(
                "{}: line {line_no}: expected {columns} fields, found {}",
                path.display(),
                fields.len()
            )));
        }
        for (col, field) in fields[..dim].iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                CliError::Dataset(format!(
                    "{}: line {line_no}, column {}: not a number: {field:?}",
                    path.display(),
                    col + 1
                ))
            })?;
            features.push(value);
        }
        let label_field = fields[dim].trim();
        let label: usize = label_field.parse().map_err(|_| {
            CliError::Dataset(format!(
                "{}: line {line_no}, column {columns}: not an integer label: {label_field:?}",
                path.display()
            ))
        })?;
        labels.push(label);
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Dataset(format!(
            "{}: no data rows after the header",
            path.display()
        )));
    }
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    let features = Matrix::new(rows, dim, features).map_err(CliError::Numerical)?;
    Dataset::new(features, labels, class_count.max(2)).map_err(CliError::Numerical)
}

/// Writes a dataset in the format `load_csv_dataset` reads.
pub fn save_csv_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let dim = data.feature_dim();
    let mut out = String::new();
    for j in 0..dim {
        let _ = write!(out, "feature_{j},");
    }
    out.push_str("label\n");
    for i in 0..data.len() {
        for &v in data.features.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", data.labels[i]);
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Minimal CSV table writer: one header, rows of stringified cells.
pub struct CsvTable {
    buffer: String,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            buffer: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buffer.push_str(&cells.join(","));
        self.buffer.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buffer).map_err(|e| CliError::io(path, e))
    }
}

/// Shortest round-trip decimal form of an f64 (what `parse::<f64>` inverts).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use kelora::trainer::make_blobs;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let data = make_blobs(5, 40, 3, 4, 2.5).unwrap();
        save_csv_dataset(&path, &data).unwrap();
        let back = load_csv_dataset(&path).unwrap();
        assert_eq!(back.features, data.features);
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.class_count, data.class_count);
    }

    #[test]
    fn fixture_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "a,b,label\n1.5,2.0,0\n-0.25,3.0,1\n0.0,0.0,0\n").unwrap();
        let data = load_csv_dataset(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.feature_dim(), 2);
        assert_eq!(data.labels, vec![0, 1, 0]);
        assert_eq!(data.features[(1, 0)], -0.25);
    }

    #[test]
    fn errors_are_distinct_and_name_the_spot() {
        let dir = tempfile::tempdir().unwrap();

        let missing = load_csv_dataset(&dir.path().join("nope.csv")).unwrap_err();
        assert!(matches!(missing, CliError::Io { .. }), "{missing}");

        let ragged_path = dir.path().join("ragged.csv");
        std::fs::write(&ragged_path, "a,b,label\n1.0,2.0,0\n1.0,0\n").unwrap();
        let ragged = load_csv_dataset(&ragged_path).unwrap_err();
        assert!(ragged.to_string().contains("line 3"), "{ragged}");
        assert!(ragged.to_string().contains("expected 3 fields"), "{ragged}");

        let text_path = dir.path().join("text.csv");
        std::fs::write(&text_path, "a,b,label\n1.0,oops,0\n").unwrap();
        let text = load_csv_dataset(&text_path).unwrap_err();
        assert!(text.to_string().contains("line 2, column 2"), "{text}");
        assert!(text.to_string().contains("not a number"), "{text}");

        let label_path = dir.path().join("label.csv");
        std::fs::write(&label_path, "a,b,label\n1.0,2.0,1.5\n").unwrap();
        let label = load_csv_dataset(&label_path).unwrap_err();
        assert!(label.to_string().contains("not an integer label"), "{label}");

        let empty_path = dir.path().join("empty.csv");
        std::fs::write(&empty_path, "a,b,label\n").unwrap();
        let empty = load_csv_dataset(&empty_path).unwrap_err();
        assert!(empty.to_string().contains("no data rows"), "{empty}");
    }

    #[test]
    fn shortest_form_survives_reparse() {
        for v in [
            0.1,
            -1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            2.5e-17,
        ] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} via {s}");
        }
    }
}
