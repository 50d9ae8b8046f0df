//! Feature and label file formats.
//!
//! CSV feature files carry a header `f0,...,f{d-1}` followed by one decimal
//! row per sample. Binary feature files are `DRLF` / version 1: magic bytes,
//! `u16` version, `u64` row count, `u64` column count (all little-endian),
//! then a row-major `f32` little-endian payload. The binary format
//! round-trips bit-exactly.
//!
//! Label files are either one integer per line or a CSV with a column named
//! `label`.

use super::DatasetError;
use crate::numeric::Matrix;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const BINARY_MAGIC: &[u8; 4] = b"DRLF";
pub const BINARY_VERSION: u16 = 1;

/// On-disk encoding of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// Pick a format from a file extension: `.csv` is CSV, everything else
    /// is the binary container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// Load a feature matrix in the declared format.
pub fn load_features(path: &Path, format: FeatureFormat) -> Result<Matrix, DatasetError> {
    match format {
        FeatureFormat::Csv => load_features_csv(path),
        FeatureFormat::Binary => load_features_binary(path),
    }
}

pub fn load_features_csv(path: &Path) -> Result<Matrix, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_to_dataset_error)?;
    let headers = reader.headers().map_err(csv_to_dataset_error)?.clone();
    let cols = headers.len();
    for (i, name) in headers.iter().enumerate() {
        let expected = format!("f{i}");
        if name != expected {
            return Err(DatasetError::MalformedHeader {
                reason: format!("column {i} is named {name:?}, expected {expected:?}"),
            });
        }
    }
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_to_dataset_error)?;
        if record.len() != cols {
            return Err(DatasetError::RowWidthMismatch {
                row,
                expected: cols,
                got: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| DatasetError::MalformedValue {
                line: row + 2,
                reason: format!("cannot parse {field:?} as a real number"),
            })?;
            if !value.is_finite() {
                return Err(DatasetError::NonFiniteValue { row, col });
            }
            data.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(Matrix::new(rows, cols, data)?)
}

pub fn save_features_csv(path: &Path, features: &Matrix) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_to_dataset_error)?;
    let header: Vec<String> = (0..features.cols()).map(|i| format!("f{i}")).collect();
    writer.write_record(&header).map_err(csv_to_dataset_error)?;
    for r in 0..features.rows() {
        let row: Vec<String> = features.row(r).iter().map(|x| x.to_string()).collect();
        writer.write_record(&row).map_err(csv_to_dataset_error)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_features_binary(path: &Path) -> Result<Matrix, DatasetError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = reader.read_u16::<LittleEndian>()?;
    if version != BINARY_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let rows = reader.read_u64::<LittleEndian>()? as usize;
    let cols = reader.read_u64::<LittleEndian>()? as usize;
    if rows == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let expected = rows
        .checked_mul(cols)
        .ok_or(DatasetError::Truncated { expected: usize::MAX })?;
    let mut data = Vec::with_capacity(expected);
    for i in 0..expected {
        let v = reader
            .read_f32::<LittleEndian>()
            .map_err(|_| DatasetError::Truncated { expected: expected * 4 })? as f64;
        if !v.is_finite() {
            return Err(DatasetError::NonFiniteValue {
                row: i / cols,
                col: i % cols,
            });
        }
        data.push(v);
    }
    Ok(Matrix::new(rows, cols, data)?)
}

pub fn save_features_binary(path: &Path, features: &Matrix) -> Result<(), DatasetError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(BINARY_MAGIC)?;
    writer.write_u16::<LittleEndian>(BINARY_VERSION)?;
    writer.write_u64::<LittleEndian>(features.rows() as u64)?;
    writer.write_u64::<LittleEndian>(features.cols() as u64)?;
    for &x in features.data() {
        writer.write_f32::<LittleEndian>(x as f32)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load class labels: one integer per line, or a CSV whose header contains
/// a `label` column.
pub fn load_labels(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    let first_nonempty = lines.iter().find(|l| !l.trim().is_empty());
    let header_fields: Vec<&str> = match first_nonempty {
        Some(line) => line.split(',').map(|f| f.trim()).collect(),
        None => return Err(DatasetError::EmptyDataset),
    };
    if let Some(col) = header_fields.iter().position(|&f| f == "label") {
        let mut labels = Vec::new();
        let mut seen_header = false;
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
            let field = fields.get(col).ok_or(DatasetError::MalformedValue {
                line: idx + 1,
                reason: format!("missing label column {col}"),
            })?;
            labels.push(parse_label(field, idx + 1)?);
        }
        if labels.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        return Ok(labels);
    }
    let mut labels = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(parse_label(trimmed, idx + 1)?);
    }
    if labels.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    Ok(labels)
}

/// Write labels one integer per line.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<(), DatasetError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for label in labels {
        writeln!(writer, "{label}")?;
    }
    writer.flush()?;
    Ok(())
}

fn parse_label(field: &str, line: usize) -> Result<usize, DatasetError> {
    field.parse().map_err(|_| DatasetError::MalformedValue {
        line,
        reason: format!("cannot parse {field:?} as a class id"),
    })
}

fn csv_to_dataset_error(err: csv::Error) -> DatasetError {
    match err.into_kind() {
        csv::ErrorKind::Io(io) => DatasetError::Io(io),
        other => DatasetError::MalformedValue {
            line: 0,
            reason: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.csv");
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.5, -0.5, 0.0]).unwrap();
        save_features_csv(&path, &m).unwrap();
        let back = load_features_csv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            load_features_csv(&path),
            Err(DatasetError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn csv_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "f0,f1\n1,NaN\n").unwrap();
        assert!(matches!(
            load_features_csv(&path),
            Err(DatasetError::NonFiniteValue { row: 0, col: 1 })
        ));
    }

    #[test]
    fn binary_zero_rows_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.drlf");
        let mut f = File::create(&path).unwrap();
        f.write_all(BINARY_MAGIC).unwrap();
        f.write_u16::<LittleEndian>(BINARY_VERSION).unwrap();
        f.write_u64::<LittleEndian>(0).unwrap();
        f.write_u64::<LittleEndian>(3).unwrap();
        drop(f);
        assert!(matches!(
            load_features_binary(&path),
            Err(DatasetError::EmptyDataset)
        ));
    }

    #[test]
    fn binary_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.drlf");
        std::fs::write(&path, b"NOPE\x01\x00").unwrap();
        assert!(matches!(
            load_features_binary(&path),
            Err(DatasetError::BadMagic)
        ));
        let mut f = File::create(&path).unwrap();
        f.write_all(BINARY_MAGIC).unwrap();
        f.write_u16::<LittleEndian>(9).unwrap();
        drop(f);
        assert!(matches!(
            load_features_binary(&path),
            Err(DatasetError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        // Write-then-read oracle on f32-representable values: the file and
        // the in-memory matrix both round-trip exactly.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.drlf");
        let values: Vec<f64> = (0..20)
            .map(|i| ((i as f32) * 0.37f32 - 2.5f32) as f64)
            .collect();
        let m = Matrix::new(5, 4, values).unwrap();
        save_features_binary(&path, &m).unwrap();
        let bytes_a = std::fs::read(&path).unwrap();
        let back = load_features_binary(&path).unwrap();
        assert_eq!(m, back);
        save_features_binary(&path, &back).unwrap();
        let bytes_b = std::fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn labels_per_line_and_csv_column() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("labels.txt");
        std::fs::write(&plain, "0\n1\n1\n0\n").unwrap();
        assert_eq!(load_labels(&plain).unwrap(), vec![0, 1, 1, 0]);

        let csv = dir.path().join("labels.csv");
        std::fs::write(&csv, "id,label\n7,1\n8,0\n").unwrap();
        assert_eq!(load_labels(&csv).unwrap(), vec![1, 0]);
    }
}
