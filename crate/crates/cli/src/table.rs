//! CSV input and output. Numbers are written with 17 significant digits so
//! that reading a file back reproduces every value bit for bit.

use std::path::Path;

use gammareg_core::{DMatrix, DVector, Dataset};

use crate::error::{CliError, CliResult};

/// A dataset read from CSV, with its predictor names.
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub data: Dataset,
    pub predictors: Vec<String>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a headed CSV; `response` names the y column, every other column is
/// a predictor.
pub fn read_dataset(path: &Path, response: &str) -> CliResult<NamedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let y_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| CliError::Input(format!("{}: no response column named {response:?}", path.display())))?;
    let predictors: Vec<String> =
        headers.iter().enumerate().filter(|(j, _)| *j != y_col).map(|(_, h)| h.clone()).collect();
    if predictors.is_empty() {
        return Err(CliError::Input(format!("{}: no predictor columns", path.display())));
    }

    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != headers.len() {
            return Err(CliError::Input(format!(
                "{}: data row {row} has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: data row {row}, column {:?}: {cell:?} is not a number",
                    path.display(),
                    headers[j]
                ))
            })?;
            if j == y_col {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len();
    let p = predictors.len();
    let data = Dataset::new(DMatrix::from_row_slice(n, p, &x), DVector::from_vec(y))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(NamedDataset { data, predictors })
}

/// Writes `y` as the first column followed by `x1..xp`.
pub fn write_dataset(path: &Path, data: &Dataset, response: &str) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![response.to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![fmt_f64(data.y()[i])];
        row.extend((0..data.p()).map(|j| fmt_f64(data.x()[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of preformatted cells.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, -0.0] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn response_column_may_sit_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "a,target,b\n1,10,2\n3,20,4e0\n5,30,6\n").unwrap();
        let d = read_dataset(&path, "target").unwrap();
        assert_eq!(d.predictors, vec!["a", "b"]);
        assert_eq!(d.data.y().as_slice(), &[10.0, 20.0, 30.0]);
        assert_eq!(d.data.x()[(1, 1)], 4.0);
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "y,x1\n1,2\n3,abc\n").unwrap();
        let err = read_dataset(&path, "y").unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("\"x1\""), "{err}");
        let err = read_dataset(&path, "z").unwrap_err();
        assert!(matches!(err, CliError::Input(ref m) if m.contains("\"z\"")));
    }
}
