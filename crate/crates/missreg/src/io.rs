//! CSV and JSON input/output.
//!
//! Matrices are written row-major with a `c0,c1,...` header and 17 significant
//! digits, which round-trips `f64` exactly through text.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::{DesignMatrix, MaskedResponse};
use crate::error::{Error, Result};

/// Reads a numeric CSV matrix. Cells equal to `na_token` (when given) are
/// flagged unobserved and stored as 0; any other non-numeric cell is an error.
pub fn read_matrix(
    path: &Path,
    na_token: Option<&str>,
    has_header: bool,
) -> Result<(Array2<f64>, Array2<bool>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut mask: Vec<Vec<bool>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        let mut row_mask = Vec::with_capacity(record.len());
        for cell in record.iter() {
            if let Some(na) = na_token {
                if cell == na {
                    row.push(0.0);
                    row_mask.push(false);
                    continue;
                }
            }
            let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                path: path.display().to_string(),
                line: line + 1 + usize::from(has_header),
                cell: cell.to_string(),
            })?;
            row.push(v);
            row_mask.push(true);
        }
        rows.push(row);
        mask.push(row_mask);
    }
    if rows.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{}: ragged rows",
            path.display()
        )));
    }
    let nrows = rows.len();
    let values = Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .expect("shape checked above");
    let observed = Array2::from_shape_vec((nrows, ncols), mask.into_iter().flatten().collect())
        .expect("shape checked above");
    Ok((values, observed))
}

fn format_cell(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Writes a matrix with header `c0,c1,...`.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    write_header(&mut writer, m.ncols())?;
    for row in m.rows() {
        writer.write_record(row.iter().map(|&v| format_cell(v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a matrix with unobserved cells replaced by `na_token`.
pub fn write_masked_matrix(
    path: &Path,
    values: &Array2<f64>,
    observed: &Array2<bool>,
    na_token: &str,
) -> Result<()> {
    if values.dim() != observed.dim() {
        return Err(Error::DimensionMismatch(
            "mask does not conform to matrix".into(),
        ));
    }
    let mut writer = csv::Writer::from_path(path)?;
    write_header(&mut writer, values.ncols())?;
    for i in 0..values.nrows() {
        let record: Vec<String> = (0..values.ncols())
            .map(|j| {
                if observed[[i, j]] {
                    format_cell(values[[i, j]])
                } else {
                    na_token.to_string()
                }
            })
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_vector(path: &Path, v: &Array1<f64>) -> Result<()> {
    let m = v
        .clone()
        .into_shape_with_order((1, v.len()))
        .expect("vector reshape");
    write_matrix(path, &m)
}

fn write_header<W: std::io::Write>(writer: &mut csv::Writer<W>, ncols: usize) -> Result<()> {
    writer.write_record((0..ncols).map(|j| format!("c{j}")))?;
    Ok(())
}

/// Loads a predictor file and a response file, standardizes the predictors,
/// and builds the masked response. Row counts must agree; the predictor file
/// must have no missing cells.
pub fn load_dataset(
    x_path: &Path,
    z_path: &Path,
    na_token: &str,
    has_header: bool,
) -> Result<(DesignMatrix, MaskedResponse)> {
    let (x_raw, _) = read_matrix(x_path, None, has_header)?;
    let (z_raw, z_mask) = read_matrix(z_path, Some(na_token), has_header)?;
    if x_raw.nrows() != z_raw.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows but {} has {}",
            x_path.display(),
            x_raw.nrows(),
            z_path.display(),
            z_raw.nrows()
        )));
    }
    let x = DesignMatrix::standardize(x_raw)?;
    let z = MaskedResponse::from_observations(z_raw, z_mask)?;
    Ok((x, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use std::fs;

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = arr2(&[
            [1.0 / 3.0, -2.718281828459045e-10],
            [std::f64::consts::PI, 4.9e301],
        ]);
        write_matrix(&path, &m).unwrap();
        let (read, observed) = read_matrix(&path, None, true).unwrap();
        assert_eq!(read, m);
        assert!(observed.iter().all(|&b| b));
    }

    #[test]
    fn masked_roundtrip_preserves_values_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        let values = arr2(&[[0.123456789123456789, 0.0], [-5.5, 7.25]]);
        let observed = arr2(&[[true, false], [true, true]]);
        write_masked_matrix(&path, &values, &observed, "NA").unwrap();
        let (read, mask) = read_matrix(&path, Some("NA"), true).unwrap();
        assert_eq!(mask, observed);
        assert_eq!(read[[0, 0]], values[[0, 0]]);
        assert_eq!(read[[0, 1]], 0.0);
        assert_eq!(read[[1, 0]], -5.5);
        assert_eq!(read[[1, 1]], 7.25);
    }

    #[test]
    fn bad_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1.0,2.0\n3.0,oops\n").unwrap();
        let err = read_matrix(&path, Some("NA"), false).unwrap_err();
        match err {
            Error::ParseCell { line, cell, .. } => {
                assert_eq!(line, 2);
                assert_eq!(cell, "oops");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_dataset_checks_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let x_path = dir.path().join("x.csv");
        let z_path = dir.path().join("z.csv");
        fs::write(&x_path, "1.0\n2.0\n3.0\n").unwrap();
        fs::write(&z_path, "1.0\n2.0\n").unwrap();
        assert!(matches!(
            load_dataset(&x_path, &z_path, "NA", false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn load_dataset_builds_centered_types() {
        let dir = tempfile::tempdir().unwrap();
        let x_path = dir.path().join("x.csv");
        let z_path = dir.path().join("z.csv");
        fs::write(&x_path, "1.0\n2.0\n3.0\n").unwrap();
        fs::write(&z_path, "2.0\nNA\n4.0\n").unwrap();
        let (x, z) = load_dataset(&x_path, &z_path, "NA", false).unwrap();
        assert_eq!(x.n(), 3);
        assert!((z.rho_hat()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(z.values()[[1, 0]], 0.0);
        assert_eq!(z.values()[[0, 0]], -1.0);
        assert_eq!(z.values()[[2, 0]], 1.0);
    }
}
