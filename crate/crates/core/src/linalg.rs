use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};

pub(crate) fn matrix_from_rows(
    field: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(dim_err(
            field,
            format!("{nrows} rows"),
            format!("{} rows", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(dim_err(
                field,
                format!("{ncols} columns"),
                format!("{} columns in row {i}", row.len()),
            ));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "`{field}` contains non-finite entry {v}"
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn vector_from_slice(field: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(dim_err(
            field,
            format!("length {len}"),
            format!("length {}", v.len()),
        ));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "`{field}` contains non-finite entry {x}"
        )));
    }
    Ok(DVector::from_column_slice(v))
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Threshold below which a determinant counts as structurally zero:
/// `det_tol` times the Hadamard bound, the product of the row 2-norms.
pub(crate) fn det_threshold(m: &DMatrix<f64>, det_tol: f64) -> f64 {
    det_tol * (0..m.nrows()).map(|i| m.row(i).norm()).product::<f64>()
}

pub(crate) fn is_degenerate(det: f64, threshold: f64) -> bool {
    !det.is_finite() || det.abs() <= threshold
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Real eigenvalues of a general square matrix (imaginary parts below `tol`).
pub(crate) fn real_eigenvalues(m: &DMatrix<f64>, tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = m
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < tol)
        .map(|z| z.re)
        .collect();
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Orthonormal basis of the numerical null space of `m`.
pub(crate) fn null_space(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let n = m.ncols();
    // Pad to square so that the SVD exposes every right singular vector.
    let mut sq = DMatrix::zeros(m.nrows().max(n), n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let scale = svd.singular_values.max().max(1.0);
    (0..n)
        .filter(|&i| svd.singular_values[i] <= tol * scale)
        .map(|i| v_t.row(i).transpose())
        .collect()
}
