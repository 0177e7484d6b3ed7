//! Dense linear-algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which an inverse is reported as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Default safety factor of the numerical-rank tolerance.
pub const RANK_SAFETY: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct SymInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
}

impl SymInverse {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }
}

/// Inverse of a symmetric positive-definite matrix through its eigendecomposition.
pub fn sym_inverse(a: &DMatrix<f64>) -> Result<SymInverse> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!("cannot invert a {}x{} matrix", n, a.ncols())));
    }
    if n == 0 {
        return Ok(SymInverse { inverse: DMatrix::zeros(0, 0), condition: 1.0 });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to invert has non-finite entries".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if max == 0.0 || min <= max * n as f64 * f64::EPSILON {
        return Err(Error::Singular(format!("eigenvalues span [{min:e}, {max:e}]")));
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let inverse = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok(SymInverse { inverse, condition: max / min })
}

/// Thin singular value decomposition `A = U diag(s) V^T` with `s` descending.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Self { u: DMatrix::zeros(rows, 0), singular_values: DVector::zeros(0), v: DMatrix::zeros(cols, 0) };
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("left factor requested");
        let v_t = svd.v_t.expect("right factor requested");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        Self {
            u: DMatrix::from_fn(rows, order.len(), |r, c| u[(r, order[c])]),
            singular_values: DVector::from_fn(order.len(), |i, _| s[order[i]]),
            v: DMatrix::from_fn(cols, order.len(), |r, c| v_t[(order[c], r)]),
        }
    }

    pub fn rank_tolerance(&self, safety: f64) -> f64 {
        let max = self.singular_values.iter().copied().fold(0.0, f64::max);
        max * self.u.nrows().max(self.v.nrows()) as f64 * f64::EPSILON * safety
    }

    pub fn rank(&self, safety: f64) -> usize {
        let tol = self.rank_tolerance(safety);
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }
}

/// `|| (I - P) A ||_F` where `P` projects onto the numerical column space of `basis`.
pub fn residual_outside_range(a: &DMatrix<f64>, basis: &DMatrix<f64>, safety: f64) -> f64 {
    let svd = SvdFactors::new(basis);
    let rank = svd.rank(safety);
    let q = svd.u.columns(0, rank);
    let projected = &q * (q.transpose() * a);
    (a - projected).norm()
}

/// Format a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Row-major, space-separated dump, one row per line.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt17(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidDataset(format!("bad matrix entry `{t}`: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidDataset("matrix rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}
