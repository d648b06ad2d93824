//! Small dense linear-algebra helpers shared by the builders, the sampler and
//! the kriging solver.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for whole-matrix symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Minimum eigenvalue allowed, relative to the largest one.
pub const PSD_TOL: f64 = 1e-8;

/// Ridge policy for Cholesky factorizations of numerically semi-definite
/// matrices: start at `1e-10 * trace / dim`, double on every retry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub enabled: bool,
    pub max_retries: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            max_retries: 3,
        }
    }
}

impl JitterPolicy {
    pub const DISABLED: JitterPolicy = JitterPolicy {
        enabled: false,
        max_retries: 0,
    };
}

/// A Cholesky factor together with the ridge that had to be added.
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub ridge: f64,
}

pub fn cholesky_jittered(m: &DMatrix<f64>, policy: JitterPolicy) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(Factor { chol, ridge: 0.0 });
    }
    if !policy.enabled {
        return Err(Error::NotPD("Cholesky factorization failed".into()));
    }
    let dim = m.nrows().max(1) as f64;
    let mut ridge = 1e-10 * m.trace() / dim;
    if !(ridge > 0.0) {
        return Err(Error::NotPD(
            "Cholesky factorization failed and trace is not positive".into(),
        ));
    }
    for _ in 0..policy.max_retries {
        let mut shifted = m.clone();
        for k in 0..m.nrows() {
            shifted[(k, k)] += ridge;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(Factor { chol, ridge });
        }
        ridge *= 2.0;
    }
    Err(Error::NotPD(format!(
        "Cholesky failed after {} jitter retries",
        policy.max_retries
    )))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |M_ab - M_ba| / max |M|`, zero for the zero matrix.
pub fn symmetry_error(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// True when `min_eig >= -PSD_TOL * max_eig`.
pub fn is_psd(min_eig: f64, max_eig: f64) -> bool {
    min_eig >= -PSD_TOL * max_eig.abs()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Row-major nested vectors into a dense matrix; rows must be equally long.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
