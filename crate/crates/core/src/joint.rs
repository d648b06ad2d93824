//! Domain types for joint covariance matrices of `p` components observed at
//! `n` locations, block accessors for both layouts, and the permutation
//! between them.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Ordered 1D coordinates `s_1 < s_2 < ... < s_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationGrid {
    coords: Vec<f64>,
}

impl LocationGrid {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidGrid(
                "grid needs at least one location".into(),
            ));
        }
        if let Some(k) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "coordinate {} is not finite",
                k + 1
            )));
        }
        if let Some(k) = coords.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "coordinates must be strictly increasing (sites {} and {})",
                k + 1,
                k + 2
            )));
        }
        Ok(Self { coords })
    }

    /// `n` sites `start, start + step, ...`.
    pub fn regular(start: f64, step: f64, n: usize) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "step must be positive, got {step}"
            )));
        }
        Self::new((0..n).map(|i| start + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// 1-based access.
    pub fn coord(&self, site: usize) -> f64 {
        self.coords[site - 1]
    }

    /// Common spacing when the grid is uniform to `1e-9` relative, else `None`.
    /// A single-site grid has no spacing.
    pub fn spacing(&self) -> Option<f64> {
        if self.coords.len() < 2 {
            return None;
        }
        let h =
            (self.coords[self.coords.len() - 1] - self.coords[0]) / (self.coords.len() - 1) as f64;
        let uniform = self
            .coords
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
        uniform.then_some(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// `[Y_1(s_1)..Y_p(s_1), ..., Y_1(s_n)..Y_p(s_n)]`
    LocationMajor,
    /// `[Y_1(s_1)..Y_1(s_n), ..., Y_p(s_1)..Y_p(s_n)]`
    #[default]
    ComponentMajor,
}

impl Ordering {
    /// Flat 0-based index of component `l` at site `i` (both 0-based).
    #[inline]
    pub fn flat(self, l: usize, i: usize, n: usize, p: usize) -> usize {
        match self {
            Ordering::LocationMajor => i * p + l,
            Ordering::ComponentMajor => l * n + i,
        }
    }

    /// Inverse of [`Ordering::flat`]: `(component, site)`, 0-based.
    #[inline]
    pub fn unflat(self, k: usize, n: usize, p: usize) -> (usize, usize) {
        match self {
            Ordering::LocationMajor => (k % p, k / p),
            Ordering::ComponentMajor => (k / n, k % n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::LocationMajor => "location-major",
            Ordering::ComponentMajor => "component-major",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location-major" => Ok(Ordering::LocationMajor),
            "component-major" => Ok(Ordering::ComponentMajor),
            other => Err(Error::Parse {
                line: 0,
                column: 0,
                message: format!("unknown ordering '{other}'"),
            }),
        }
    }
}

/// Block taxonomy of the joint covariance. All indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovBlockId {
    /// `n x n` block `[cov(Y_l(s_a), Y_l(s_b))]`.
    SameComponentAuto(usize),
    /// `p x p` block `[cov(Y_l(s_i), Y_k(s_i))]`.
    SameLocationAuto(usize),
    /// `n x n` block `[cov(Y_l(s_a), Y_k(s_b))]`.
    Cross(usize, usize),
    /// `p x p` block `[cov(Y_l(s_i), Y_k(s_j))]`.
    SitePair(usize, usize),
}

impl fmt::Display for CovBlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovBlockId::SameComponentAuto(l) => write!(f, "component-auto({l})"),
            CovBlockId::SameLocationAuto(i) => write!(f, "location-auto({i})"),
            CovBlockId::Cross(l, k) => write!(f, "cross({l},{k})"),
            CovBlockId::SitePair(i, j) => write!(f, "site-pair({i},{j})"),
        }
    }
}

/// Dense `np x np` covariance of all components at all sites, tagged with
/// its layout. Symmetric, PSD and with a positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    entries: DMatrix<f64>,
    n: usize,
    p: usize,
    ordering: Ordering,
}

impl JointCovariance {
    /// Validates shape, whole-matrix symmetry, positive diagonal and PSD.
    pub fn new(entries: DMatrix<f64>, n: usize, p: usize, ordering: Ordering) -> Result<Self> {
        let sigma = Self::from_parts_unchecked(entries, n, p, ordering)?;
        sigma.validate()?;
        Ok(sigma)
    }

    /// Shape is checked; symmetry and definiteness are not.
    pub(crate) fn from_parts_unchecked(
        entries: DMatrix<f64>,
        n: usize,
        p: usize,
        ordering: Ordering,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidCovariance("n and p must be positive".into()));
        }
        if entries.nrows() != entries.ncols() {
            return Err(Error::NonSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if entries.nrows() != n * p {
            return Err(Error::InvalidCovariance(format!(
                "matrix is {}x{} but n*p = {}",
                entries.nrows(),
                entries.ncols(),
                n * p
            )));
        }
        Ok(Self {
            entries,
            n,
            p,
            ordering,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.entries;
        if let Some(k) = (0..m.nrows()).find(|&k| !(m[(k, k)] > 0.0)) {
            return Err(Error::InvalidCovariance(format!(
                "diagonal entry {} is not positive",
                k
            )));
        }
        let asym = linalg::symmetry_error(m);
        if asym > linalg::SYMMETRY_TOL {
            return Err(Error::InvalidCovariance(format!(
                "not symmetric (relative error {asym:e})"
            )));
        }
        let (min_eig, max_eig) = linalg::eigen_extremes(m);
        if !linalg::is_psd(min_eig, max_eig) {
            return Err(Error::InvalidCovariance(format!(
                "not positive semi-definite (min eigenvalue {min_eig:e}, max {max_eig:e})"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.n * self.p
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Flat 0-based index of component `l`, site `i` (both 1-based).
    pub fn index(&self, l: usize, i: usize) -> usize {
        self.ordering.flat(l - 1, i - 1, self.n, self.p)
    }

    /// `cov(Y_l(s_i), Y_k(s_j))`, 1-based.
    pub fn cov(&self, l: usize, i: usize, k: usize, j: usize) -> f64 {
        self.entries[(self.index(l, i), self.index(k, j))]
    }

    pub fn permute(&self, target: Ordering) -> JointCovariance {
        permute_ordering(self, target)
    }

    pub fn block(&self, id: CovBlockId) -> Result<DMatrix<f64>> {
        get_block(self, id)
    }

    /// Writes `<stem>.csv` (row-major, no header) and the `<stem>.meta`
    /// sidecar. Returns both paths.
    pub fn save(&self, csv_path: &Path) -> Result<Vec<PathBuf>> {
        let meta_path = csv_path.with_extension("meta");
        write_matrix_csv(csv_path, &self.entries)?;
        let mut meta = fs::File::create(&meta_path)?;
        write!(
            meta,
            "n={}\np={}\nordering={}\n",
            self.n, self.p, self.ordering
        )?;
        Ok(vec![csv_path.to_path_buf(), meta_path])
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let meta = fs::read_to_string(csv_path.with_extension("meta"))?;
        let (mut n, mut p, mut ordering) = (None, None, None);
        for (lineno, line) in meta.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: lineno + 1,
                column: 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
            match key.trim() {
                "n" => n = Some(value.trim().parse().map_err(|e| bad(format!("n: {e}")))?),
                "p" => p = Some(value.trim().parse().map_err(|e| bad(format!("p: {e}")))?),
                "ordering" => ordering = Some(value.trim().parse::<Ordering>()?),
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Parse {
            line: 0,
            column: 0,
            message: format!("metadata is missing '{k}'"),
        };
        let n = n.ok_or_else(|| missing("n"))?;
        let p = p.ok_or_else(|| missing("p"))?;
        let ordering = ordering.ok_or_else(|| missing("ordering"))?;
        let entries = read_matrix_csv(csv_path)?;
        JointCovariance::new(entries, n, p, ordering)
    }
}

pub(crate) fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 20);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&m[(i, j)].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub(crate) fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, v)| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    column: col + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    linalg::from_rows(&rows).ok_or_else(|| Error::Parse {
        line: 0,
        column: 0,
        message: "ragged matrix rows".into(),
    })
}

/// Re-indexes `sigma` into `target` layout, i.e. `P Σ Pᵀ` for the perfect
/// shuffle between the two layouts.
pub fn permute_ordering(sigma: &JointCovariance, target: Ordering) -> JointCovariance {
    if sigma.ordering == target {
        return sigma.clone();
    }
    let (n, p) = (sigma.n, sigma.p);
    let source: Vec<usize> = (0..n * p)
        .map(|t| {
            let (l, i) = target.unflat(t, n, p);
            sigma.ordering.flat(l, i, n, p)
        })
        .collect();
    let entries = DMatrix::from_fn(n * p, n * p, |a, b| sigma.entries[(source[a], source[b])]);
    JointCovariance {
        entries,
        n,
        p,
        ordering: target,
    }
}

pub fn get_block(sigma: &JointCovariance, id: CovBlockId) -> Result<DMatrix<f64>> {
    extract_block(&sigma.entries, sigma.n, sigma.p, sigma.ordering, id)
}

/// [`get_block`] on any `np x np` matrix laid out in `ordering`.
pub(crate) fn extract_block(
    m: &DMatrix<f64>,
    n: usize,
    p: usize,
    ordering: Ordering,
    id: CovBlockId,
) -> Result<DMatrix<f64>> {
    let check_component = |l: usize| {
        if l == 0 || l > p {
            Err(Error::IndexOutOfRange(format!(
                "component {l} not in [1,{p}]"
            )))
        } else {
            Ok(())
        }
    };
    let check_site = |i: usize| {
        if i == 0 || i > n {
            Err(Error::IndexOutOfRange(format!("site {i} not in [1,{n}]")))
        } else {
            Ok(())
        }
    };
    let at = |l: usize, i: usize, k: usize, j: usize| {
        m[(ordering.flat(l, i, n, p), ordering.flat(k, j, n, p))]
    };
    match id {
        CovBlockId::SameComponentAuto(l) => {
            extract_block(m, n, p, ordering, CovBlockId::Cross(l, l))
        }
        CovBlockId::SameLocationAuto(i) => {
            extract_block(m, n, p, ordering, CovBlockId::SitePair(i, i))
        }
        CovBlockId::Cross(l, k) => {
            check_component(l)?;
            check_component(k)?;
            Ok(DMatrix::from_fn(n, n, |a, b| at(l - 1, a, k - 1, b)))
        }
        CovBlockId::SitePair(i, j) => {
            check_site(i)?;
            check_site(j)?;
            Ok(DMatrix::from_fn(p, p, |a, b| at(a, i - 1, b, j - 1)))
        }
    }
}

/// `‖B − Bᵀ‖_F / max(‖B‖_F, 1e-300)`; zero iff `B` is symmetric.
pub fn asymmetry_index(block: &DMatrix<f64>) -> Result<f64> {
    if block.nrows() != block.ncols() {
        return Err(Error::NonSquare {
            rows: block.nrows(),
            cols: block.ncols(),
        });
    }
    let anti = block - block.transpose();
    Ok(anti.norm() / block.norm().max(1e-300))
}
