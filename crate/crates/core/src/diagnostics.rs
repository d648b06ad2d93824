//! Correlation normalization, the auto/cross-correlation property checks,
//! and the replicate-based empirical correlation estimator.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::joint::{
    asymmetry_index, extract_block, write_matrix_csv, CovBlockId, JointCovariance, Ordering,
};
use crate::simulate::FieldSample;

/// Slack allowed on `|corr| <= 1` and on symmetry checks.
pub const BOUND_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    entries: DMatrix<f64>,
    n: usize,
    p: usize,
    ordering: Ordering,
}

impl CorrMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    pub fn block(&self, id: CovBlockId) -> Result<DMatrix<f64>> {
        extract_block(&self.entries, self.n, self.p, self.ordering, id)
    }

    /// Writes the matrix CSV plus the `.meta` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<Vec<PathBuf>> {
        let meta_path = csv_path.with_extension("meta");
        write_matrix_csv(csv_path, &self.entries)?;
        fs::write(
            &meta_path,
            format!("n={}\np={}\nordering={}\n", self.n, self.p, self.ordering),
        )?;
        Ok(vec![csv_path.to_path_buf(), meta_path])
    }
}

fn normalize(cov: &DMatrix<f64>, n: usize, p: usize, ordering: Ordering) -> Result<CorrMatrix> {
    let d = cov.nrows();
    if let Some(k) = (0..d).find(|&k| !(cov[(k, k)] > 0.0)) {
        return Err(Error::ZeroVariance(k));
    }
    let sd: Vec<f64> = (0..d).map(|k| cov[(k, k)].sqrt()).collect();
    let mut entries = DMatrix::from_fn(d, d, |a, b| cov[(a, b)] / (sd[a] * sd[b]));
    for k in 0..d {
        entries[(k, k)] = 1.0;
    }
    Ok(CorrMatrix {
        entries,
        n,
        p,
        ordering,
    })
}

/// `Corr(a, b) = C(a, b) / sqrt(C(a, a) C(b, b))` with an exact unit diagonal.
pub fn cov_to_corr(sigma: &JointCovariance) -> Result<CorrMatrix> {
    normalize(sigma.matrix(), sigma.n(), sigma.p(), sigma.ordering())
}

/// Where a check saw its worst value.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub block: CovBlockId,
    /// 1-based row and column within the block.
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub witness: Option<Witness>,
}

/// Per cross block: asymmetry and whether some off-site entry exceeds the
/// co-located correlation in magnitude. Neither is a pass/fail property.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossObservation {
    pub l: usize,
    pub k: usize,
    pub asymmetry_index: f64,
    pub max_abs: f64,
    pub max_colocated_abs: f64,
}

impl CrossObservation {
    pub fn off_site_exceeds_colocated(&self) -> bool {
        self.max_abs > self.max_colocated_abs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    pub cross: Vec<CrossObservation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn max_cross_asymmetry(&self) -> f64 {
        self.cross
            .iter()
            .map(|c| c.asymmetry_index)
            .fold(0.0, f64::max)
    }

    /// `check,passed,block,row,col,value` rows followed by nothing else;
    /// cross observations go to [`PropertyReport::cross_csv`].
    pub fn checks_csv(&self) -> String {
        let mut out = String::from("check,passed,block,row,col,value\n");
        for c in &self.checks {
            match &c.witness {
                Some(w) => out.push_str(&format!(
                    "{},{},\"{}\",{},{},{}\n",
                    c.name, c.passed, w.block, w.row, w.col, w.value
                )),
                None => out.push_str(&format!("{},{},,,,\n", c.name, c.passed)),
            }
        }
        out
    }

    pub fn cross_csv(&self) -> String {
        let mut out = String::from(
            "l,k,asymmetry_index,max_abs,max_colocated_abs,off_site_exceeds_colocated\n",
        );
        for c in &self.cross {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.l,
                c.k,
                c.asymmetry_index,
                c.max_abs,
                c.max_colocated_abs,
                c.off_site_exceeds_colocated()
            ));
        }
        out
    }
}

/// Tracks the largest `score` seen and where.
struct Worst(Option<Witness>, f64);

impl Worst {
    fn new() -> Self {
        Worst(None, f64::NEG_INFINITY)
    }

    fn offer(&mut self, score: f64, block: CovBlockId, row: usize, col: usize, value: f64) {
        if score > self.1 {
            self.1 = score;
            self.0 = Some(Witness {
                block,
                row,
                col,
                value,
            });
        }
    }
}

/// Runs the auto-correlation and global checks and records cross-block
/// observations. Cross blocks are never required to be symmetric.
pub fn check_properties(corr: &CorrMatrix) -> Result<PropertyReport> {
    let (n, p) = (corr.n, corr.p);
    let mut auto_sym = Worst::new();
    let mut auto_bound = Worst::new();
    let mut unit_diag = Worst::new();
    for l in 1..=p {
        let id = CovBlockId::SameComponentAuto(l);
        let b = corr.block(id)?;
        for i in 0..n {
            unit_diag.offer((b[(i, i)] - 1.0).abs(), id, i + 1, i + 1, b[(i, i)]);
            for j in 0..n {
                auto_sym.offer((b[(i, j)] - b[(j, i)]).abs(), id, i + 1, j + 1, b[(i, j)]);
                if i != j {
                    auto_bound.offer(b[(i, j)].abs(), id, i + 1, j + 1, b[(i, j)]);
                }
            }
        }
    }
    for i in 1..=n {
        let id = CovBlockId::SameLocationAuto(i);
        let b = corr.block(id)?;
        for a in 0..p {
            for c in 0..p {
                auto_sym.offer((b[(a, c)] - b[(c, a)]).abs(), id, a + 1, c + 1, b[(a, c)]);
            }
        }
    }

    let mut global = Worst::new();
    let mut whole_sym = Worst::new();
    let mut cross = Vec::new();
    for l in 1..=p {
        for k in 1..=p {
            let id = CovBlockId::Cross(l, k);
            let b = corr.block(id)?;
            for i in 0..n {
                for j in 0..n {
                    global.offer(b[(i, j)].abs(), id, i + 1, j + 1, b[(i, j)]);
                }
            }
            if l < k {
                let other = corr.block(CovBlockId::Cross(k, l))?;
                for i in 0..n {
                    for j in 0..n {
                        whole_sym.offer(
                            (b[(i, j)] - other[(j, i)]).abs(),
                            id,
                            i + 1,
                            j + 1,
                            b[(i, j)],
                        );
                    }
                }
                cross.push(CrossObservation {
                    l,
                    k,
                    asymmetry_index: asymmetry_index(&b)?,
                    max_abs: b.abs().max(),
                    max_colocated_abs: b.diagonal().abs().max(),
                });
            }
        }
    }

    let verdict = |name, worst: Worst, limit: f64| PropertyCheck {
        name,
        passed: worst.1 <= limit,
        witness: worst.0,
    };
    let checks = vec![
        verdict("auto-symmetric", auto_sym, BOUND_TOL),
        verdict("auto-off-diagonal-bound", auto_bound, 1.0 + BOUND_TOL),
        verdict("global-bound", global, 1.0 + BOUND_TOL),
        verdict("unit-diagonal", unit_diag, BOUND_TOL),
        verdict("whole-symmetric", whole_sym, BOUND_TOL),
    ];
    Ok(PropertyReport { checks, cross })
}

/// Single-pass mean / co-moment accumulator (Welford update, Chan merge).
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            comoment: DMatrix::zeros(dim, dim),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean.axpy(1.0 / self.count as f64, &delta, 1.0);
        let after = x - &self.mean;
        self.comoment.ger(1.0, &delta, &after, 1.0);
    }

    /// Combines two partitions; associative, so partitions may be reduced in
    /// any grouping.
    pub fn merge(mut self, other: &MomentAccumulator) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        let delta = &other.mean - &self.mean;
        self.comoment += &other.comoment;
        self.comoment.ger(na * nb / total, &delta, &delta, 1.0);
        self.mean.axpy(nb / total, &delta, 1.0);
        self.count += other.count;
        self
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased covariance (divides by `m - 1`).
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientReplicates(self.count));
        }
        Ok(&self.comoment / (self.count - 1) as f64)
    }
}

const CHUNK: usize = 256;

/// Sample correlation across independent replicates of the whole field,
/// component-major.
pub fn empirical_correlation(samples: &[FieldSample], n: usize, p: usize) -> Result<CorrMatrix> {
    if samples.len() < 2 {
        return Err(Error::InsufficientReplicates(samples.len()));
    }
    if let Some(s) = samples.iter().find(|s| s.n() != n || s.p() != p) {
        return Err(Error::LengthMismatch(s.n() * s.p(), n * p));
    }
    let ordering = Ordering::ComponentMajor;
    let partials: Vec<MomentAccumulator> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = MomentAccumulator::new(n * p);
            for s in chunk {
                acc.push(&s.to_vector(ordering));
            }
            acc
        })
        .collect();
    let acc = partials
        .iter()
        .fold(MomentAccumulator::new(n * p), |a, b| a.merge(b));
    normalize(&acc.covariance()?, n, p, ordering)
}

/// Restricts the `(l, k)` block (auto when `l == k`) to each 1-based
/// inclusive strip of sites, rows and columns alike.
pub fn export_corr_strips(
    corr: &CorrMatrix,
    strips: &[(usize, usize)],
    pair: (usize, usize),
) -> Result<Vec<DMatrix<f64>>> {
    let n = corr.n;
    for (k, &(a, b)) in strips.iter().enumerate() {
        if a == 0 || b > n || a > b {
            return Err(Error::IndexOutOfRange(format!(
                "strip {} = [{a},{b}] not within [1,{n}]",
                k + 1
            )));
        }
        if strips[..k].iter().any(|&(c, d)| a <= d && c <= b) {
            return Err(Error::IndexOutOfRange(format!(
                "strip {} = [{a},{b}] overlaps another strip",
                k + 1
            )));
        }
    }
    let block = corr.block(CovBlockId::Cross(pair.0, pair.1))?;
    Ok(strips
        .iter()
        .map(|&(a, b)| {
            block
                .view((a - 1, a - 1), (b - a + 1, b - a + 1))
                .clone_owned()
        })
        .collect())
}

/// Writes strip matrices as `<l>-<k>_<strip>.csv` (strip index 1-based).
pub fn write_strips(
    dir: &Path,
    pair: (usize, usize),
    strips: &[DMatrix<f64>],
) -> Result<Vec<PathBuf>> {
    strips
        .iter()
        .enumerate()
        .map(|(s, m)| {
            let path = dir.join(format!("{}-{}_{}.csv", pair.0, pair.1, s + 1));
            write_matrix_csv(&path, m)?;
            Ok(path)
        })
        .collect()
}
