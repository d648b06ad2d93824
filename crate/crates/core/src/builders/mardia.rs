use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_square, fail_on, to_table, CovarianceModel, RowMatrix};
use crate::error::{Error, Result, Violation};
use crate::joint::{permute_ordering, JointCovariance, LocationGrid, Ordering};
use crate::linalg;

const SYMMETRY_CONDITION_TOL: f64 = 1e-8;

/// Conditional variances: one matrix for every site, or one per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteMatrices {
    Uniform(RowMatrix),
    PerSite(Vec<RowMatrix>),
}

/// `beta_ij`, the weight of site `j` in the conditional mean of site `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborBeta {
    pub i: usize,
    pub j: usize,
    pub beta: RowMatrix,
}

/// Nearest-neighbour chain: `forward` is `beta_{i,i+1}`, `backward` is
/// `beta_{i+1,i}`, for every consecutive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainBetas {
    pub forward: RowMatrix,
    pub backward: RowMatrix,
}

/// Conditional specification of a Gaussian Markov random field:
/// `E[Y_i | Y_-i] = mu_i + Σ_j beta_ij (Y_j - mu_j)`, `Var[Y_i | Y_-i] = Gamma_i`.
/// Neighbourhoods are the pairs carrying a `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MardiaSpec {
    pub gammas: SiteMatrices,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<NeighborBeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainBetas>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<Vec<f64>>>,
}

/// Precision, covariance and mean of a Mardia field, all in one layout.
#[derive(Debug, Clone)]
pub struct MardiaModel {
    pub precision: DMatrix<f64>,
    pub covariance: JointCovariance,
    pub mean: DVector<f64>,
}

struct Resolved {
    gammas: Vec<DMatrix<f64>>,
    betas: BTreeMap<(usize, usize), DMatrix<f64>>,
    mus: Vec<DVector<f64>>,
}

impl MardiaSpec {
    pub const FAMILY: &'static str = "mardia";

    fn p(&self) -> usize {
        match &self.gammas {
            SiteMatrices::Uniform(m) => m.len(),
            SiteMatrices::PerSite(v) => v.first().map_or(0, Vec::len),
        }
    }

    /// Expands broadcasts to `n` sites, collecting every shape problem.
    fn resolve(&self, n: usize, out: &mut Vec<Violation>) -> Option<Resolved> {
        let p = self.p();
        let gammas: Vec<DMatrix<f64>> = match &self.gammas {
            SiteMatrices::Uniform(m) => {
                let g = check_square(m, "gammas", out)?;
                vec![g; n]
            }
            SiteMatrices::PerSite(v) => {
                if v.len() != n {
                    out.push(Violation::new(
                        "gammas",
                        format!("need {n} site matrices, got {}", v.len()),
                    ));
                    return None;
                }
                let parsed: Vec<_> = v
                    .iter()
                    .enumerate()
                    .map(|(i, m)| check_square(m, &format!("gammas[{}]", i + 1), out))
                    .collect();
                parsed.into_iter().collect::<Option<Vec<_>>>()?
            }
        };
        if gammas.iter().any(|g| g.nrows() != p) {
            out.push(Violation::new(
                "gammas",
                format!("all matrices must be {p}x{p}"),
            ));
            return None;
        }
        for (i, g) in gammas.iter().enumerate() {
            let sym = linalg::symmetry_error(g);
            if sym > 1e-12 || Cholesky::new(g.clone()).is_none() {
                out.push(Violation::new(
                    format!("gammas[{}]", i + 1),
                    "must be symmetric positive definite",
                ));
                if matches!(self.gammas, SiteMatrices::Uniform(_)) {
                    break;
                }
            }
        }

        let mut betas = BTreeMap::new();
        let shaped =
            |rows: &RowMatrix, field: String, out: &mut Vec<Violation>| match linalg::from_rows(
                rows,
            ) {
                Some(m) if m.nrows() == p && m.ncols() == p => Some(m),
                _ => {
                    out.push(Violation::new(field, format!("must be a {p}x{p} matrix")));
                    None
                }
            };
        if let Some(chain) = &self.chain {
            let fwd = shaped(&chain.forward, "chain.forward".into(), out);
            let bwd = shaped(&chain.backward, "chain.backward".into(), out);
            if let (Some(f), Some(b)) = (fwd, bwd) {
                for i in 1..n {
                    betas.insert((i, i + 1), f.clone());
                    betas.insert((i + 1, i), b.clone());
                }
            }
        }
        for (k, nb) in self.betas.iter().enumerate() {
            let field = format!("betas[{}]", k + 1);
            if nb.i == 0 || nb.j == 0 || nb.i > n || nb.j > n || nb.i == nb.j {
                out.push(Violation::new(
                    field,
                    format!(
                        "pair ({},{}) must be two distinct sites in [1,{n}]",
                        nb.i, nb.j
                    ),
                ));
                continue;
            }
            if let Some(m) = shaped(&nb.beta, field, out) {
                betas.insert((nb.i, nb.j), m);
            }
        }

        let mus = match &self.mus {
            None => vec![DVector::zeros(p); n],
            Some(v) if v.len() == n && v.iter().all(|m| m.len() == p) => {
                v.iter().map(|m| DVector::from_column_slice(m)).collect()
            }
            Some(_) => {
                out.push(Violation::new(
                    "mus",
                    format!("need {n} mean vectors of length {p}"),
                ));
                return None;
            }
        };
        Some(Resolved { gammas, betas, mus })
    }
}

/// Relative mismatch of `Gamma_i⁻¹ beta_ij` against `beta_jiᵀ Gamma_j⁻¹`.
fn condition_mismatch(
    gi_inv: &DMatrix<f64>,
    gj_inv: &DMatrix<f64>,
    beta_ij: &DMatrix<f64>,
    beta_ji: &DMatrix<f64>,
) -> f64 {
    let left = gi_inv * beta_ij;
    let right = beta_ji.transpose() * gj_inv;
    let scale = left.norm().max(right.norm());
    if scale == 0.0 {
        0.0
    } else {
        (left - right).norm() / scale
    }
}

/// Assembles `Q = blockdiag(Gamma_i⁻¹) · block(I, -beta_ij)` and its inverse.
///
/// Fails with `SymmetryConditionViolated` naming the worst site pair when
/// `Gamma_i⁻¹ beta_ij != beta_jiᵀ Gamma_j⁻¹` beyond `1e-8` relative, and with
/// `NotPD` when `Q` does not factor.
pub fn build_mardia_precision(
    grid: &LocationGrid,
    spec: &MardiaSpec,
    ordering: Ordering,
) -> Result<MardiaModel> {
    let n = grid.len();
    let mut violations = Vec::new();
    let resolved = spec.resolve(n, &mut violations);
    fail_on(violations)?;
    let Resolved { gammas, betas, mus } = resolved.expect("validated");
    let p = spec.p();

    let inverses: Vec<DMatrix<f64>> = gammas
        .iter()
        .map(|g| Cholesky::new(g.clone()).expect("checked SPD").inverse())
        .collect();

    let zero = DMatrix::zeros(p, p);
    let mut worst: Option<(usize, usize, f64)> = None;
    for &(i, j) in betas.keys() {
        if i > j && betas.contains_key(&(j, i)) {
            continue;
        }
        let bij = &betas[&(i, j)];
        let bji = betas.get(&(j, i)).unwrap_or(&zero);
        let mismatch = condition_mismatch(&inverses[i - 1], &inverses[j - 1], bij, bji);
        if worst.is_none_or(|w| mismatch > w.2) {
            worst = Some((i.min(j), i.max(j), mismatch));
        }
    }
    if let Some((i, j, mismatch)) = worst {
        if mismatch > SYMMETRY_CONDITION_TOL {
            return Err(Error::SymmetryConditionViolated { i, j, mismatch });
        }
    }

    // Location-major assembly: site blocks of size p.
    let mut q = DMatrix::zeros(n * p, n * p);
    for i in 0..n {
        q.view_mut((i * p, i * p), (p, p)).copy_from(&inverses[i]);
    }
    for (&(i, j), beta) in &betas {
        let block = -(&inverses[i - 1] * beta);
        q.view_mut(((i - 1) * p, (j - 1) * p), (p, p))
            .copy_from(&block);
    }
    linalg::symmetrize(&mut q);

    let chol = Cholesky::new(q.clone()).ok_or_else(|| {
        Error::NotPD("precision block(-beta) structure is not positive definite".into())
    })?;
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    let covariance = JointCovariance::new(cov, n, p, Ordering::LocationMajor)?;

    let mut mean = DVector::zeros(n * p);
    for (i, mu) in mus.iter().enumerate() {
        mean.rows_mut(i * p, p).copy_from(mu);
    }

    let (precision, mean) = if ordering == Ordering::LocationMajor {
        (q, mean)
    } else {
        let idx = |t: usize| {
            let (l, i) = ordering.unflat(t, n, p);
            Ordering::LocationMajor.flat(l, i, n, p)
        };
        (
            DMatrix::from_fn(n * p, n * p, |a, b| q[(idx(a), idx(b))]),
            DVector::from_fn(n * p, |a, _| mean[idx(a)]),
        )
    };
    Ok(MardiaModel {
        precision,
        covariance: permute_ordering(&covariance, ordering),
        mean,
    })
}

impl CovarianceModel for MardiaSpec {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn components(&self) -> usize {
        self.p()
    }

    fn validate(&self, grid: &LocationGrid) -> Vec<Violation> {
        let mut out = Vec::new();
        self.resolve(grid.len(), &mut out);
        out
    }

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance> {
        build_mardia_precision(grid, self, ordering).map(|m| m.covariance)
    }

    fn is_shifted(&self) -> bool {
        false
    }

    fn without_shift(&self) -> Box<dyn CovarianceModel> {
        Box::new(self.clone())
    }

    fn to_section(&self) -> toml::Table {
        to_table(self)
    }
}
