use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    check_positive, check_shifts, fail_on, finalize, shift_at, to_table, CovarianceModel, RowMatrix,
};
use crate::error::{Error, Result, Violation};
use crate::joint::{JointCovariance, LocationGrid, Ordering};
use crate::kernels::{matern, shifted_lag, MaternParams, Smoothness};

/// Parsimonious multivariate Matérn: shared `kappa`, cross smoothness
/// `(nu_l + nu_k) / 2`, co-located cross-correlations `betas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiMaternSpec {
    pub nus: Vec<Smoothness>,
    pub kappa: f64,
    pub betas: RowMatrix,
    pub marginal_sds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<Vec<crate::kernels::Shift>>,
}

impl MultiMaternSpec {
    pub const FAMILY: &'static str = "multivariate-matern";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = self.nus.len();
        if p == 0 {
            out.push(Violation::new("nus", "need at least one component"));
        }
        check_positive(self.kappa, "kappa", &mut out);
        if self.marginal_sds.len() != p {
            out.push(Violation::new(
                "marginal_sds",
                format!("must have {p} entries"),
            ));
        }
        for (l, s) in self.marginal_sds.iter().enumerate() {
            check_positive(*s, &format!("marginal_sds[{}]", l + 1), &mut out);
        }
        if self.betas.len() != p || self.betas.iter().any(|r| r.len() != p) {
            out.push(Violation::new("betas", format!("must be a {p}x{p} matrix")));
        } else {
            for l in 0..p {
                if self.betas[l][l] != 1.0 {
                    out.push(Violation::new(
                        format!("betas[{}][{}]", l + 1, l + 1),
                        "diagonal must be 1",
                    ));
                }
                for k in 0..l {
                    let b = self.betas[l][k];
                    if b != self.betas[k][l] {
                        out.push(Violation::new(
                            format!("betas[{}][{}]", l + 1, k + 1),
                            "must be symmetric",
                        ));
                    }
                    if !(b.abs() <= 1.0) {
                        out.push(Violation::new(
                            format!("betas[{}][{}]", l + 1, k + 1),
                            "|beta| must be <= 1",
                        ));
                    }
                }
            }
        }
        for l in 0..p {
            for k in 0..l {
                let coupled = self
                    .betas
                    .get(l)
                    .and_then(|r| r.get(k))
                    .is_none_or(|b| *b != 0.0);
                if coupled && Smoothness::midpoint(self.nus[l], self.nus[k]).is_err() {
                    out.push(Violation::new(
                        format!("nus[{}],nus[{}]", k + 1, l + 1),
                        "cross smoothness (nu_l + nu_k)/2 must be one of 0.5, 1.5, 2.5, inf",
                    ));
                }
            }
        }
        check_shifts(&self.shifts, p, "shifts", &mut out);
        out
    }
}

/// Auto blocks `sigma_l² M(h; nu_l, kappa)`, cross blocks
/// `sigma_l sigma_k beta_lk M(h - delta_lk; nu_lk, kappa)`; rejected with
/// `NotValidModel` when the assembled matrix is not PSD.
pub fn build_multi_matern(
    grid: &LocationGrid,
    spec: &MultiMaternSpec,
    ordering: Ordering,
) -> Result<JointCovariance> {
    fail_on(spec.violations())?;
    let (n, p) = (grid.len(), spec.nus.len());
    let c = grid.coords();
    let mut m = DMatrix::zeros(n * p, n * p);
    for l in 0..p {
        for k in l..p {
            let scale = spec.marginal_sds[l] * spec.marginal_sds[k] * spec.betas[l][k];
            if scale == 0.0 {
                continue;
            }
            let params = MaternParams {
                nu: Smoothness::midpoint(spec.nus[l], spec.nus[k])?,
                kappa: spec.kappa,
            };
            let shift = shift_at(&spec.shifts, l, k);
            for i in 0..n {
                for j in 0..n {
                    let v = scale * matern(shifted_lag(c[i], c[j], shift), &params);
                    let (a, b) = (ordering.flat(l, i, n, p), ordering.flat(k, j, n, p));
                    m[(a, b)] = v;
                    m[(b, a)] = v;
                }
            }
        }
    }
    finalize(m, n, p, ordering, |min_eig, max_eig| Error::NotValidModel {
        min_eig,
        max_eig,
    })
}

impl CovarianceModel for MultiMaternSpec {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn components(&self) -> usize {
        self.nus.len()
    }

    fn validate(&self, _grid: &LocationGrid) -> Vec<Violation> {
        self.violations()
    }

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance> {
        build_multi_matern(grid, self, ordering)
    }

    fn is_shifted(&self) -> bool {
        self.shifts.iter().flatten().any(|s| s.delta != 0.0)
    }

    fn without_shift(&self) -> Box<dyn CovarianceModel> {
        Box::new(MultiMaternSpec {
            shifts: Vec::new(),
            ..self.clone()
        })
    }

    fn to_section(&self) -> toml::Table {
        to_table(self)
    }
}
