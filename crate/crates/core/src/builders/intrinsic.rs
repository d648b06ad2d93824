use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use super::{check_matern, check_square, fail_on, to_table, CovarianceModel, RowMatrix};
use crate::error::{Error, Result, Violation};
use crate::joint::{permute_ordering, JointCovariance, LocationGrid, Ordering};
use crate::kernels::{matern, MaternParams};
use crate::linalg;

/// Separable model: spatial correlation `H` times component covariance `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicSpec {
    pub rho: MaternParams,
    pub v: RowMatrix,
}

impl IntrinsicSpec {
    pub const FAMILY: &'static str = "intrinsic";

    fn component_cov(&self, out: &mut Vec<Violation>) -> Option<DMatrix<f64>> {
        let v = check_square(&self.v, "v", out)?;
        let scale = linalg::max_abs(&v).max(f64::MIN_POSITIVE);
        if (&v - v.transpose()).abs().max() > 1e-12 * scale {
            out.push(Violation::new("v", "must be symmetric"));
            return None;
        }
        if Cholesky::new(v.clone()).is_none() {
            out.push(Violation::new("v", "must be positive definite"));
            return None;
        }
        Some(v)
    }
}

/// `[M(s_i - s_j)]` over the grid.
pub fn spatial_correlation(grid: &LocationGrid, params: &MaternParams) -> DMatrix<f64> {
    let c = grid.coords();
    DMatrix::from_fn(c.len(), c.len(), |i, j| matern(c[i] - c[j], params))
}

/// Builds `H ⊗ V`, whose `(i, j)` site-pair block is `rho(s_i, s_j) V`.
pub fn build_intrinsic(
    grid: &LocationGrid,
    spec: &IntrinsicSpec,
    ordering: Ordering,
) -> Result<JointCovariance> {
    let mut violations = Vec::new();
    check_matern(&spec.rho, "rho", &mut violations);
    let v = spec.component_cov(&mut violations);
    fail_on(violations)?;
    let v = v.expect("validated");
    let h = spatial_correlation(grid, &spec.rho);
    // H ⊗ V puts the p x p site blocks on the outside: location-major layout.
    let sigma = JointCovariance::new(
        linalg::kron(&h, &v),
        grid.len(),
        v.nrows(),
        Ordering::LocationMajor,
    )?;
    Ok(permute_ordering(&sigma, ordering))
}

/// Log-determinant and inverse of `H ⊗ V` from the factors alone:
/// `log|H ⊗ V| = p log|H| + n log|V|` and `(H ⊗ V)⁻¹ = H⁻¹ ⊗ V⁻¹`.
pub fn kron_logdet_inverse(h: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let factor = |m: &DMatrix<f64>, name: &str| {
        if m.nrows() != m.ncols() {
            return Err(Error::NonSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        Cholesky::new(m.clone())
            .ok_or_else(|| Error::NotPD(format!("{name} is not positive definite")))
    };
    let ch = factor(h, "H")?;
    let cv = factor(v, "V")?;
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let (n, p) = (h.nrows() as f64, v.nrows() as f64);
    let total = p * logdet(&ch) + n * logdet(&cv);
    Ok((total, linalg::kron(&ch.inverse(), &cv.inverse())))
}

impl CovarianceModel for IntrinsicSpec {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn components(&self) -> usize {
        self.v.len()
    }

    fn validate(&self, _grid: &LocationGrid) -> Vec<Violation> {
        let mut out = Vec::new();
        check_matern(&self.rho, "rho", &mut out);
        self.component_cov(&mut out);
        out
    }

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance> {
        build_intrinsic(grid, self, ordering)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{asymmetry_index, get_block, CovBlockId};
    use approx::assert_relative_eq;

    fn spec(kappa: f64) -> IntrinsicSpec {
        IntrinsicSpec {
            rho: MaternParams::new(0.5, kappa).unwrap(),
            v: vec![vec![1.0, 0.3], vec![0.3, 2.0]],
        }
    }

    #[test]
    fn site_pair_block_is_scaled_v() {
        // exp(-kappa * 1) = 0.5 at unit separation
        let grid = LocationGrid::new(vec![0.0, 1.0]).unwrap();
        let s = build_intrinsic(&grid, &spec(2f64.ln()), Ordering::ComponentMajor).unwrap();
        let b = get_block(&s, CovBlockId::SitePair(1, 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.15, 0.15, 1.0]);
        assert!((b - expected).abs().max() < 1e-14);
    }

    #[test]
    fn identity_spatial_correlation_gives_block_diagonal() {
        // Sites 100 apart with kappa 10: correlation underflows to exactly 0.
        let grid = LocationGrid::new(vec![0.0, 100.0, 200.0]).unwrap();
        let s = build_intrinsic(&grid, &spec(10.0), Ordering::LocationMajor).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                let b = get_block(&s, CovBlockId::SitePair(i, j)).unwrap();
                if i == j {
                    assert_eq!(b, linalg::from_rows(&spec(1.0).v).unwrap());
                } else {
                    assert_eq!(b, DMatrix::zeros(2, 2));
                }
            }
        }
    }

    #[test]
    fn cross_blocks_are_symmetric() {
        let grid = LocationGrid::regular(0.0, 0.3, 15).unwrap();
        let s = build_intrinsic(&grid, &spec(1.0), Ordering::ComponentMajor).unwrap();
        let b = get_block(&s, CovBlockId::Cross(1, 2)).unwrap();
        assert!(asymmetry_index(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn rejects_indefinite_v() {
        let grid = LocationGrid::regular(0.0, 1.0, 3).unwrap();
        let mut bad = spec(1.0);
        bad.v = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            build_intrinsic(&grid, &bad, Ordering::ComponentMajor),
            Err(Error::InvalidSpec(_))
        ));
        bad.v = vec![vec![1.0, 0.2], vec![0.1, 1.0]];
        assert_eq!(bad.validate(&grid).len(), 1);
    }

    #[test]
    fn kron_identities() {
        let (ld, inv) =
            kron_logdet_inverse(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(ld, 0.0);
        assert_eq!(inv, DMatrix::<f64>::identity(6, 6));

        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let (ld, _) = kron_logdet_inverse(&h, &v).unwrap();
        // dense oracle: det of the 4x4 Kronecker product
        let dense = linalg::kron(&h, &v).determinant().ln();
        assert_relative_eq!(ld, dense, epsilon = 1e-12);
        assert_relative_eq!(ld, 2.0 * 0.75f64.ln() + 2.0 * 2f64.ln(), epsilon = 1e-12);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            kron_logdet_inverse(&bad, &v),
            Err(Error::NotPD(_))
        ));
    }
}
