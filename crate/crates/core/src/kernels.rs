//! Scalar correlation functions, smoothing kernels and the shifted lag.
//!
//! Lags are always `h = s_i - s_j` (row site minus column site).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matérn smoothness restricted to the closed-form half-integer cases and the
/// squared-exponential limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Smoothness {
    Half,
    ThreeHalves,
    FiveHalves,
    Gaussian,
}

impl Smoothness {
    pub fn value(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
            Smoothness::Gaussian => f64::INFINITY,
        }
    }

    /// `(nu_a + nu_b) / 2`, which must itself be a supported smoothness.
    pub fn midpoint(a: Smoothness, b: Smoothness) -> Result<Smoothness> {
        Smoothness::try_from(0.5 * (a.value() + b.value()))
    }
}

impl TryFrom<f64> for Smoothness {
    type Error = Error;

    fn try_from(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Smoothness::Half)
        } else if nu == 1.5 {
            Ok(Smoothness::ThreeHalves)
        } else if nu == 2.5 {
            Ok(Smoothness::FiveHalves)
        } else if nu == f64::INFINITY {
            Ok(Smoothness::Gaussian)
        } else {
            Err(Error::UnsupportedSmoothness(nu))
        }
    }
}

impl From<Smoothness> for f64 {
    fn from(s: Smoothness) -> f64 {
        s.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: Smoothness,
    /// Decay rate, inverse length units.
    pub kappa: f64,
}

impl MaternParams {
    pub fn new(nu: f64, kappa: f64) -> Result<Self> {
        let nu = Smoothness::try_from(nu)?;
        let params = Self { nu, kappa };
        params.check()?;
        Ok(params)
    }

    pub fn check(&self) -> Result<()> {
        if self.kappa > 0.0 && self.kappa.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(vec![crate::error::Violation::new(
                "kappa",
                format!("must be > 0, got {}", self.kappa),
            )]))
        }
    }
}

/// Matérn correlation `M(|h|; nu, kappa)`.
pub fn matern(h: f64, params: &MaternParams) -> f64 {
    let r = params.kappa * h.abs();
    match params.nu {
        Smoothness::Half => (-r).exp(),
        Smoothness::ThreeHalves => {
            let a = 3f64.sqrt() * r;
            (1.0 + a) * (-a).exp()
        }
        Smoothness::FiveHalves => {
            let a = 5f64.sqrt() * r;
            (1.0 + a + 5.0 * r * r / 3.0) * (-a).exp()
        }
        Smoothness::Gaussian => (-0.5 * r * r).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussKernelParams {
    pub bandwidth: f64,
    /// Component scale `sigma_l`; not part of [`gauss_kernel`].
    pub amplitude: f64,
}

/// Unit-mass Gaussian kernel `exp(-h²/(2b²)) / (b √(2π))`.
pub fn gauss_kernel(h: f64, params: &GaussKernelParams) -> f64 {
    let b = params.bandwidth;
    (-(h * h) / (2.0 * b * b)).exp() / (b * (2.0 * PI).sqrt())
}

/// Signed displacement applied to the directed lag of cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shift {
    pub delta: f64,
}

impl Shift {
    pub const ZERO: Shift = Shift { delta: 0.0 };

    pub fn new(delta: f64) -> Self {
        Self { delta }
    }
}

/// `(s_i - s_j) - delta`.
#[inline]
pub fn shifted_lag(s_i: f64, s_j: f64, shift: Shift) -> f64 {
    (s_i - s_j) - shift.delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::LocationGrid;
    use crate::linalg;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    const ALL: [Smoothness; 4] = [
        Smoothness::Half,
        Smoothness::ThreeHalves,
        Smoothness::FiveHalves,
        Smoothness::Gaussian,
    ];

    #[test]
    fn matern_is_one_at_origin() {
        for nu in ALL {
            assert_eq!(matern(0.0, &MaternParams { nu, kappa: 2.3 }), 1.0);
        }
    }

    #[test]
    fn matern_exponential_case() {
        let p = MaternParams::new(0.5, 1.0).unwrap();
        assert_relative_eq!(matern(1.0, &p), 0.367_879_441_171_442_33, epsilon = 1e-15);
        assert_relative_eq!(matern(-1.0, &p), matern(1.0, &p));
    }

    #[test]
    fn gaussian_limit_decays_to_zero() {
        let p = MaternParams::new(f64::INFINITY, 1.0).unwrap();
        let mut prev = 1.0;
        for k in 1..60 {
            let v = matern(k as f64 * 0.25, &p);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn matern_monotone_on_grid() {
        for nu in ALL {
            for kappa in [0.3, 1.0, 4.0] {
                let p = MaternParams { nu, kappa };
                let vals: Vec<f64> = (0..1000).map(|k| matern(k as f64 * 0.01, &p)).collect();
                assert!(vals.windows(2).all(|w| w[1] <= w[0]), "nu {:?}", nu);
                assert!(vals.iter().all(|v| *v > 0.0 || nu == Smoothness::Gaussian));
            }
        }
    }

    #[test]
    fn matern_matrix_is_psd() {
        let grid = LocationGrid::new(vec![-3.0, -2.9, -1.0, 0.0, 0.05, 0.7, 2.0, 5.5]).unwrap();
        for nu in ALL {
            let p = MaternParams { nu, kappa: 0.8 };
            let c = grid.coords();
            let m = DMatrix::from_fn(c.len(), c.len(), |i, j| matern(c[i] - c[j], &p));
            let (lo, hi) = linalg::eigen_extremes(&m);
            assert!(linalg::is_psd(lo, hi));
            assert_eq!(linalg::symmetry_error(&m), 0.0);
        }
    }

    #[test]
    fn rejects_unsupported_smoothness() {
        assert!(matches!(
            MaternParams::new(1.0, 1.0),
            Err(Error::UnsupportedSmoothness(_))
        ));
        assert!(MaternParams::new(0.5, -1.0).is_err());
        assert_eq!(
            Smoothness::midpoint(Smoothness::Half, Smoothness::FiveHalves).unwrap(),
            Smoothness::ThreeHalves
        );
        assert!(Smoothness::midpoint(Smoothness::Half, Smoothness::ThreeHalves).is_err());
    }

    #[test]
    fn gauss_kernel_values() {
        let k = GaussKernelParams {
            bandwidth: 1.0,
            amplitude: 1.0,
        };
        assert_relative_eq!(
            gauss_kernel(0.0, &k),
            0.398_942_280_401_432_7,
            epsilon = 1e-15
        );
        for h in [0.1, 0.7, 3.0] {
            assert_eq!(gauss_kernel(h, &k), gauss_kernel(-h, &k));
        }
    }

    #[test]
    fn gauss_kernel_integrates_to_one() {
        for b in [0.3, 1.0, 2.5] {
            let k = GaussKernelParams {
                bandwidth: b,
                amplitude: 1.0,
            };
            let step = b / 100.0;
            let m = 1600;
            let mut total = 0.0;
            for i in 0..=m {
                let h = -8.0 * b + i as f64 * step;
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                total += w * gauss_kernel(h, &k);
            }
            assert!((total * step - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn shifted_lag_examples() {
        assert_eq!(shifted_lag(1.0, 0.0, Shift::new(0.5)), 0.5);
        assert_eq!(shifted_lag(0.0, 1.0, Shift::new(0.5)), -1.5);
        assert_eq!(shifted_lag(2.0, 2.0, Shift::new(0.5)), -0.5);
        assert_eq!(
            shifted_lag(0.3, -1.2, Shift::ZERO),
            -shifted_lag(-1.2, 0.3, Shift::ZERO)
        );
    }
}
