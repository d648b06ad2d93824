use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    check_matern, check_positive, check_shifts, fail_on, finalize, shift_at, to_table,
    CovarianceModel,
};
use crate::error::{Error, Result, Violation};
use crate::joint::{JointCovariance, LocationGrid, Ordering};
use crate::kernels::{gauss_kernel, matern, GaussKernelParams, MaternParams, Shift, Smoothness};

/// Kernel half-width of the quadrature window, in bandwidths.
const WINDOW_BANDWIDTHS: f64 = 4.0;
/// Refinement stops once no entry moves by more than this, relative to the
/// largest entry.
const REFINE_TOL: f64 = 1e-4;
const MAX_REFINEMENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMethod {
    #[default]
    Quadrature,
    ClosedForm,
}

/// Each component smooths one latent Gaussian process with its own Gaussian
/// kernel; cross terms see the lag shifted by `shifts[l][r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConvSpec {
    pub kernels: Vec<GaussKernelParams>,
    /// Correlation of the latent process.
    pub rho: MaternParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<Vec<Shift>>,
    #[serde(default)]
    pub method: ConvMethod,
}

impl KernelConvSpec {
    pub const FAMILY: &'static str = "kernel-convolution";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = self.kernels.len();
        if p == 0 {
            out.push(Violation::new("kernels", "need at least one component"));
        }
        for (l, k) in self.kernels.iter().enumerate() {
            check_positive(
                k.bandwidth,
                &format!("kernels[{}].bandwidth", l + 1),
                &mut out,
            );
            check_positive(
                k.amplitude,
                &format!("kernels[{}].amplitude", l + 1),
                &mut out,
            );
        }
        check_matern(&self.rho, "rho", &mut out);
        check_shifts(&self.shifts, p, "shifts", &mut out);
        if self.method == ConvMethod::ClosedForm && self.rho.nu != Smoothness::Gaussian {
            out.push(Violation::new(
                "method",
                "closed-form requires rho.nu = inf",
            ));
        }
        out
    }
}

/// `sigma_l sigma_r ∬ k_l(u) k_r(u') rho(h - u + u') du du'` in closed form
/// for Gaussian kernels and a squared-exponential latent correlation.
fn closed_form_entry(h: f64, kl: &GaussKernelParams, kr: &GaussKernelParams, kappa: f64) -> f64 {
    let total = kl.bandwidth.powi(2) + kr.bandwidth.powi(2) + 1.0 / (kappa * kappa);
    kl.amplitude * kr.amplitude * (-h * h / (2.0 * total)).exp() / (kappa * total.sqrt())
}

/// Weighted kernel samples at `u = k * step`, `|k| <= K`, trapezoid weights.
fn kernel_nodes(k: &GaussKernelParams, step: f64) -> Vec<f64> {
    let half = (WINDOW_BANDWIDTHS * k.bandwidth / step).ceil() as i64;
    (-half..=half)
        .map(|j| {
            let w = if j.abs() == half { 0.5 } else { 1.0 };
            w * step * gauss_kernel(j as f64 * step, k)
        })
        .collect()
}

/// Trapezoid evaluation of the double integral on a window centred on each
/// site, so the nodes are symmetric about zero and swapping the two sites
/// reproduces the same sum.
struct Quadrature {
    /// `g[d]` collects `Σ w k_l(u) w' k_r(u')` over node pairs with
    /// `u - u' = (d - offset) * step`.
    diff_weights: Vec<f64>,
    offset: i64,
    step: f64,
    rho: MaternParams,
    scale: f64,
}

impl Quadrature {
    fn new(kl: &GaussKernelParams, kr: &GaussKernelParams, rho: MaternParams, step: f64) -> Self {
        let a = kernel_nodes(kl, step);
        let b = kernel_nodes(kr, step);
        let (ha, hb) = ((a.len() / 2) as i64, (b.len() / 2) as i64);
        let mut diff_weights = vec![0.0; a.len() + b.len() - 1];
        for (i, wa) in a.iter().enumerate() {
            for (j, wb) in b.iter().enumerate() {
                // u - u' = (i - ha) - (j - hb), shifted to a non-negative index
                diff_weights[i + b.len() - 1 - j] += wa * wb;
            }
        }
        Self {
            diff_weights,
            offset: ha + hb,
            step,
            rho,
            scale: kl.amplitude * kr.amplitude,
        }
    }

    fn entry(&self, h: f64) -> f64 {
        let sum: f64 = self
            .diff_weights
            .iter()
            .enumerate()
            .map(|(d, w)| w * matern(h - (d as i64 - self.offset) as f64 * self.step, &self.rho))
            .sum();
        self.scale * sum
    }
}

fn assemble(
    grid: &LocationGrid,
    spec: &KernelConvSpec,
    ordering: Ordering,
    mut entry: impl FnMut(usize, usize, f64) -> f64,
) -> DMatrix<f64> {
    let (n, p) = (grid.len(), spec.kernels.len());
    let c = grid.coords();
    let mut m = DMatrix::zeros(n * p, n * p);
    for l in 0..p {
        for r in l..p {
            let delta = shift_at(&spec.shifts, l, r).delta;
            let mut cache: HashMap<u64, f64> = HashMap::new();
            for i in 0..n {
                for j in 0..n {
                    let h = c[i] - c[j] - delta;
                    let v = *cache.entry(h.to_bits()).or_insert_with(|| entry(l, r, h));
                    let (a, b) = (ordering.flat(l, i, n, p), ordering.flat(r, j, n, p));
                    m[(a, b)] = v;
                    m[(b, a)] = v;
                }
            }
        }
    }
    m
}

fn base_step(grid: &LocationGrid, spec: &KernelConvSpec) -> f64 {
    let c = grid.coords();
    if c.len() > 1 {
        (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64
    } else {
        spec.kernels
            .iter()
            .map(|k| k.bandwidth)
            .fold(f64::INFINITY, f64::min)
            / 10.0
    }
}

/// Builds the kernel-convolution joint covariance. `Quadrature` starts at the
/// grid spacing and halves the step until entries settle; `ClosedForm` needs
/// the Gaussian-limit latent correlation.
pub fn build_kernel_conv(
    grid: &LocationGrid,
    spec: &KernelConvSpec,
    method: ConvMethod,
    ordering: Ordering,
) -> Result<JointCovariance> {
    let mut violations = spec.violations();
    violations.retain(|v| v.field != "method");
    fail_on(violations)?;
    let (n, p) = (grid.len(), spec.kernels.len());
    let m = match method {
        ConvMethod::ClosedForm => {
            if spec.rho.nu != Smoothness::Gaussian {
                return Err(Error::ClosedFormUnavailable);
            }
            let m = assemble(grid, spec, ordering, |l, r, h| {
                closed_form_entry(h, &spec.kernels[l], &spec.kernels[r], spec.rho.kappa)
            });
            return finalize(m, n, p, ordering, |min_eig, max_eig| Error::NotValidModel {
                min_eig,
                max_eig,
            });
        }
        ConvMethod::Quadrature => {
            let mut step = base_step(grid, spec);
            let mut prev: Option<DMatrix<f64>> = None;
            let mut refinements = 0;
            loop {
                let rules: Vec<Vec<Quadrature>> = (0..p)
                    .map(|l| {
                        (0..p)
                            .map(|r| {
                                Quadrature::new(&spec.kernels[l], &spec.kernels[r], spec.rho, step)
                            })
                            .collect()
                    })
                    .collect();
                let m = assemble(grid, spec, ordering, |l, r, h| rules[l][r].entry(h));
                if let Some(prev) = prev {
                    let change = (&m - &prev).abs().max();
                    let scale = m.abs().max().max(f64::MIN_POSITIVE);
                    if change <= REFINE_TOL * scale || refinements >= MAX_REFINEMENTS {
                        break m;
                    }
                }
                prev = Some(m);
                step /= 2.0;
                refinements += 1;
            }
        }
    };
    finalize(m, n, p, ordering, |min_eig, max_eig| {
        Error::QuadratureDiverged { min_eig, max_eig }
    })
}

impl CovarianceModel for KernelConvSpec {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn components(&self) -> usize {
        self.kernels.len()
    }

    fn validate(&self, _grid: &LocationGrid) -> Vec<Violation> {
        self.violations()
    }

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance> {
        build_kernel_conv(grid, self, self.method, ordering)
    }

    fn is_shifted(&self) -> bool {
        self.shifts.iter().flatten().any(|s| s.delta != 0.0)
    }

    fn without_shift(&self) -> Box<dyn CovarianceModel> {
        Box::new(KernelConvSpec {
            shifts: Vec::new(),
            ..self.clone()
        })
    }

    fn to_section(&self) -> toml::Table {
        to_table(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::broadcast_shift;
    use crate::joint::{asymmetry_index, get_block, CovBlockId};

    fn spec(delta: f64, nu: f64) -> KernelConvSpec {
        KernelConvSpec {
            kernels: vec![
                GaussKernelParams {
                    bandwidth: 1.0,
                    amplitude: 1.0,
                },
                GaussKernelParams {
                    bandwidth: 0.6,
                    amplitude: 1.5,
                },
            ],
            rho: MaternParams::new(nu, 1.0).unwrap(),
            shifts: broadcast_shift(2, delta),
            method: ConvMethod::Quadrature,
        }
    }

    #[test]
    fn unshifted_cross_blocks_are_symmetric() {
        let grid = LocationGrid::regular(-2.0, 0.2, 20).unwrap();
        for nu in [0.5, 1.5, f64::INFINITY] {
            let s = build_kernel_conv(
                &grid,
                &spec(0.0, nu),
                ConvMethod::Quadrature,
                Ordering::ComponentMajor,
            )
            .unwrap();
            let b = get_block(&s, CovBlockId::Cross(1, 2)).unwrap();
            assert!(asymmetry_index(&b).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn shift_breaks_cross_symmetry() {
        let grid = LocationGrid::regular(-2.0, 0.2, 20).unwrap();
        let s = build_kernel_conv(
            &grid,
            &spec(0.5, 1.5),
            ConvMethod::Quadrature,
            Ordering::ComponentMajor,
        )
        .unwrap();
        let b = get_block(&s, CovBlockId::Cross(1, 2)).unwrap();
        assert!(asymmetry_index(&b).unwrap() > 0.01);
    }

    #[test]
    fn closed_form_needs_gaussian_latent() {
        let grid = LocationGrid::regular(0.0, 0.5, 5).unwrap();
        assert!(matches!(
            build_kernel_conv(
                &grid,
                &spec(0.0, 1.5),
                ConvMethod::ClosedForm,
                Ordering::ComponentMajor
            ),
            Err(Error::ClosedFormUnavailable)
        ));
        let mut s = spec(0.0, 1.5);
        s.method = ConvMethod::ClosedForm;
        assert_eq!(s.validate(&grid).len(), 1);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let grid = LocationGrid::regular(-5.0, 0.1, 101).unwrap();
        let mut sp = spec(0.3, f64::INFINITY);
        sp.kernels[1].bandwidth = 1.0;
        let q = build_kernel_conv(&grid, &sp, ConvMethod::Quadrature, Ordering::ComponentMajor)
            .unwrap();
        let c = build_kernel_conv(&grid, &sp, ConvMethod::ClosedForm, Ordering::ComponentMajor)
            .unwrap();
        let scale = c.matrix().abs().max();
        let diff = (q.matrix() - c.matrix()).abs().max();
        assert!(diff <= 1e-3 * scale, "diff {diff:e}");
    }

    #[test]
    fn closed_form_at_zero_lag() {
        // b_l = b_r = 1, kappa = 1: total variance 3, value 1/sqrt(3)
        let k = GaussKernelParams {
            bandwidth: 1.0,
            amplitude: 1.0,
        };
        assert!((closed_form_entry(0.0, &k, &k, 1.0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }
}
