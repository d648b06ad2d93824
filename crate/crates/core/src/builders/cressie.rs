use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_matern, check_positive, fail_on, finalize_jittered, to_table, CovarianceModel};
use crate::error::{Error, Result, Violation};
use crate::joint::{permute_ordering, JointCovariance, LocationGrid, Ordering};
use crate::kernels::{matern, MaternParams, Shift};

/// Width beyond the shift, in ranges, past which `b` is below `1e-15`.
const COUPLING_REACH: f64 = 6.0;

/// Matérn covariance with a marginal variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCov {
    pub correlation: MaternParams,
    pub variance: f64,
}

impl FieldCov {
    fn matrix(&self, coords: &[f64]) -> DMatrix<f64> {
        let n = coords.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.variance * matern(coords[i] - coords[j], &self.correlation)
        })
    }
}

/// `b_qr(s, v) = gain · exp(-((s - v) - shift)² / range²)`: how field `r`
/// enters the conditional mean of field `q > r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingFn {
    pub q: usize,
    pub r: usize,
    pub gain: f64,
    pub range: f64,
    #[serde(default)]
    pub shift: Shift,
}

impl CouplingFn {
    #[inline]
    pub fn eval(&self, s: f64, v: f64) -> f64 {
        let d = (s - v) - self.shift.delta;
        self.gain * (-(d * d) / (self.range * self.range)).exp()
    }

    /// Distance beyond which `b` is numerically zero.
    fn reach(&self) -> f64 {
        if self.gain == 0.0 {
            0.0
        } else {
            self.shift.delta.abs() + COUPLING_REACH * self.range
        }
    }
}

/// Where the integral operators `∫ b_qr(s, v) Y_r(v) dv` are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    /// The grid extended at its own spacing far enough that every `b` has
    /// decayed, i.e. the integral is over the whole line.
    #[default]
    Extended,
    /// Only the observation grid; cross blocks pick up boundary asymmetry
    /// even without a shift.
    Domain,
}

/// Sequential conditional model: field 1 has covariance `c11`; field `q`
/// given fields `< q` has mean `Σ_r ∫ b_qr Y_r` and covariance
/// `conditional[q - 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CressieSpec {
    pub c11: FieldCov,
    pub conditional: Vec<FieldCov>,
    #[serde(default)]
    pub couplings: Vec<CouplingFn>,
    #[serde(default)]
    pub support: Support,
}

impl CressieSpec {
    pub const FAMILY: &'static str = "cressie";

    pub fn p(&self) -> usize {
        1 + self.conditional.len()
    }

    fn violations(&self, grid: &LocationGrid) -> Vec<Violation> {
        let mut out = Vec::new();
        let p = self.p();
        if !(2..=3).contains(&p) {
            out.push(Violation::new(
                "conditional",
                format!("supports p = 2 or 3, got p = {p}"),
            ));
        }
        check_matern(&self.c11.correlation, "c11.correlation", &mut out);
        check_positive(self.c11.variance, "c11.variance", &mut out);
        for (k, c) in self.conditional.iter().enumerate() {
            check_matern(
                &c.correlation,
                &format!("conditional[{}].correlation", k + 1),
                &mut out,
            );
            check_positive(
                c.variance,
                &format!("conditional[{}].variance", k + 1),
                &mut out,
            );
        }
        for (k, b) in self.couplings.iter().enumerate() {
            let field = format!("couplings[{}]", k + 1);
            if !(b.r >= 1 && b.r < b.q && b.q <= p) {
                out.push(Violation::new(
                    &field,
                    format!("need 1 <= r < q <= {p}, got q = {}, r = {}", b.q, b.r),
                ));
            }
            check_positive(b.range, &format!("{field}.range"), &mut out);
            if !b.gain.is_finite() || !b.shift.delta.is_finite() {
                out.push(Violation::new(&field, "gain and shift must be finite"));
            }
            if self.couplings[..k].iter().any(|o| o.q == b.q && o.r == b.r) {
                out.push(Violation::new(
                    &field,
                    format!("duplicate coupling ({},{})", b.q, b.r),
                ));
            }
        }
        if grid.len() > 1 && grid.spacing().is_none() {
            out.push(Violation::new("grid", "requires uniform spacing"));
        }
        out
    }

    fn coupling(&self, q: usize, r: usize) -> Option<&CouplingFn> {
        self.couplings.iter().find(|b| b.q == q && b.r == r)
    }

    /// Sites added on each side of the grid so that every field at an
    /// original site sees its parents over the full reach of `b`.
    fn extension_sites(&self, spacing: f64) -> usize {
        if self.support == Support::Domain {
            return 0;
        }
        let reach: f64 = (2..=self.p())
            .map(|q| {
                self.couplings
                    .iter()
                    .filter(|b| b.q == q)
                    .map(CouplingFn::reach)
                    .fold(0.0, f64::max)
            })
            .sum();
        (reach / spacing).ceil() as usize
    }
}

/// The grid the conditional recursion runs on: the observation grid, or the
/// observation grid padded at its own spacing for [`Support::Extended`].
/// Returns the support and the 0-based offset of site 1 within it.
pub fn cressie_support(grid: &LocationGrid, spec: &CressieSpec) -> Result<(LocationGrid, usize)> {
    let Some(h) = grid.spacing() else {
        return Ok((grid.clone(), 0));
    };
    let ext = spec.extension_sites(h);
    let start = grid.coord(1) - ext as f64 * h;
    let support = LocationGrid::regular(start, h, grid.len() + 2 * ext)?;
    Ok((support, ext))
}

/// Joint covariance of the conditional model on the support grid,
/// component-major.
fn covariance_on(support: &LocationGrid, spec: &CressieSpec) -> DMatrix<f64> {
    let x = support.coords();
    let big = x.len();
    let weight = support.spacing().unwrap_or(1.0);
    let mut sigma = spec.c11.matrix(x);
    for q in 2..=spec.p() {
        let parents = (q - 1) * big;
        let mut b = DMatrix::zeros(big, parents);
        for r in 1..q {
            if let Some(f) = spec.coupling(q, r) {
                for a in 0..big {
                    for v in 0..big {
                        b[(a, (r - 1) * big + v)] = f.eval(x[a], x[v]) * weight;
                    }
                }
            }
        }
        let cross = &b * &sigma; // cov(Y_q, Y_<q)
        let own = spec.conditional[q - 2].matrix(x) + &cross * b.transpose();
        let mut next = DMatrix::zeros(q * big, q * big);
        next.view_mut((0, 0), (parents, parents)).copy_from(&sigma);
        next.view_mut((parents, 0), (big, parents))
            .copy_from(&cross);
        next.view_mut((0, parents), (parents, big))
            .copy_from(&cross.transpose());
        next.view_mut((parents, parents), (big, big))
            .copy_from(&own);
        sigma = next;
    }
    sigma
}

/// Builds the conditional joint covariance for `p` in {2, 3}:
/// `Σ_21 = B Σ_11`, `Σ_22 = C_2|1 + B Σ_11 Bᵀ`, and for `p = 3` the same step
/// with field 3 conditioned on the stacked fields 1-2.
pub fn build_cressie(
    grid: &LocationGrid,
    spec: &CressieSpec,
    p: usize,
    ordering: Ordering,
) -> Result<JointCovariance> {
    if !(2..=3).contains(&p) {
        return Err(Error::UnsupportedP(p));
    }
    let mut violations = spec.violations(grid);
    if spec.p() != p {
        violations.push(Violation::new(
            "conditional",
            format!(
                "p = {p} needs {} conditional covariances, got {}",
                p - 1,
                spec.conditional.len()
            ),
        ));
    }
    fail_on(violations)?;
    let (support, offset) = cressie_support(grid, spec)?;
    let full = covariance_on(&support, spec);
    let (n, big) = (grid.len(), support.len());
    let idx = |k: usize| (k / n) * big + offset + k % n;
    let m = DMatrix::from_fn(n * p, n * p, |a, b| full[(idx(a), idx(b))]);
    let sigma = finalize_jittered(m, n, p, Ordering::ComponentMajor)?;
    Ok(permute_ordering(&sigma, ordering))
}

impl CovarianceModel for CressieSpec {
    fn family(&self) -> &'static str {
        Self::FAMILY
    }

    fn components(&self) -> usize {
        self.p()
    }

    fn validate(&self, grid: &LocationGrid) -> Vec<Violation> {
        self.violations(grid)
    }

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance> {
        build_cressie(grid, self, self.p(), ordering)
    }

    fn is_shifted(&self) -> bool {
        self.couplings.iter().any(|b| b.shift.delta != 0.0)
    }

    fn without_shift(&self) -> Box<dyn CovarianceModel> {
        let mut spec = self.clone();
        for b in &mut spec.couplings {
            b.shift = Shift::ZERO;
        }
        Box::new(spec)
    }

    fn to_section(&self) -> toml::Table {
        to_table(self)
    }
}
