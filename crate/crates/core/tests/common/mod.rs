//! Random valid specs shared by the integration tests.
#![allow(dead_code)]

use covkit::builders::*;
use covkit::kernels::{GaussKernelParams, MaternParams, Shift, Smoothness};
use covkit::LocationGrid;
use nalgebra::DMatrix;
use rand::Rng;

pub const SMOOTHNESS: [f64; 4] = [0.5, 1.5, 2.5, f64::INFINITY];

pub fn grid<R: Rng>(rng: &mut R, n_lo: usize, n_hi: usize) -> LocationGrid {
    let n = rng.random_range(n_lo..=n_hi);
    LocationGrid::regular(rng.random_range(-5.0..0.0), rng.random_range(0.1..0.5), n).unwrap()
}

pub fn matern<R: Rng>(rng: &mut R) -> MaternParams {
    let nu = SMOOTHNESS[rng.random_range(0..4)];
    MaternParams::new(nu, rng.random_range(0.5..2.0)).unwrap()
}

/// SPD matrix `A Aᵀ + d I` with entries of order one.
pub fn spd<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * rng.random_range(0.1..1.0)
}

pub fn correlation<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let s = spd(rng, p);
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt()
        }
    })
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    covkit::linalg::to_rows(m)
}

/// `delta_lk = a_l - a_k`: every component is the same field displaced by
/// `a_l`, which keeps the joint model valid.
pub fn consistent_shifts<R: Rng>(rng: &mut R, p: usize) -> Vec<Vec<Shift>> {
    let a: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
    (0..p)
        .map(|l| (0..p).map(|k| Shift::new(a[l] - a[k])).collect())
        .collect()
}

pub fn intrinsic<R: Rng>(rng: &mut R) -> IntrinsicSpec {
    let p = rng.random_range(1..=4);
    IntrinsicSpec {
        rho: matern(rng),
        v: rows(&spd(rng, p)),
    }
}

pub fn multi_matern<R: Rng>(rng: &mut R, shifted: bool) -> MultiMaternSpec {
    let p = rng.random_range(2..=3);
    let nu = Smoothness::try_from(SMOOTHNESS[rng.random_range(0..4)]).unwrap();
    MultiMaternSpec {
        nus: vec![nu; p],
        kappa: rng.random_range(0.5..2.0),
        betas: rows(&correlation(rng, p)),
        marginal_sds: (0..p).map(|_| rng.random_range(0.5..2.0)).collect(),
        shifts: if shifted {
            consistent_shifts(rng, p)
        } else {
            Vec::new()
        },
    }
}

pub fn kernel_conv<R: Rng>(rng: &mut R, shifted: bool) -> KernelConvSpec {
    let p = rng.random_range(2..=3);
    KernelConvSpec {
        kernels: (0..p)
            .map(|_| GaussKernelParams {
                bandwidth: rng.random_range(0.3..1.0),
                amplitude: rng.random_range(0.5..2.0),
            })
            .collect(),
        rho: matern(rng),
        shifts: if shifted {
            consistent_shifts(rng, p)
        } else {
            Vec::new()
        },
        method: ConvMethod::Quadrature,
    }
}

pub fn cressie<R: Rng>(rng: &mut R, shifted: bool) -> CressieSpec {
    let p = rng.random_range(2..=3);
    let field = |rng: &mut R| FieldCov {
        correlation: matern(rng),
        variance: rng.random_range(0.1..2.0),
    };
    let mut couplings = Vec::new();
    for q in 2..=p {
        for r in 1..q {
            couplings.push(CouplingFn {
                q,
                r,
                gain: rng.random_range(-1.0..1.0),
                range: rng.random_range(0.2..1.0),
                shift: Shift::new(if shifted {
                    rng.random_range(0.5..1.5)
                } else {
                    0.0
                }),
            });
        }
    }
    CressieSpec {
        c11: field(rng),
        conditional: (1..p).map(|_| field(rng)).collect(),
        couplings,
        support: Support::Extended,
    }
}

/// Homogeneous nearest-neighbour chain satisfying the symmetry condition:
/// `M = Gamma⁻¹ forward` small enough that the precision stays PD, and
/// `backward = Gamma Mᵀ`. With `directional = false`, `M` is symmetric so
/// neither direction along the chain is preferred.
pub fn mardia<R: Rng>(rng: &mut R, directional: bool) -> MardiaSpec {
    let p = rng.random_range(1..=3);
    let gamma = spd(rng, p);
    let lmax = gamma.symmetric_eigenvalues().max();
    let mut m: DMatrix<f64> = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    if !directional {
        m = (&m + m.transpose()) * 0.5;
    }
    let norm = m.norm().max(1e-12);
    m *= rng.random_range(0.05..0.45) / (lmax * norm);
    MardiaSpec {
        gammas: SiteMatrices::Uniform(rows(&gamma)),
        betas: Vec::new(),
        chain: Some(ChainBetas {
            forward: rows(&(&gamma * &m)),
            backward: rows(&(&gamma * m.transpose())),
        }),
        mus: None,
    }
}
