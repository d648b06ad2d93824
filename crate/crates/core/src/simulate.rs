//! Seeded draws from a joint covariance and observation noise.
//!
//! Generator: ChaCha20 (`rand_chacha::ChaCha20Rng`), a counter-based 64-bit
//! stream cipher RNG, seeded with `seed_from_u64`. Field draws use stream 0
//! and noise draws stream 1 of the same seed, so a field and its noise never
//! share random numbers. Standard normals come from `rand_distr::StandardNormal`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::joint::{JointCovariance, LocationGrid, Ordering};
use crate::linalg::{cholesky_jittered, JitterPolicy};

const FIELD_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One replicate of all `p` fields over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    /// `p x n`, row `l` is component `l + 1`.
    pub values: DMatrix<f64>,
    pub grid: LocationGrid,
    pub seed: u64,
}

impl FieldSample {
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    /// 1-based component and site.
    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.values[(l - 1, i - 1)]
    }

    /// Stacked vector in `ordering`.
    pub fn to_vector(&self, ordering: Ordering) -> DVector<f64> {
        let (n, p) = (self.n(), self.p());
        DVector::from_fn(n * p, |k, _| {
            let (l, i) = ordering.unflat(k, n, p);
            self.values[(l, i)]
        })
    }

    /// CSV with header `component,site,coordinate,value`, 1-based indices,
    /// component-major rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,site,coordinate,value\n");
        for l in 0..self.p() {
            for i in 0..self.n() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    l + 1,
                    i + 1,
                    self.grid.coords()[i],
                    self.values[(l, i)]
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Observation noise variance (nugget).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub tau2: f64,
}

impl NoiseSpec {
    pub fn new(tau2: f64) -> Result<Self> {
        if tau2 >= 0.0 && tau2.is_finite() {
            Ok(Self { tau2 })
        } else {
            Err(Error::InvalidSpec(vec![crate::error::Violation::new(
                "tau2",
                format!("must be >= 0, got {tau2}"),
            )]))
        }
    }

    /// 5% of the mean marginal variance of `sigma`.
    pub fn default_for(sigma: &JointCovariance) -> Self {
        let m = sigma.matrix();
        Self {
            tau2: 0.05 * m.trace() / m.nrows() as f64,
        }
    }
}

/// Cholesky factor of a covariance, reusable across seeds.
pub struct Sampler {
    lower: DMatrix<f64>,
    mean: DVector<f64>,
    grid: LocationGrid,
    n: usize,
    p: usize,
    ordering: Ordering,
    ridge: f64,
}

impl Sampler {
    pub fn new(
        sigma: &JointCovariance,
        grid: &LocationGrid,
        mean: Option<&DVector<f64>>,
        jitter: JitterPolicy,
    ) -> Result<Self> {
        if grid.len() != sigma.n() {
            return Err(Error::LengthMismatch(grid.len(), sigma.n()));
        }
        let mean = match mean {
            Some(m) if m.len() != sigma.dim() => {
                return Err(Error::LengthMismatch(m.len(), sigma.dim()))
            }
            Some(m) => m.clone(),
            None => DVector::zeros(sigma.dim()),
        };
        let factor = cholesky_jittered(sigma.matrix(), jitter)?;
        Ok(Self {
            lower: factor.chol.l(),
            mean,
            grid: grid.clone(),
            n: sigma.n(),
            p: sigma.p(),
            ordering: sigma.ordering(),
            ridge: factor.ridge,
        })
    }

    /// Ridge added to the diagonal before factoring (0 when none was needed).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// `mean + L z`, `z` standard normal from the seeded generator.
    pub fn draw(&self, seed: u64) -> FieldSample {
        let mut rng = rng(seed, FIELD_STREAM);
        let z = DVector::from_fn(self.n * self.p, |_, _| StandardNormal.sample(&mut rng));
        let flat = &self.mean + &self.lower * z;
        let mut values = DMatrix::zeros(self.p, self.n);
        for (k, v) in flat.iter().enumerate() {
            let (l, i) = self.ordering.unflat(k, self.n, self.p);
            values[(l, i)] = *v;
        }
        FieldSample {
            values,
            grid: self.grid.clone(),
            seed,
        }
    }
}

/// One draw from `N(mean, sigma)`; identical seeds give identical output.
pub fn sample(
    sigma: &JointCovariance,
    grid: &LocationGrid,
    mean: Option<&DVector<f64>>,
    seed: u64,
    jitter: JitterPolicy,
) -> Result<FieldSample> {
    Ok(Sampler::new(sigma, grid, mean, jitter)?.draw(seed))
}

/// Adds independent `N(0, tau2)` noise to the masked `(component, site)`
/// entries (1-based); everything else is copied unchanged.
pub fn add_noise(
    sample: &FieldSample,
    noise: NoiseSpec,
    mask: &[(usize, usize)],
    seed: u64,
) -> Result<FieldSample> {
    let (p, n) = (sample.p(), sample.n());
    if let Some(&(l, i)) = mask
        .iter()
        .find(|&&(l, i)| l == 0 || l > p || i == 0 || i > n)
    {
        return Err(Error::IndexOutOfRange(format!(
            "mask entry (component {l}, site {i}) outside {p} x {n}"
        )));
    }
    let mut out = sample.clone();
    if noise.tau2 == 0.0 {
        return Ok(out);
    }
    let sd = noise.tau2.sqrt();
    let mut rng = rng(seed, NOISE_STREAM);
    for &(l, i) in mask {
        let z: f64 = StandardNormal.sample(&mut rng);
        out.values[(l - 1, i - 1)] += sd * z;
    }
    Ok(out)
}
