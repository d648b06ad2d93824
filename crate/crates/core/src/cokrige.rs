//! Gaussian conditional prediction (simple co-kriging with zero prior mean),
//! error metrics, and the with-shift versus without-shift experiment.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::builders::CovarianceModel;
use crate::error::{Error, Result};
use crate::joint::{JointCovariance, LocationGrid, Ordering};
use crate::linalg::{cholesky_jittered, JitterPolicy};
use crate::simulate::{add_noise, FieldSample, NoiseSpec, Sampler};

/// Posterior variances down to this value are treated as rounding and
/// clamped to zero.
pub const VARIANCE_FLOOR: f64 = -1e-10;

/// 1-based `(component, site)`.
pub type Entry = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub indices: Vec<Entry>,
    pub values: Vec<f64>,
    pub noise: NoiseSpec,
}

impl ObservationSet {
    pub fn new(indices: Vec<Entry>, values: Vec<f64>, noise: NoiseSpec) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::LengthMismatch(indices.len(), values.len()));
        }
        Ok(Self {
            indices,
            values,
            noise,
        })
    }

    /// Reads `indices` out of a (possibly noisy) field sample.
    pub fn from_sample(
        sample: &FieldSample,
        indices: Vec<Entry>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        check_entries(&indices, sample.n(), sample.p())?;
        let values = indices.iter().map(|&(l, i)| sample.get(l, i)).collect();
        Ok(Self {
            indices,
            values,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub targets: Vec<Entry>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Filled in by [`PredictionResult::score`].
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
}

impl PredictionResult {
    /// Attaches MAE and RMSE against `truth`.
    pub fn score(&mut self, truth: &[f64]) -> Result<()> {
        let (mae, rmse) = metrics(&self.mean, truth)?;
        self.mae = Some(mae);
        self.rmse = Some(rmse);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,site,mean,variance\n");
        for (k, &(l, i)) in self.targets.iter().enumerate() {
            out.push_str(&format!("{l},{i},{},{}\n", self.mean[k], self.variance[k]));
        }
        out
    }
}

fn check_entries(entries: &[Entry], n: usize, p: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(entries.len());
    for &(l, i) in entries {
        if l == 0 || l > p || i == 0 || i > n {
            return Err(Error::IndexOutOfRange(format!(
                "(component {l}, site {i}) outside {p} x {n}"
            )));
        }
        if !seen.insert((l, i)) {
            return Err(Error::IndexOutOfRange(format!(
                "(component {l}, site {i}) listed twice"
            )));
        }
    }
    Ok(())
}

/// Kriging weights for a fixed observed/target layout; the observation
/// values may change between calls to [`Predictor::predict`].
#[derive(Debug, Clone)]
pub struct Predictor {
    observed: Vec<Entry>,
    targets: Vec<Entry>,
    /// `(Σ_oo + τ² I)⁻¹ Σ_ot`, observations by targets.
    weights: DMatrix<f64>,
    variance: Vec<f64>,
}

impl Predictor {
    pub fn new(
        sigma: &JointCovariance,
        observed: &[Entry],
        tau2: f64,
        targets: &[Entry],
    ) -> Result<Self> {
        if observed.is_empty() {
            return Err(Error::EmptyObservations);
        }
        let (n, p) = (sigma.n(), sigma.p());
        check_entries(observed, n, p)?;
        check_entries(targets, n, p)?;
        let flat =
            |e: &[Entry]| -> Vec<usize> { e.iter().map(|&(l, i)| sigma.index(l, i)).collect() };
        let (o, t) = (flat(observed), flat(targets));
        let m = sigma.matrix();
        let mut k_oo = m.select_rows(&o).select_columns(&o);
        for d in 0..o.len() {
            k_oo[(d, d)] += tau2;
        }
        let k_ot = m.select_rows(&o).select_columns(&t);
        let factor = cholesky_jittered(&k_oo, JitterPolicy::default()).map_err(|e| match e {
            Error::NotPD(msg) => Error::SingularSystem(msg),
            other => other,
        })?;
        let weights = factor.chol.solve(&k_ot);
        let variance = t
            .iter()
            .enumerate()
            .map(|(c, &tt)| {
                let v = m[(tt, tt)] - k_ot.column(c).dot(&weights.column(c));
                if v < VARIANCE_FLOOR {
                    Err(Error::SingularSystem(format!(
                        "negative posterior variance {v:e} at target {:?}",
                        targets[c]
                    )))
                } else {
                    Ok(v.max(0.0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            observed: observed.to_vec(),
            targets: targets.to_vec(),
            weights,
            variance,
        })
    }

    pub fn observed(&self) -> &[Entry] {
        &self.observed
    }

    pub fn targets(&self) -> &[Entry] {
        &self.targets
    }

    /// Posterior means for observation values `y` in the order of
    /// [`Predictor::observed`].
    pub fn predict(&self, y: &[f64]) -> Result<PredictionResult> {
        if y.len() != self.observed.len() {
            return Err(Error::LengthMismatch(y.len(), self.observed.len()));
        }
        let mean = self.weights.tr_mul(&DVector::from_column_slice(y));
        Ok(PredictionResult {
            targets: self.targets.clone(),
            mean: mean.iter().copied().collect(),
            variance: self.variance.clone(),
            mae: None,
            rmse: None,
        })
    }
}

/// `mean = Σ_to (Σ_oo + τ²I)⁻¹ y`,
/// `variance = diag(Σ_tt - Σ_to (Σ_oo + τ²I)⁻¹ Σ_ot)`.
pub fn predict(
    sigma: &JointCovariance,
    obs: &ObservationSet,
    targets: &[Entry],
) -> Result<PredictionResult> {
    if obs.values.len() != obs.indices.len() {
        return Err(Error::LengthMismatch(obs.indices.len(), obs.values.len()));
    }
    Predictor::new(sigma, &obs.indices, obs.noise.tau2, targets)?.predict(&obs.values)
}

/// `(mean |e|, sqrt(mean e²))` for `e = pred - truth`.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let m = pred.len() as f64;
    let (abs, sq) = pred.iter().zip(truth).fold((0.0, 0.0), |(a, s), (p, t)| {
        (a + (p - t).abs(), s + (p - t) * (p - t))
    });
    Ok((abs / m, (sq / m).sqrt()))
}

pub const WITH_SHIFT: &str = "with_delta";
pub const WITHOUT_SHIFT: &str = "without_delta";

/// Simulate from `truth`, hide `targets`, observe every other entry with
/// noise, and predict the hidden entries under two fitted models.
#[derive(Debug)]
pub struct ExperimentConfig {
    pub grid: LocationGrid,
    pub truth: Box<dyn CovarianceModel>,
    /// Defaults to `truth`.
    pub with_shift: Option<Box<dyn CovarianceModel>>,
    /// Defaults to `truth` with every shift zeroed.
    pub without_shift: Option<Box<dyn CovarianceModel>>,
    pub targets: Vec<Entry>,
    /// Noise variance on every observation; `None` uses the 5% default of
    /// the true covariance.
    pub tau2: Option<f64>,
    pub seeds: Vec<u64>,
    pub ordering: Ordering,
}

impl ExperimentConfig {
    /// Field 1, sites `1..=m`.
    pub fn leading_targets(m: usize) -> Vec<Entry> {
        (1..=m).map(|i| (1, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub with_shift: PredictionResult,
    pub without_shift: PredictionResult,
    pub truth: Vec<f64>,
}

impl SeedOutcome {
    pub fn mae(&self) -> (f64, f64) {
        (
            self.with_shift.mae.unwrap_or(f64::NAN),
            self.without_shift.mae.unwrap_or(f64::NAN),
        )
    }

    pub fn rmse(&self) -> (f64, f64) {
        (
            self.with_shift.rmse.unwrap_or(f64::NAN),
            self.without_shift.rmse.unwrap_or(f64::NAN),
        )
    }

    /// `site,truth,mean_with_delta,mean_without_delta,sd_with_delta,sd_without_delta`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(
            "site,truth,mean_with_delta,mean_without_delta,sd_with_delta,sd_without_delta\n",
        );
        let (w, o) = (&self.with_shift, &self.without_shift);
        for (k, &(_, site)) in w.targets.iter().enumerate() {
            out.push_str(&format!(
                "{site},{},{},{},{},{}\n",
                self.truth[k],
                w.mean[k],
                o.mean[k],
                w.variance[k].sqrt(),
                o.variance[k].sqrt()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: &'static str,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    /// Fraction of seeds where this model had strictly lower MAE.
    pub win_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub tau2: f64,
    pub runs: Vec<SeedOutcome>,
    pub summary: [ModelSummary; 2],
}

impl ExperimentReport {
    pub fn wins_with_shift(&self) -> usize {
        self.runs.iter().filter(|r| r.mae().0 < r.mae().1).count()
    }

    pub fn mae_ratio(&self) -> f64 {
        self.summary[0].mean_mae / self.summary[1].mean_mae
    }

    pub fn experiment_csv(&self) -> String {
        let mut out = String::from("seed,model,mae,rmse\n");
        for r in &self.runs {
            let (mae, rmse) = (r.mae(), r.rmse());
            out.push_str(&format!("{},{WITH_SHIFT},{},{}\n", r.seed, mae.0, rmse.0));
            out.push_str(&format!(
                "{},{WITHOUT_SHIFT},{},{}\n",
                r.seed, mae.1, rmse.1
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("model,mean_mae,mean_rmse,win_rate\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.model, s.mean_mae, s.mean_rmse, s.win_rate
            ));
        }
        out
    }

    /// Writes `experiment.csv`, `summary.csv` and one `trace_<seed>.csv` per
    /// seed into `dir`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.runs.len() + 2);
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        put("experiment.csv".into(), self.experiment_csv())?;
        put("summary.csv".into(), self.summary_csv())?;
        for r in &self.runs {
            put(format!("trace_{}.csv", r.seed), r.trace_csv())?;
        }
        Ok(written)
    }
}

/// Runs every seed (in parallel, reported in seed order).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.targets.is_empty() {
        return Err(Error::IndexOutOfRange(
            "experiment target set is empty".into(),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InsufficientReplicates(0));
    }
    let (n, p) = (cfg.grid.len(), cfg.truth.components());
    check_entries(&cfg.targets, n, p)?;
    let hidden: HashSet<Entry> = cfg.targets.iter().copied().collect();
    let observed: Vec<Entry> = (1..=p)
        .flat_map(|l| (1..=n).map(move |i| (l, i)))
        .filter(|e| !hidden.contains(e))
        .collect();

    let true_sigma = cfg.truth.build(&cfg.grid, cfg.ordering)?;
    let tau2 = match cfg.tau2 {
        Some(t) => NoiseSpec::new(t)?.tau2,
        None => NoiseSpec::default_for(&true_sigma).tau2,
    };
    let noise = NoiseSpec::new(tau2)?;
    let fitted = |m: &Option<Box<dyn CovarianceModel>>,
                  fallback: &dyn CovarianceModel|
     -> Result<Predictor> {
        let sigma = match m {
            Some(m) => m.build(&cfg.grid, cfg.ordering)?,
            None => fallback.build(&cfg.grid, cfg.ordering)?,
        };
        Predictor::new(&sigma, &observed, tau2, &cfg.targets)
    };
    let with = match &cfg.with_shift {
        None => Predictor::new(&true_sigma, &observed, tau2, &cfg.targets)?,
        some => fitted(some, cfg.truth.as_ref())?,
    };
    let without = fitted(&cfg.without_shift, cfg.truth.without_shift().as_ref())?;
    let sampler = Sampler::new(&true_sigma, &cfg.grid, None, JitterPolicy::default())?;

    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let clean = sampler.draw(seed);
            let noisy = add_noise(&clean, noise, &observed, seed)?;
            let y: Vec<f64> = observed.iter().map(|&(l, i)| noisy.get(l, i)).collect();
            let truth: Vec<f64> = cfg.targets.iter().map(|&(l, i)| clean.get(l, i)).collect();
            let mut a = with.predict(&y)?;
            let mut b = without.predict(&y)?;
            a.score(&truth)?;
            b.score(&truth)?;
            Ok(SeedOutcome {
                seed,
                with_shift: a,
                without_shift: b,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let m = runs.len() as f64;
    let summarize =
        |model, pick: fn((f64, f64)) -> f64, win: fn(&SeedOutcome) -> bool| ModelSummary {
            model,
            mean_mae: runs.iter().map(|r| pick(r.mae())).sum::<f64>() / m,
            mean_rmse: runs.iter().map(|r| pick(r.rmse())).sum::<f64>() / m,
            win_rate: runs.iter().filter(|r| win(r)).count() as f64 / m,
        };
    let summary = [
        summarize(WITH_SHIFT, |x| x.0, |r| r.mae().0 < r.mae().1),
        summarize(WITHOUT_SHIFT, |x| x.1, |r| r.mae().1 < r.mae().0),
    ];
    Ok(ExperimentReport {
        tau2,
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{broadcast_shift, MultiMaternSpec};
    use crate::kernels::Smoothness;
    use approx::assert_relative_eq;

    fn sigma(m: &[f64], n: usize, p: usize) -> JointCovariance {
        let d = n * p;
        JointCovariance::new(
            DMatrix::from_row_slice(d, d, m),
            n,
            p,
            Ordering::ComponentMajor,
        )
        .unwrap()
    }

    fn noiseless() -> NoiseSpec {
        NoiseSpec::new(0.0).unwrap()
    }

    #[test]
    fn metrics_hand_values() {
        assert_eq!(metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(metrics(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), (1.0, 1.0));
        let (mae, rmse) = metrics(&[0.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(mae, 1.5);
        assert_relative_eq!(rmse, 2.121_320_343_559_642_4, epsilon = 1e-15);
        assert!(matches!(
            metrics(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn three_point_hand_solve() {
        // Σ over sites (1, 2, 3); predict site 1 from sites 2 and 3.
        let s = sigma(&[2.0, 0.8, 0.4, 0.8, 1.0, 0.3, 0.4, 0.3, 1.5], 3, 1);
        let obs = ObservationSet::new(vec![(1, 2), (1, 3)], vec![1.0, -2.0], noiseless()).unwrap();
        let r = predict(&s, &obs, &[(1, 1)]).unwrap();
        // K = [[1, .3], [.3, 1.5]], det = 1.41, k = [.8, .4]
        let w = [
            (0.8 * 1.5 - 0.4 * 0.3) / 1.41,
            (0.4 * 1.0 - 0.8 * 0.3) / 1.41,
        ];
        assert_relative_eq!(r.mean[0], w[0] * 1.0 + w[1] * -2.0, epsilon = 1e-14);
        assert_relative_eq!(
            r.variance[0],
            2.0 - (w[0] * 0.8 + w[1] * 0.4),
            epsilon = 1e-14
        );
    }

    #[test]
    fn noiseless_observation_is_interpolated() {
        let s = sigma(&[2.0, 0.8, 0.4, 0.8, 1.0, 0.3, 0.4, 0.3, 1.5], 3, 1);
        let obs = ObservationSet::new(vec![(1, 2), (1, 3)], vec![0.7, -2.0], noiseless()).unwrap();
        let r = predict(&s, &obs, &[(1, 2)]).unwrap();
        assert_relative_eq!(r.mean[0], 0.7, epsilon = 1e-12);
        assert!(r.variance[0].abs() <= 1e-12);
    }

    #[test]
    fn independent_target_keeps_prior() {
        let s = sigma(&[3.0, 0.0, 0.0, 1.0], 2, 1);
        let obs = ObservationSet::new(vec![(1, 2)], vec![5.0], noiseless()).unwrap();
        let r = predict(&s, &obs, &[(1, 1)]).unwrap();
        assert_eq!(r.mean[0], 0.0);
        assert_eq!(r.variance[0], 3.0);
    }

    #[test]
    fn empty_and_malformed_observations() {
        let s = sigma(&[1.0, 0.0, 0.0, 1.0], 2, 1);
        let empty = ObservationSet::new(vec![], vec![], noiseless()).unwrap();
        assert!(matches!(
            predict(&s, &empty, &[(1, 1)]),
            Err(Error::EmptyObservations)
        ));
        let dup = ObservationSet::new(vec![(1, 2), (1, 2)], vec![0.0, 0.0], noiseless()).unwrap();
        assert!(matches!(
            predict(&s, &dup, &[(1, 1)]),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(ObservationSet::new(vec![(1, 2)], vec![], noiseless()).is_err());
    }

    #[test]
    fn singular_system_is_reported() {
        // Indefinite, so no jitter can rescue it.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = JointCovariance::from_parts_unchecked(m, 3, 1, Ordering::ComponentMajor).unwrap();
        let obs = ObservationSet::new(vec![(1, 1), (1, 2)], vec![0.0, 0.0], noiseless()).unwrap();
        assert!(matches!(
            predict(&s, &obs, &[(1, 3)]),
            Err(Error::SingularSystem(_))
        ));
    }

    fn bivariate(delta: f64) -> MultiMaternSpec {
        MultiMaternSpec {
            nus: vec![Smoothness::ThreeHalves; 2],
            kappa: 1.5,
            betas: vec![vec![1.0, 0.8], vec![0.8, 1.0]],
            marginal_sds: vec![1.0, 1.0],
            shifts: broadcast_shift(2, delta),
        }
    }

    fn small_experiment(delta: f64, without: Option<Box<dyn CovarianceModel>>) -> ExperimentConfig {
        ExperimentConfig {
            grid: LocationGrid::regular(0.0, 0.2, 30).unwrap(),
            truth: Box::new(bivariate(delta)),
            with_shift: None,
            without_shift: without,
            targets: ExperimentConfig::leading_targets(10),
            tau2: None,
            seeds: (1..=6).collect(),
            ordering: Ordering::ComponentMajor,
        }
    }

    #[test]
    fn identical_models_give_identical_metrics() {
        let r = run_experiment(&small_experiment(0.0, None)).unwrap();
        for run in &r.runs {
            assert_eq!(run.mae().0, run.mae().1);
            assert_eq!(run.rmse().0, run.rmse().1);
        }
        assert_eq!(r.summary[0].win_rate, 0.0);
        let r = run_experiment(&small_experiment(0.8, Some(Box::new(bivariate(0.8))))).unwrap();
        assert!(r.runs.iter().all(|x| x.mae().0 == x.mae().1));
    }

    #[test]
    fn rows_respect_power_mean_and_variance_bounds() {
        let cfg = small_experiment(0.8, None);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.runs.iter().map(|x| x.seed).collect::<Vec<_>>(), cfg.seeds);
        for run in &r.runs {
            assert!(run.rmse().0 >= run.mae().0 && run.rmse().1 >= run.mae().1);
            // prior variance is 1 for every target
            assert!(run
                .with_shift
                .variance
                .iter()
                .all(|&v| (0.0..=1.0 + 1e-8).contains(&v)));
        }
        let csv = r.experiment_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * cfg.seeds.len());
        assert!(r
            .summary_csv()
            .starts_with("model,mean_mae,mean_rmse,win_rate\nwith_delta,"));
        assert_eq!(r.runs[0].trace_csv().lines().count(), 11);
        // reruns are bit-identical
        assert_eq!(run_experiment(&cfg).unwrap(), r);
    }
}
