//! `covkit <command> --config <path> --out <dir> [--seed <u64>] [--set key=value ...]`
//!
//! Exit status: 0 on success, 1 on usage or I/O errors, 2 when the config or
//! model is invalid (one machine-parsable reason line on stderr).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use covkit::cokrige::{predict, ObservationSet};
use covkit::config::{load_config, Config};
use covkit::diagnostics::{
    check_properties, cov_to_corr, empirical_correlation, export_corr_strips, write_strips,
    CorrMatrix,
};
use covkit::linalg::JitterPolicy;
use covkit::simulate::{add_noise, NoiseSpec, Sampler};
use covkit::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Build the joint covariance and write it as CSV.
    BuildCov,
    /// Draw `[simulate] replicates` fields.
    Simulate,
    /// Empirical correlation from simulated replicates, with strips.
    EmpiricalCorr,
    /// Theoretical correlation, property checks and strips.
    Diagnose,
    /// Predict the `[predict]` targets from one simulated truth.
    Predict,
    /// With-shift versus without-shift prediction over many seeds.
    Experiment,
}

#[derive(Debug, Parser)]
#[command(
    name = "covkit",
    version,
    about = "Joint covariance toolkit for multivariate spatial fields"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed of the section the command uses.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted override applied before validation, e.g. `cressie.c11.variance=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Collects every path written so the manifest can list them.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Error> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), Error> {
        let path = self.path(name);
        fs::write(&path, body)?;
        self.written.push(path);
        Ok(())
    }

    fn extend(&mut self, paths: Vec<PathBuf>) {
        self.written.extend(paths);
    }

    fn finish(mut self) -> Result<(), Error> {
        let manifest = self.path("manifest.txt");
        self.written.push(manifest.clone());
        let mut body = String::new();
        for p in &self.written {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            body.push_str(&rel.to_string_lossy());
            body.push('\n');
        }
        fs::write(manifest, body)?;
        Ok(())
    }
}

fn strips(out: &mut Outputs, cfg: &Config, corr: &CorrMatrix, prefix: &str) -> Result<(), Error> {
    let dir = out.path(prefix);
    fs::create_dir_all(&dir)?;
    for pair in cfg.strip_pairs() {
        let mats = export_corr_strips(corr, &cfg.strip_ranges(), pair)?;
        out.extend(write_strips(&dir, pair, &mats)?);
    }
    Ok(())
}

fn simulate(cfg: &Config, out: &mut Outputs) -> Result<(), Error> {
    let sigma = cfg.model.build(&cfg.grid, cfg.ordering)?;
    let sampler = Sampler::new(&sigma, &cfg.grid, None, JitterPolicy::default())?;
    let everywhere: Vec<(usize, usize)> = (1..=cfg.p())
        .flat_map(|l| (1..=cfg.grid.len()).map(move |i| (l, i)))
        .collect();
    for k in 0..cfg.simulate.replicates as u64 {
        let seed = cfg.simulate.seed + k;
        let mut draw = sampler.draw(seed);
        if let Some(tau2) = cfg.simulate.tau2 {
            draw = add_noise(&draw, NoiseSpec::new(tau2)?, &everywhere, seed)?;
        }
        out.text(&format!("sample_{seed}.csv"), &draw.to_csv())?;
    }
    Ok(())
}

fn empirical(cfg: &Config, out: &mut Outputs) -> Result<(), Error> {
    let sigma = cfg.model.build(&cfg.grid, cfg.ordering)?;
    let sampler = Sampler::new(&sigma, &cfg.grid, None, JitterPolicy::default())?;
    let draws: Vec<_> = (0..cfg.simulate.replicates as u64)
        .map(|k| sampler.draw(cfg.simulate.seed + k))
        .collect();
    let corr = empirical_correlation(&draws, cfg.grid.len(), cfg.p())?;
    out.extend(corr.save(&out.path("empirical_correlation.csv"))?);
    let report = check_properties(&corr)?;
    out.text("cross.csv", &report.cross_csv())?;
    strips(out, cfg, &corr, "strips")
}

fn diagnose(cfg: &Config, out: &mut Outputs) -> Result<(), Error> {
    let sigma = cfg.model.build(&cfg.grid, cfg.ordering)?;
    let corr = cov_to_corr(&sigma)?;
    let report = check_properties(&corr)?;
    out.extend(corr.save(&out.path("correlation.csv"))?);
    out.text("checks.csv", &report.checks_csv())?;
    out.text("cross.csv", &report.cross_csv())?;
    strips(out, cfg, &corr, "strips")?;
    for c in &report.checks {
        println!("{} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    Ok(())
}

fn run_predict(cfg: &Config, out: &mut Outputs) -> Result<(), Error> {
    let section = cfg.predict();
    let sigma = cfg.model.build(&cfg.grid, cfg.ordering)?;
    let targets = section.targets().entries();
    let observed: Vec<(usize, usize)> = (1..=cfg.p())
        .flat_map(|l| (1..=cfg.grid.len()).map(move |i| (l, i)))
        .filter(|e| !targets.contains(e))
        .collect();
    let noise = match section.tau2 {
        Some(t) => NoiseSpec::new(t)?,
        None => NoiseSpec::default_for(&sigma),
    };
    let truth = Sampler::new(&sigma, &cfg.grid, None, JitterPolicy::default())?.draw(section.seed);
    let noisy = add_noise(&truth, noise, &observed, section.seed)?;
    let obs = ObservationSet::from_sample(&noisy, observed, noise)?;
    let mut result = predict(&sigma, &obs, &targets)?;
    let truth_values: Vec<f64> = targets.iter().map(|&(l, i)| truth.get(l, i)).collect();
    result.score(&truth_values)?;

    let mut csv = String::from("component,site,truth,mean,variance\n");
    for (k, &(l, i)) in targets.iter().enumerate() {
        csv.push_str(&format!(
            "{l},{i},{},{},{}\n",
            truth_values[k], result.mean[k], result.variance[k]
        ));
    }
    out.text("prediction.csv", &csv)?;
    let (mae, rmse) = (
        result.mae.unwrap_or(f64::NAN),
        result.rmse.unwrap_or(f64::NAN),
    );
    out.text(
        "metrics.csv",
        &format!("tau2,mae,rmse\n{},{mae},{rmse}\n", noise.tau2),
    )?;
    println!("mae {mae} rmse {rmse}");
    Ok(())
}

fn experiment(cfg: &Config, out: &mut Outputs) -> Result<(), Error> {
    let report = covkit::cokrige::run_experiment(&cfg.experiment_config()?)?;
    out.extend(report.write(&out.dir)?);
    for s in &report.summary {
        println!(
            "{} mean_mae {} mean_rmse {} win_rate {}",
            s.model, s.mean_mae, s.mean_rmse, s.win_rate
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli.config, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Simulate | Command::EmpiricalCorr => cfg.simulate.seed = seed,
            Command::Predict => cfg.predict.get_or_insert_with(Default::default).seed = seed,
            Command::Experiment => cfg.experiment.get_or_insert_with(Default::default).seed = seed,
            Command::BuildCov | Command::Diagnose => {}
        }
    }
    let mut out = Outputs::new(&cli.out)?;
    match cli.command {
        Command::BuildCov => {
            let sigma = cfg.model.build(&cfg.grid, cfg.ordering)?;
            out.extend(sigma.save(&out.path("covariance.csv"))?);
        }
        Command::Simulate => simulate(&cfg, &mut out)?,
        Command::EmpiricalCorr => empirical(&cfg, &mut out)?,
        Command::Diagnose => diagnose(&cfg, &mut out)?,
        Command::Predict => run_predict(&cfg, &mut out)?,
        Command::Experiment => experiment(&cfg, &mut out)?,
    }
    out.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) => {
            eprintln!("io-error {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", e.reason());
            ExitCode::from(2)
        }
    }
}
