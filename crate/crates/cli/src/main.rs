use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use volsq::data::{estimate_covariance, DistributionSpec, DEFAULT_CHERNOFF_CONSTANT};
use volsq::experiment::{
    fit_loglog_slope, median_curve, run_convergence_experiment,
    run_convergence_experiment_with_threads, write_outputs, ExperimentConfig,
};
use volsq::rescaled::{
    default_epsilon, gaussian_vs_sample, rejection_leverage_bound, vs_sample_size_k,
    DeterminantalRejectionSampler, RejectionConfig, RescaledSampleSpec,
};
use volsq::validation::{run_validation_suite, ValidationOptions};
use volsq::volume::{reverse_iterative_sample, FinitePointSet};
use volsq::{Error, RngState, Vector};

#[derive(Parser)]
#[command(
    name = "volsq",
    version,
    about = "Volume-rescaled sampling for unbiased least squares"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged-estimator convergence experiment on the cubic Gaussian model.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the enumeration and identity checks and print a JSON report.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_removal_normalization: bool,
    },
    /// Draw volume-rescaled samples from a distribution described in JSON.
    Sample {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long, value_enum)]
        method: SampleMethod,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        n_samples: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the distribution file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMethod {
    Rejection,
    Gaussian,
    ReverseIterative,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Experiment {
            config,
            out,
            seed,
            threads,
        } => experiment(&config, out, seed, threads),
        Command::Validate {
            seed,
            corrupt_removal_normalization,
        } => return validate(seed, corrupt_removal_normalization),
        Command::Sample {
            dist,
            method,
            k,
            n_samples,
            out,
            seed,
        } => sample(&dist, method, k, n_samples, &out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::ConfigInvalid(_)
                | Error::Json(_)
                | Error::Io(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidParameter(_)
                | Error::MissingSupportBound
                | Error::UnboundedSupport => EXIT_CONFIG,
                _ => EXIT_VALIDATION,
            })
        }
    }
}

fn read(path: &Path) -> volsq::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn experiment(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> volsq::Result<()> {
    let mut cfg = ExperimentConfig::from_json(&read(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.or_else(|| cfg.output_path.clone()).ok_or_else(|| {
        Error::ConfigInvalid("no output directory: pass --out or set output_path".into())
    })?;
    let outcome = match threads {
        Some(0) => return Err(Error::ConfigInvalid("--threads must be positive".into())),
        Some(n) => run_convergence_experiment_with_threads(&cfg, n)?,
        None => run_convergence_experiment(&cfg)?,
    };
    write_outputs(&outcome, &dir)?;

    println!("w* = {:?}", outcome.w_star.as_slice());
    for (m, q) in &outcome.label_queries {
        println!("{m}: {q} labels");
    }
    let mut keys: Vec<_> = outcome.rows.iter().map(|r| (r.method, r.k)).collect();
    keys.dedup();
    for (m, k) in keys {
        let curve = median_curve(&outcome.rows, m, k);
        let last = curve.last().map(|c| c.1).unwrap_or(f64::NAN);
        match fit_loglog_slope(&outcome.rows, m, k) {
            Ok(s) => println!(
                "{m} k={k}: median error at T={} is {last:.4e}, slope {s:.3}",
                cfg.t_max
            ),
            Err(_) => println!("{m} k={k}: median error at T={} is {last:.4e}", cfg.t_max),
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn validate(seed: u64, corrupt: bool) -> ExitCode {
    let report = run_validation_suite(ValidationOptions {
        seed,
        corrupt_removal_normalization: corrupt,
    });
    match report.to_json() {
        Ok(json) => println!("{json}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn sample(
    dist_path: &Path,
    method: SampleMethod,
    k: usize,
    n_samples: usize,
    out: &Path,
    seed: Option<u64>,
) -> volsq::Result<()> {
    let spec = DistributionSpec::from_json(&read(dist_path)?)
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let dist = spec.distribution()?;
    let d = dist.dim();
    let spec_k = RescaledSampleSpec::new(k, d)?;
    let base = RngState::new(seed.or(spec.seed).unwrap_or(0), 0);
    let mut rng = base.rng();

    let samples: Vec<Vec<Vector>> = match method {
        SampleMethod::Gaussian => (0..n_samples)
            .map(|_| gaussian_vs_sample(&dist, k, &mut rng))
            .collect::<volsq::Result<_>>()?,
        SampleMethod::Rejection => {
            let eps = default_epsilon(d);
            let mut est_rng = base.with_stream(1).rng();
            let est =
                estimate_covariance(&dist, eps, 1e-3, DEFAULT_CHERNOFF_CONSTANT, &mut est_rng)?;
            let cfg = RejectionConfig::new(d, rejection_leverage_bound(&dist, &est)?);
            let sampler = DeterminantalRejectionSampler::new(est.sigma_hat, cfg)?;
            let mut block = |r: &mut volsq::SimRng| sampler.sample(&dist, r).map(|(pts, _)| pts);
            (0..n_samples)
                .map(|_| vs_sample_size_k(&dist, spec_k, &mut block, &mut rng))
                .collect::<volsq::Result<_>>()?
        }
        SampleMethod::ReverseIterative => {
            let (atoms, _) = dist.atoms().ok_or_else(|| {
                Error::InvalidDistribution(
                    "reverse-iterative sampling needs a discrete point set".into(),
                )
            })?;
            if k > atoms.len() {
                return Err(Error::InvalidParameter(format!(
                    "k={k} exceeds {} atoms",
                    atoms.len()
                )));
            }
            let pts = FinitePointSet::new(atoms.to_vec())?;
            (0..n_samples)
                .map(|_| {
                    reverse_iterative_sample(&pts, k, &mut rng)
                        .map(|s| s.iter().map(|&i| atoms[i].clone()).collect())
                })
                .collect::<volsq::Result<_>>()?
        }
    };

    let mut w = BufWriter::new(fs::File::create(out)?);
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    writeln!(w, "sample,index,{}", header.join(","))?;
    for (s, pts) in samples.iter().enumerate() {
        for (i, p) in pts.iter().enumerate() {
            let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{s},{i},{}", coords.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}
