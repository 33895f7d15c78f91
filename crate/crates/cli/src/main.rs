use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DMatrix;

use metarep::datagen::{gen_few_shot, gen_meta_train, read_meta_train_csv, write_few_shot_csv, write_meta_train_csv, ProblemSpec};
use metarep::estimators::{g_hat, mom_m_hat, sigma_f_hat, task_average_b_hat};
use metarep::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use metarep::interpolator::EigenWeighting;
use metarep::linalg::{read_matrix_csv, write_matrix_csv, CovarianceModel};
use metarep::optrep::{optimal_rep_detail, RobustBox};
use metarep::risk::{analytic_risk, canonical_cov, monte_carlo_risk};
use metarep::{Error, Result};

#[derive(Parser)]
#[command(name = "metarep", version, about = "Meta-learning representations for few-shot linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials; overrides the config
    #[arg(long)]
    trials: Option<usize>,
    /// Closed-form risk variant
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Copy, Clone, ValueEnum)]
enum Estimator {
    Mom,
    GHat,
    SigmaF,
    TaskAverage,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a phase-1 meta-train set (or a few-shot set with --few-shot) as CSV
    Gen {
        #[command(flatten)]
        common: Common,
        /// Draw a few-shot set with this many samples instead
        #[arg(long)]
        few_shot: Option<usize>,
    },
    /// Estimate a covariance (or subspace basis) from a meta-train CSV
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Meta-train CSV written by `gen`
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mom")]
        method: Estimator,
        /// Subspace rank for task-average
        #[arg(long, default_value_t = 5)]
        rank: usize,
    },
    /// Optimal eigen-weighting for a canonical task covariance
    Optrep {
        #[command(flatten)]
        common: Common,
        /// Canonical task covariance as matrix CSV (clipped to PSD); the
        /// config's spectra are used when absent
        #[arg(long)]
        task_cov: Option<PathBuf>,
        /// Feature covariance as matrix CSV; identity when absent
        #[arg(long)]
        feature_cov: Option<PathBuf>,
        /// Representation dimension
        #[arg(long)]
        r: usize,
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Lower edge of the robust box
        #[arg(long)]
        theta_lower: Option<f64>,
    },
    /// Monte Carlo few-shot risk of a weighting matrix
    Risk {
        #[command(flatten)]
        common: Common,
        /// Weighting as matrix CSV (d rows)
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        n2: Option<usize>,
    },
    /// Run one of the synthetic experiment sweeps
    Experiment {
        #[arg(value_parser = parse_kind)]
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
        /// Print the resolved config as JSON and exit
        #[arg(long)]
        describe: bool,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ExperimentKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, kind) {
        (Some(path), Some(k)) => ExperimentConfig::parse(&fs::read_to_string(path)?, Some(k))?,
        (Some(path), None) => ExperimentConfig::parse_or(&fs::read_to_string(path)?, ExperimentKind::Fig5)?,
        (None, k) => ExperimentConfig::default_for(k.unwrap_or(ExperimentKind::Fig5)),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(v) = &common.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(o) = &common.out {
        cfg.output_path = Some(o.display().to_string());
    }
    Ok(cfg)
}

fn spec_of(cfg: &ExperimentConfig) -> Result<ProblemSpec> {
    ProblemSpec::new(cfg.feature_spectrum.covariance()?, cfg.task_spectrum.covariance()?, cfg.sigma)
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_csv(BufReader::new(File::open(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, few_shot } => {
            let cfg = load_config(&common, None)?;
            let spec = spec_of(&cfg)?;
            let mut w = sink(common.out.as_deref())?;
            match few_shot {
                Some(n2) => write_few_shot_csv(&gen_few_shot(&spec, n2, cfg.seed)?, &mut w)?,
                None => write_meta_train_csv(&gen_meta_train(&spec, cfg.tasks, cfg.n1, cfg.seed)?, &mut w)?,
            }
            w.flush()?;
        }
        Command::Estimate {
            common,
            data,
            method,
            rank,
        } => {
            let set = read_meta_train_csv(BufReader::new(File::open(&data)?))?;
            let mat = match method {
                Estimator::Mom => mom_m_hat(&set)?.m_hat,
                Estimator::GHat => g_hat(&set)?.debiased,
                Estimator::SigmaF => sigma_f_hat(&set)?.matrix().clone(),
                Estimator::TaskAverage => task_average_b_hat(&set, rank)?.subspace.basis().clone(),
            };
            let mut w = sink(common.out.as_deref())?;
            write_matrix_csv(&mat, &mut w)?;
            w.flush()?;
        }
        Command::Optrep {
            common,
            task_cov,
            feature_cov,
            r,
            n2,
            sigma,
            theta_lower,
        } => {
            let cfg = load_config(&common, None)?;
            let n2 = n2.unwrap_or(cfg.n2);
            let sigma = sigma.unwrap_or(cfg.sigma);
            let (fc, ttil) = match task_cov {
                Some(p) => {
                    let ttil = CovarianceModel::from_symmetric_clipped(&read_matrix(&p)?)?;
                    let fc = match &feature_cov {
                        Some(f) => CovarianceModel::new(read_matrix(f)?)?,
                        None => CovarianceModel::identity(ttil.dim()),
                    };
                    (fc, ttil)
                }
                None => {
                    let spec = spec_of(&cfg)?;
                    let ttil = canonical_cov(spec.feature_cov(), spec.task_cov())?;
                    (spec.feature_cov().clone(), ttil)
                }
            };
            let bx = theta_lower.map(|lo| RobustBox::new(lo, ttil.dim(), n2, r)).transpose()?;
            let rep = optimal_rep_detail(r, &fc, &ttil, sigma, n2, bx.as_ref(), cfg.variant)?;
            let st = rep.reduction.sigma_ttil_r_diag();
            let risk = analytic_risk(&rep.theta, &st, rep.reduction.sigma_r, cfg.variant)?;
            if let Some(out) = &common.out {
                let mut w = sink(Some(out))?;
                write_matrix_csv(rep.weighting.matrix(), &mut w)?;
                w.flush()?;
            }
            let summary = serde_json::json!({
                "r": r,
                "n2": n2,
                "variant": cfg.variant.as_str(),
                "sigma_r": rep.reduction.sigma_r,
                "theta": rep.theta.theta(),
                "lambda_r": rep.lambda_r,
                "analytic_risk": risk.value,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Risk { common, weights, n2 } => {
            let cfg = load_config(&common, None)?;
            let spec = spec_of(&cfg)?;
            let w = EigenWeighting::new(read_matrix(&weights)?)?;
            let n2 = n2.unwrap_or(cfg.n2);
            let est = monte_carlo_risk(&spec, &w, n2, cfg.trials, cfg.seed)?;
            let v = serde_json::json!({
                "method": est.method.as_str(),
                "value": est.value,
                "stderr": est.stderr,
                "n2": n2,
                "trials": cfg.trials,
                "seed": cfg.seed,
            });
            let mut out = sink(common.out.as_deref())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("risk serializes"))?;
            out.flush()?;
        }
        Command::Experiment { kind, common, describe } => {
            let cfg = load_config(&common, Some(kind))?;
            cfg.validate()?;
            if describe {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let out = run_experiment(&cfg)?;
            for c in &out.checks {
                if c.passed {
                    info!("check {} passed: {}", c.name, c.detail);
                } else {
                    warn!("check {} failed: {}", c.name, c.detail);
                }
            }
            match &cfg.output_path {
                Some(path) => {
                    let path = PathBuf::from(path);
                    let mut w = sink(Some(&path))?;
                    out.table.write_csv(&mut w)?;
                    w.flush()?;
                    let mut side = path.clone().into_os_string();
                    side.push(".json");
                    fs::write(&side, out.sidecar_json(&cfg))?;
                    info!("wrote {} in {:.0} ms", path.display(), out.wall_time_ms);
                }
                None => {
                    let mut w = sink(None)?;
                    out.table.write_csv(&mut w)?;
                    w.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Parse(_) => 2,
        Error::NonConvergence { .. } | Error::Divergence(_) => 3,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
