use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqkit::harness::config::{BvmConfig, ClosureConfig};
use uqkit::harness::{dump_datasets, error_exit_code, run_experiment, ExperimentConfig, RunOptions, Suite};
use uqkit::UqError;

/// Benchmark suites for the uqkit uncertainty quantification toolkit.
#[derive(Parser)]
#[command(name = "uq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; every configured seed is split from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run (method, seed) cells concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Beta-Bernoulli posterior against its normal approximation.
    Bvm {
        #[command(flatten)]
        common: Common,
        /// True success probability.
        #[arg(long)]
        p: Option<f64>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<u64>>,
    },
    /// Gapped 1-D regression benchmark.
    Regress {
        #[command(flatten)]
        common: Common,
    },
    /// Two-moons classification benchmark.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Replica closure test of a linear least-squares fit.
    Closure {
        #[command(flatten)]
        common: Common,
        /// Multiplier of the quoted covariance.
        #[arg(long)]
        sigma_scale: Option<f64>,
    },
    /// Synthetic data utilities.
    Datasets {
        #[command(subcommand)]
        action: DatasetAction,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Write the generated data sets as CSV.
    Dump {
        /// Regress or classify config whose data settings and seeds to use.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: Option<&PathBuf>, suite: Suite) -> Result<Option<ExperimentConfig>, UqError> {
    let Some(path) = path else { return Ok(None) };
    let cfg = ExperimentConfig::load(path)?;
    if cfg.suite() != suite {
        return Err(UqError::Config(format!(
            "{} is a {} config, not {}",
            path.display(),
            cfg.suite().name(),
            suite.name()
        )));
    }
    Ok(Some(cfg))
}

fn require(cfg: Option<ExperimentConfig>, suite: Suite) -> Result<ExperimentConfig, UqError> {
    cfg.ok_or_else(|| UqError::Config(format!("the {} suite needs --config", suite.name())))
}

fn run(cli: Cli) -> Result<i32, UqError> {
    let (cfg, common) = match cli.command {
        Command::Bvm { common, p, ns } => {
            let ExperimentConfig::Bvm(mut c) = load(common.config.as_ref(), Suite::Bvm)?
                .unwrap_or(ExperimentConfig::Bvm(BvmConfig::default()))
            else {
                unreachable!()
            };
            if let Some(p) = p {
                c.p = p;
            }
            if let Some(ns) = ns {
                c.ns = ns;
            }
            (ExperimentConfig::Bvm(c), common)
        }
        Command::Closure { common, sigma_scale } => {
            let ExperimentConfig::Closure(mut c) = load(common.config.as_ref(), Suite::Closure)?
                .unwrap_or(ExperimentConfig::Closure(ClosureConfig::default()))
            else {
                unreachable!()
            };
            if let Some(s) = sigma_scale {
                c.sigma_scale = s;
            }
            (ExperimentConfig::Closure(c), common)
        }
        Command::Regress { common } => (require(load(common.config.as_ref(), Suite::Regress)?, Suite::Regress)?, common),
        Command::Classify { common } => {
            (require(load(common.config.as_ref(), Suite::Classify)?, Suite::Classify)?, common)
        }
        Command::Datasets {
            action: DatasetAction::Dump { config, seed, out },
        } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            for path in dump_datasets(cfg.as_ref(), seed, &out)? {
                println!("{}", out.join(path).display());
            }
            return Ok(0);
        }
    };
    cfg.validate()?;
    let out_dir = common
        .out
        .or_else(|| cfg.output_dir().map(PathBuf::from))
        .ok_or_else(|| UqError::Config("no output directory: pass --out or set output_dir".into()))?;
    let opts = RunOptions {
        out_dir,
        root_seed: common.seed,
        parallel: common.parallel,
    };
    let manifest = run_experiment(&cfg, &opts)?;
    for f in &manifest.failures {
        log::error!("{} failed on seed {}: {}", f.method, f.seed, f.error);
    }
    log::info!(
        "{} suite wrote {} files to {}",
        cfg.suite().name(),
        manifest.files.len() + 2,
        opts.out_dir.display()
    );
    Ok(manifest.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UQ_LOG", "info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
