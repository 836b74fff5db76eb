//! Argument parsing and dispatch for the `phlink` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use phlink::io::format_fit;
use phlink::Error;

use crate::commands::{self, DetectOptions, FigureKind, FIT_FILE, REPORT_FILE, SWEEP_FILE};
use crate::config::{FitDomainName, RunConfig, SweepParameter, SweepSection};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "phlink", version, about = "Simulate, detect and fit a light-driven pH link")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a transmission: writes trace.csv, schedule.csv and bits.txt.
    Simulate(SimulateArgs),
    /// Recover bits from a pH trace: writes report.txt and prints the bits.
    Detect(DetectArgs),
    /// Fit channel parameters to a trace and its schedule: writes fit.txt.
    Fit(FitArgs),
    /// Bit error rate over a grid of one parameter: writes sweep.csv.
    Sweep(SweepArgs),
    /// Plot data for one experiment: writes figure.csv (and symbols.csv).
    Figure(FigureArgs),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory [default: `output.dir` of the config, else `out`]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self, cfg: Option<&RunConfig>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| cfg.map(|c| c.output.dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Bit string replacing the configured bits.
    #[arg(long)]
    pub bits: Option<String>,
    /// Noise standard deviation, mol/l.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Drift slope, mol/l/s.
    #[arg(long, allow_negative_numbers = true)]
    pub drift_slope: Option<f64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Receiver, modulation and bit-count settings. Without it the receiver
    /// defaults (1 min symbols, duty 0.25) apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of symbols to decide [default: length of the configured bits]
    #[arg(long)]
    pub n_symbols: Option<usize>,
    /// Transmission start in seconds, instead of estimating it.
    #[arg(long)]
    pub sync_offset: Option<f64>,
    /// Earlier report whose threshold is reused.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    /// Config whose `[fit]` section supplies the fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub domain: Option<FitDomainName>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub parameter: Option<SweepParameter>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Parallel trials [default: number of CPUs]
    #[arg(long, env = "PHLINK_WORKERS")]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub which: FigureKind,
    #[command(flatten)]
    pub out: OutDir,
}

fn revalidate(cfg: RunConfig) -> CliResult<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command, writing human-readable results to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let print = |stdout: &mut dyn Write, text: &str| {
        stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
    };
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = RunConfig::load(&a.config)?;
            if let Some(bits) = a.bits {
                cfg.bits = Some(bits);
                cfg.random_bits = None;
            }
            if let Some(s) = a.sigma {
                cfg.noise.sigma_mol_per_l = s;
            }
            if let Some(s) = a.noise_seed {
                cfg.noise.seed = s;
            }
            if let Some(m) = a.drift_slope {
                cfg.model.drift_slope_mol_per_l_per_s = m;
            }
            let cfg = revalidate(cfg)?;
            let out = commands::simulate(&cfg, &a.out.resolve(Some(&cfg)))?;
            print(stdout, &format!("{}\n", out.bits))?;
            if out.clamp_count > 0 {
                eprintln!("warning: {} samples clamped to the concentration floor", out.clamp_count);
            }
        }
        Command::Detect(a) => {
            let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
            let rx = cfg.as_ref().map(RunConfig::receiver).unwrap_or_default();
            let n_symbols = match (a.n_symbols, &cfg) {
                (Some(n), _) => n,
                (None, Some(c)) => c.bit_sequence()?.len(),
                (None, None) => return Err(CliError::Config("give --n-symbols or a --config with bits".into())),
            };
            let opts = DetectOptions { sync_offset: a.sync_offset, calibration: a.calibration };
            let report_path = a.out.resolve(cfg.as_ref()).join(REPORT_FILE);
            let report = commands::detect_file(&a.trace, &rx, n_symbols, &opts, &report_path)?;
            print(stdout, &format!("{}\n", report.bits))?;
        }
        Command::Fit(a) => {
            let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
            let mut fit_cfg = cfg.as_ref().map(RunConfig::fit_config).unwrap_or_default();
            if let Some(d) = a.domain {
                fit_cfg.fit_domain = d.into();
            }
            if let Some(n) = a.n_starts {
                fit_cfg.n_starts = n;
            }
            if let Some(s) = a.seed {
                fit_cfg.seed = s;
            }
            fit_cfg.validate()?;
            let out = a.out.resolve(cfg.as_ref()).join(FIT_FILE);
            match commands::fit_files(&a.trace, &a.schedule, &fit_cfg, &out) {
                Ok(result) => print(stdout, &format_fit(&result))?,
                Err(CliError::Core(Error::NonConvergence(best))) => {
                    print(stdout, &format_fit(&best))?;
                    return Err(Error::NonConvergence(best).into());
                }
                Err(e) => return Err(e),
            }
        }
        Command::Sweep(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let base = cfg.sweep.clone();
            let spec = SweepSection {
                parameter: a
                    .parameter
                    .or(base.as_ref().map(|s| s.parameter))
                    .ok_or_else(|| CliError::Config("sweep needs --parameter or [sweep].parameter".into()))?,
                values: a
                    .values
                    .or(base.as_ref().map(|s| s.values.clone()))
                    .ok_or_else(|| CliError::Config("sweep needs --values or [sweep].values".into()))?,
                trials: a.trials.or(base.as_ref().map(|s| s.trials)).unwrap_or(100),
                master_seed: a.master_seed.or(base.as_ref().map(|s| s.master_seed)).unwrap_or(0),
            };
            let cfg = revalidate(RunConfig { sweep: Some(spec.clone()), ..cfg })?;
            let workers = a
                .workers
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            let records = commands::sweep(&cfg, &spec, workers)?;
            commands::write_sweep(&records, &a.out.resolve(Some(&cfg)).join(SWEEP_FILE))?;
            print(stdout, &commands::format_sweep(&records))?;
        }
        Command::Figure(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let out = commands::figure(&cfg, a.which, &a.out.resolve(Some(&cfg)))?;
            print(stdout, &format!("{}\n", out.data_path.display()))?;
            if let Some(p) = out.symbols_path {
                print(stdout, &format!("{}\n", p.display()))?;
            }
        }
    }
    Ok(())
}
