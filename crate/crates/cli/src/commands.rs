//! The subcommands, as library functions writing into an output directory.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use phlink::io::{format_fit, format_report, parse_report, read_schedule, read_trace, write_schedule, write_trace};
use phlink::receiver::{differentiate, smooth};
use phlink::{
    detect, detect_calibrated, fit, prepend_dark_adaptation, schedule_from_bits, seed, simulate_trace, BitSequence,
    DetectionReport, Error, FitConfig, FitResult, NoiseConfig, OpticalSchedule, PhTrace, ReceiverConfig,
    SimulationReport,
};
use rayon::prelude::*;

use crate::config::{random_bits, RunConfig, SweepSection};
use crate::error::{CliError, CliResult};

pub const TRACE_FILE: &str = "trace.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const BITS_FILE: &str = "bits.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const FIT_FILE: &str = "fit.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FIGURE_FILE: &str = "figure.csv";
pub const SYMBOLS_FILE: &str = "symbols.csv";

pub const SWEEP_HEADER: &str = "swept_value,trials,bit_errors,total_bits,ber,sync_failures";
pub const FIGURE_HEADER: &str = "time_s,state,ph,ph_model,smoothed_ph,delta_ph,threshold,symbol_boundary";
pub const SYMBOLS_HEADER: &str = "index,window_start_s,window_end_s,decision_stat,bit,sent_bit";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

pub fn load_trace(path: &Path) -> CliResult<PhTrace> {
    Ok(read_trace(open(path)?)?)
}

pub fn load_schedule(path: &Path) -> CliResult<OpticalSchedule> {
    Ok(read_schedule(open(path)?)?)
}

/// Full schedule (dark adaptation + symbols) for the given bits.
pub fn transmit_schedule(cfg: &RunConfig, bits: &BitSequence) -> CliResult<OpticalSchedule> {
    let symbols = schedule_from_bits(bits, &cfg.modulation()?)?;
    Ok(prepend_dark_adaptation(&symbols, cfg.dark_adaptation_s)?)
}

fn run_channel(cfg: &RunConfig, bits: &BitSequence, noise: &NoiseConfig) -> CliResult<(OpticalSchedule, SimulationReport)> {
    let sched = transmit_schedule(cfg, bits)?;
    let report = simulate_trace(&sched, &cfg.params()?, noise, cfg.sample_rate_hz)?;
    Ok((sched, report))
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub bits: BitSequence,
    pub clamp_count: usize,
    pub trace_path: PathBuf,
    pub schedule_path: PathBuf,
    pub bits_path: PathBuf,
}

/// Writes `trace.csv`, `schedule.csv` and `bits.txt` into `out_dir`.
pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> CliResult<SimulateOutput> {
    let bits = cfg.bit_sequence()?;
    let (sched, report) = run_channel(cfg, &bits, &cfg.noise())?;

    let trace_path = out_dir.join(TRACE_FILE);
    let mut w = create(&trace_path)?;
    write_trace(&report.trace, &mut w)?;
    w.flush().map_err(|e| CliError::io(&trace_path, e))?;

    let schedule_path = out_dir.join(SCHEDULE_FILE);
    let mut w = create(&schedule_path)?;
    write_schedule(&sched, &mut w)?;
    w.flush().map_err(|e| CliError::io(&schedule_path, e))?;

    let bits_path = out_dir.join(BITS_FILE);
    write_text(&bits_path, &format!("{bits}\n"))?;

    Ok(SimulateOutput { bits, clamp_count: report.clamp_count, trace_path, schedule_path, bits_path })
}

/// Where detection gets its synchronization and threshold from.
#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub sync_offset: Option<f64>,
    /// Report of an earlier run whose threshold (and, unless `sync_offset` is
    /// given, start time) is reused.
    pub calibration: Option<PathBuf>,
}

pub fn detect_file(
    trace_path: &Path,
    rx: &ReceiverConfig,
    n_symbols: usize,
    opts: &DetectOptions,
    report_path: &Path,
) -> CliResult<DetectionReport> {
    let trace = load_trace(trace_path)?;
    let report = match &opts.calibration {
        Some(calib_path) => {
            let text = fs::read_to_string(calib_path).map_err(|e| CliError::io(calib_path, e))?;
            let calib = parse_report(&text)?;
            let offset = opts.sync_offset.unwrap_or(calib.sync_offset);
            detect_calibrated(&trace, rx, n_symbols, offset, calib.thresholds())?
        }
        None => detect(&trace, rx, n_symbols, opts.sync_offset)?,
    };
    write_text(report_path, &format_report(&report))?;
    Ok(report)
}

/// Fits the channel parameters and writes the result. A fit that stops short
/// of convergence is still written before the error is returned.
pub fn fit_files(trace_path: &Path, schedule_path: &Path, fit_cfg: &FitConfig, out: &Path) -> CliResult<FitResult> {
    let trace = load_trace(trace_path)?;
    let sched = load_schedule(schedule_path)?;
    match fit(&sched, &trace, fit_cfg) {
        Ok(result) => {
            write_text(out, &format_fit(&result))?;
            if result.converged {
                Ok(result)
            } else {
                Err(Error::NonConvergence(Box::new(result)).into())
            }
        }
        Err(Error::NonConvergence(best)) => {
            write_text(out, &format_fit(&best))?;
            Err(Error::NonConvergence(best).into())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerRecord {
    pub swept_value: f64,
    pub trials: usize,
    pub bit_errors: usize,
    pub total_bits: usize,
    pub ber: f64,
    pub sync_failures: usize,
}

struct TrialOutcome {
    bit_errors: usize,
    total_bits: usize,
    sync_failed: bool,
}

/// One transmission with its own bits (for random sequences) and noise,
/// both keyed by `trial_seed`.
fn sweep_trial(cfg: &RunConfig, trial_seed: u64) -> CliResult<TrialOutcome> {
    let bits = match &cfg.random_bits {
        Some(r) => random_bits(r.count, seed::derive(trial_seed, 0))?,
        None => cfg.bit_sequence()?,
    };
    let noise = NoiseConfig { sigma: cfg.noise.sigma_mol_per_l, seed: seed::derive(trial_seed, 1) };
    let (_, sim) = run_channel(cfg, &bits, &noise)?;
    match detect(&sim.trace, &cfg.receiver(), bits.len(), None) {
        Ok(report) => Ok(TrialOutcome {
            bit_errors: report.bits.hamming_distance(&bits),
            total_bits: bits.len(),
            sync_failed: false,
        }),
        // no usable synchronization (none found, or one so late that the
        // symbol windows run off the trace): every transmitted one is lost
        Err(Error::SyncFailure(_) | Error::WindowOverrun { .. }) => {
            Ok(TrialOutcome { bit_errors: bits.count_ones(), total_bits: bits.len(), sync_failed: true })
        }
        Err(e) => Err(e.into()),
    }
}

/// Monte-Carlo bit error rates over a grid of one parameter. Trial `j` at
/// grid point `i` uses seed `derive(derive(master_seed, i), j)`, so results do
/// not depend on the worker count.
pub fn sweep(cfg: &RunConfig, spec: &SweepSection, workers: usize) -> CliResult<Vec<BerRecord>> {
    cfg.check_receiver_coverage()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let mut records = Vec::with_capacity(spec.values.len());
    for (i, &value) in spec.values.iter().enumerate() {
        let point = cfg.with_value(spec.parameter, value)?;
        let point_seed = seed::derive(spec.master_seed, i as u64);
        let outcomes: Vec<TrialOutcome> = pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|j| sweep_trial(&point, seed::derive(point_seed, j as u64)))
                .collect::<CliResult<_>>()
        })?;
        let bit_errors = outcomes.iter().map(|o| o.bit_errors).sum();
        let total_bits = outcomes.iter().map(|o| o.total_bits).sum();
        records.push(BerRecord {
            swept_value: value,
            trials: spec.trials,
            bit_errors,
            total_bits,
            ber: bit_errors as f64 / total_bits as f64,
            sync_failures: outcomes.iter().filter(|o| o.sync_failed).count(),
        });
    }
    Ok(records)
}

pub fn format_sweep(records: &[BerRecord]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.swept_value, r.trials, r.bit_errors, r.total_bits, r.ber, r.sync_failures
        );
    }
    s
}

pub fn parse_sweep(text: &str) -> CliResult<Vec<BerRecord>> {
    let bad = |line: usize| CliError::Config(format!("sweep table line {line}: malformed row"));
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(CliError::Config(format!("sweep table must start with `{SWEEP_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 2));
            }
            Ok(BerRecord {
                swept_value: f[0].parse().map_err(|_| bad(i + 2))?,
                trials: f[1].parse().map_err(|_| bad(i + 2))?,
                bit_errors: f[2].parse().map_err(|_| bad(i + 2))?,
                total_bits: f[3].parse().map_err(|_| bad(i + 2))?,
                ber: f[4].parse().map_err(|_| bad(i + 2))?,
                sync_failures: f[5].parse().map_err(|_| bad(i + 2))?,
            })
        })
        .collect()
}

pub fn write_sweep(records: &[BerRecord], path: &Path) -> CliResult<()> {
    write_text(path, &format_sweep(records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FigureKind {
    /// One long symbol: rise under light, recovery in the dark.
    SingleShot,
    /// The configured bit sequence.
    MultiShot,
    /// The configured bit sequence plus the receiver's decisions.
    Detection,
}

#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub data_path: PathBuf,
    pub symbols_path: Option<PathBuf>,
    pub report: Option<DetectionReport>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Value of `signal` at the time of sample `k` of the raw trace, if the
/// signal has started by then.
fn aligned(signal_start: f64, dt: f64, samples: &[f64], t: f64) -> Option<f64> {
    let idx = ((t - signal_start) / dt).round();
    (idx >= 0.0).then(|| samples.get(idx as usize).copied()).flatten()
}

/// Plot data: one row per sample with the optical state, noisy and noiseless
/// pH, the smoothed and differenced signals, and symbol boundaries. The
/// detection variant adds the threshold column and a per-symbol table.
pub fn figure(cfg: &RunConfig, which: FigureKind, out_dir: &Path) -> CliResult<FigureOutput> {
    let bits = match which {
        FigureKind::SingleShot => BitSequence::new(vec![true]),
        FigureKind::MultiShot | FigureKind::Detection => cfg.bit_sequence()?,
    };
    if which == FigureKind::Detection {
        cfg.check_receiver_coverage()?;
    }
    let (sched, sim) = run_channel(cfg, &bits, &cfg.noise())?;
    let trace = &sim.trace;
    let model = sim.noiseless_trace.as_ref().unwrap_or(trace);
    let rx = cfg.receiver();
    let dt = trace.sample_interval;

    let smoothed = smooth(trace, rx.smooth_len).ok();
    let diff = smoothed.as_ref().and_then(|s| differentiate(s, rx.diff_lag).ok());
    let report = match which {
        FigureKind::Detection => Some(detect(trace, &rx, bits.len(), None)?),
        _ => None,
    };

    let symbol_duration = cfg.modulation.symbol_duration_s;
    let is_boundary = |t: f64| {
        let k = ((t - cfg.dark_adaptation_s) / symbol_duration).round();
        k >= 0.0 && k <= bits.len() as f64 && (t - (cfg.dark_adaptation_s + k * symbol_duration)).abs() < 0.5 * dt
    };

    let mut data = format!("{FIGURE_HEADER}\n");
    for (k, t) in trace.times().enumerate() {
        let state = sched.state_at(t).map(|s| s.as_str()).unwrap_or("");
        let sm = smoothed.as_ref().and_then(|s| aligned(s.t_start, dt, &s.samples, t));
        let d = diff.as_ref().and_then(|s| aligned(s.t_start, dt, &s.samples, t));
        let _ = writeln!(
            data,
            "{t},{state},{},{},{},{},{},{}",
            trace.samples[k],
            model.samples[k],
            opt(sm),
            opt(d),
            opt(report.as_ref().map(|r| r.threshold)),
            u8::from(is_boundary(t)),
        );
    }
    let data_path = out_dir.join(FIGURE_FILE);
    write_text(&data_path, &data)?;

    let symbols_path = match &report {
        Some(r) => {
            let w = rx.decision_window();
            let mut table = format!("{SYMBOLS_HEADER}\n");
            for (k, (&stat, (&got, &sent))) in
                r.per_symbol_min.iter().zip(r.bits.bits().iter().zip(bits.bits())).enumerate()
            {
                let a = r.sync_offset + k as f64 * symbol_duration;
                let _ = writeln!(table, "{k},{a},{},{stat},{},{}", a + w, u8::from(got), u8::from(sent));
            }
            let path = out_dir.join(SYMBOLS_FILE);
            write_text(&path, &table)?;
            write_text(&out_dir.join(REPORT_FILE), &format_report(r))?;
            Some(path)
        }
        None => None,
    };
    Ok(FigureOutput { data_path, symbols_path, report })
}
