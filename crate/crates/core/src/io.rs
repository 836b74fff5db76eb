//! Flat-file formats.
//!
//! * trace CSV: `time_s,ph`
//! * schedule CSV: `t_start_s,t_end_s,state` with state `dark` or `light`
//! * detection report: `key = value` header, a `index,decision_stat,bit`
//!   table, and the recovered bit string on its own `bits = ...` line
//! * fit result: one `key = value` line per parameter (units in the key),
//!   then rss, evaluation count and convergence flag
//!
//! Floats are written in Rust's shortest round-trip form, so every file reads
//! back to exactly the values that were written.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::channel::PhTrace;
use crate::error::{invalid, Error, Result};
use crate::estimator::{FitDomain, FitResult};
use crate::model::ModelParams;
use crate::modulator::{OpticalSchedule, Segment};
use crate::receiver::DetectionReport;

pub const TRACE_HEADER: [&str; 2] = ["time_s", "ph"];
pub const SCHEDULE_HEADER: [&str; 3] = ["t_start_s", "t_end_s", "state"];

/// Allowed deviation of a measured sample time from the uniform grid, as a
/// fraction of the sample interval.
pub const GRID_TOLERANCE: f64 = 1e-3;

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = found.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse(format!("expected header {}, got {}", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn parse_f64(field: Option<&str>, what: &str, line: u64) -> Result<f64> {
    let s = field.ok_or_else(|| Error::Parse(format!("line {line}: missing {what}")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: invalid {what} {s:?}")))
}

pub fn write_trace<W: Write>(trace: &PhTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (t, ph) in trace.times().zip(&trace.samples) {
        w.write_record([t.to_string(), ph.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace and checks that it is uniformly sampled.
pub fn read_trace<R: Read>(input: R) -> Result<PhTrace> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(r.headers()?, &TRACE_HEADER)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        times.push(parse_f64(rec.get(0), "time", line)?);
        values.push(parse_f64(rec.get(1), "pH", line)?);
    }
    if times.len() < 2 {
        return Err(invalid("trace needs at least 2 samples"));
    }
    let t0 = times[0];
    let interval = (times[times.len() - 1] - t0) / (times.len() - 1) as f64;
    if !(interval > 0.0) {
        return Err(invalid("trace times must be increasing"));
    }
    for (k, &t) in times.iter().enumerate() {
        let expected = t0 + k as f64 * interval;
        if (t - expected).abs() > GRID_TOLERANCE * interval {
            return Err(invalid(format!(
                "trace is not uniformly sampled: sample {k} at {t} s, expected {expected} s"
            )));
        }
    }
    // Prefer an interval that reproduces every written time exactly, so that
    // traces written by `write_trace` read back bit for bit.
    let rate = (1.0 / interval).round();
    let candidates = [if rate > 0.0 { 1.0 / rate } else { interval }, interval, times[1] - t0];
    let interval = candidates
        .into_iter()
        .find(|&step| times.iter().enumerate().all(|(k, &t)| t0 + k as f64 * step == t))
        .unwrap_or(interval);
    PhTrace::new(t0, interval, values)
}

pub fn write_schedule<W: Write>(schedule: &OpticalSchedule, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCHEDULE_HEADER)?;
    for seg in schedule.segments() {
        w.write_record([seg.start.to_string(), seg.end.to_string(), seg.state.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule<R: Read>(input: R) -> Result<OpticalSchedule> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(r.headers()?, &SCHEDULE_HEADER)?;
    let mut segments = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let start = parse_f64(rec.get(0), "t_start_s", line)?;
        let end = parse_f64(rec.get(1), "t_end_s", line)?;
        let state = rec
            .get(2)
            .ok_or_else(|| Error::Parse(format!("line {line}: missing state")))?
            .parse()?;
        segments.push(Segment { start, end, state });
    }
    OpticalSchedule::from_segments(segments)
}

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
fn key_values(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            let (k, v) = l.split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn get<'a>(kv: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))
}

fn get_f64(kv: &HashMap<String, String>, key: &str) -> Result<f64> {
    let v = get(kv, key)?;
    v.parse().map_err(|_| Error::Parse(format!("{key}: invalid number {v:?}")))
}

pub fn format_report(report: &DetectionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "threshold = {}", report.threshold);
    let _ = writeln!(s, "peak_reference = {}", report.peak_reference);
    let _ = writeln!(s, "dark_reference = {}", report.dark_reference);
    let _ = writeln!(s, "sync_offset_s = {}", report.sync_offset);
    let _ = writeln!(s, "n_symbols = {}", report.bits.len());
    s.push('\n');
    s.push_str("index,decision_stat,bit\n");
    for (k, (stat, bit)) in report.per_symbol_min.iter().zip(report.bits.bits()).enumerate() {
        let _ = writeln!(s, "{k},{stat},{}", u8::from(*bit));
    }
    s.push('\n');
    let _ = writeln!(s, "bits = {}", report.bits);
    s
}

pub fn parse_report(text: &str) -> Result<DetectionReport> {
    let header: String = text.lines().take_while(|l| !l.starts_with("index,")).collect::<Vec<_>>().join("\n");
    let kv = key_values(&header);
    let tail = key_values(text.lines().skip_while(|l| !l.starts_with("bits")).collect::<Vec<_>>().join("\n").as_str());
    let n: usize = get(&kv, "n_symbols")?
        .parse()
        .map_err(|_| Error::Parse("n_symbols: invalid count".into()))?;
    let mut stats = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for (k, line) in text
        .lines()
        .skip_while(|l| !l.starts_with("index,"))
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .enumerate()
    {
        let mut fields = line.split(',');
        let idx: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad symbol row {line:?}")))?;
        if idx != k {
            return Err(Error::Parse(format!("symbol rows out of order at {line:?}")));
        }
        stats.push(parse_f64(fields.next(), "decision_stat", k as u64)?);
        bits.push(match fields.next().map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(Error::Parse(format!("bad bit in row {line:?}"))),
        });
    }
    if bits.len() != n {
        return Err(Error::Parse(format!("expected {n} symbol rows, found {}", bits.len())));
    }
    let line_bits: crate::modulator::BitSequence = get(&tail, "bits")?.parse()?;
    if line_bits.bits() != bits.as_slice() {
        return Err(Error::Parse("bit string does not match the symbol table".into()));
    }
    Ok(DetectionReport {
        bits: line_bits,
        threshold: get_f64(&kv, "threshold")?,
        peak_reference: get_f64(&kv, "peak_reference")?,
        dark_reference: get_f64(&kv, "dark_reference")?,
        sync_offset: get_f64(&kv, "sync_offset_s")?,
        per_symbol_min: stats,
    })
}

const FIT_KEYS: [&str; 6] = [
    "c_eq_dark_mol_per_l",
    "c_eq_light_mol_per_l",
    "tau_dark_s",
    "tau_light_s",
    "drift_slope_mol_per_l_per_s",
    "c_init_mol_per_l",
];

pub fn format_fit(result: &FitResult) -> String {
    let mut s = String::new();
    for (key, value) in FIT_KEYS.iter().zip(result.params.to_array()) {
        let _ = writeln!(s, "{key} = {value}");
    }
    let _ = writeln!(s, "fit_domain = {}", result.fit_domain);
    let _ = writeln!(s, "rss = {}", result.rss);
    let _ = writeln!(s, "n_evals = {}", result.n_evals);
    let _ = writeln!(s, "converged = {}", result.converged);
    let per_start: Vec<String> = result.per_start_rss.iter().map(f64::to_string).collect();
    let _ = writeln!(s, "per_start_rss = {}", per_start.join(";"));
    s
}

pub fn parse_fit(text: &str) -> Result<FitResult> {
    let kv = key_values(text);
    let mut values = [0.0; 6];
    for (slot, key) in values.iter_mut().zip(FIT_KEYS) {
        *slot = get_f64(&kv, key)?;
    }
    let per_start_rss = match get(&kv, "per_start_rss")? {
        "" => Vec::new(),
        list => list
            .split(';')
            .map(|v| v.trim().parse().map_err(|_| Error::Parse(format!("per_start_rss: invalid {v:?}"))))
            .collect::<Result<_>>()?,
    };
    Ok(FitResult {
        params: ModelParams::from_array(values),
        rss: get_f64(&kv, "rss")?,
        fit_domain: get(&kv, "fit_domain")?.parse::<FitDomain>()?,
        n_evals: get(&kv, "n_evals")?
            .parse()
            .map_err(|_| Error::Parse("n_evals: invalid count".into()))?,
        converged: get(&kv, "converged")?
            .parse()
            .map_err(|_| Error::Parse("converged: expected true or false".into()))?,
        per_start_rss,
    })
}
