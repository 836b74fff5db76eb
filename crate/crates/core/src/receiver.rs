//! Differential threshold receiver.
//!
//! The pH trace is smoothed with a trailing moving average, differenced at a
//! fixed lag, and each symbol is decided from the minimum of the differenced
//! signal inside a window aligned to the transmission start. Illumination
//! drives the pH down, so a `1` shows up as a pronounced negative peak while a
//! slow baseline drift only adds a roughly constant offset.
//!
//! The decision threshold is `beta * peak + (1 - beta) * dark`, where `peak`
//! is the minimum reached during the first transmitted `1` and `dark` is the
//! mean differenced value during the tail of the dark adaptation period.

use std::collections::VecDeque;

use crate::channel::PhTrace;
use crate::error::{invalid, Error, Result};
use crate::modulator::BitSequence;

/// Tolerance, in samples, when mapping times onto the sample grid.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    /// Moving-average length, samples.
    pub smooth_len: usize,
    /// Differencing lag, samples.
    pub diff_lag: usize,
    /// Threshold placement between the dark reference (0) and the peak (1).
    pub beta: f64,
    /// s
    pub symbol_duration: f64,
    pub duty_fraction: f64,
    /// Hz
    pub sample_rate: f64,
    /// Length of the dark reference window, s.
    pub adaptation_window: f64,
    /// Synchronization fires this many standard deviations below the dark mean.
    pub sync_k: f64,
    /// Lower bound on the synchronization margin, pH units. Keeps a perfectly
    /// flat (noiseless) baseline from triggering on rounding-level wiggles.
    pub sync_min_margin: f64,
    /// Average the peaks of a leading run of ones instead of using only the
    /// first one.
    pub multi_peak: bool,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            smooth_len: 30,
            diff_lag: 20,
            beta: 0.25,
            symbol_duration: 60.0,
            duty_fraction: 0.25,
            sample_rate: 1.0,
            adaptation_window: 300.0,
            sync_k: 5.0,
            sync_min_margin: 1e-4,
            multi_peak: false,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_len < 1 {
            return Err(invalid("smoothing length must be >= 1 sample"));
        }
        if self.diff_lag < 1 {
            return Err(invalid("differencing lag must be >= 1 sample"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid(format!("sample rate must be > 0 Hz, got {}", self.sample_rate)));
        }
        if !(self.symbol_duration * self.sample_rate >= 1.0) {
            return Err(invalid("symbol interval must span at least one sample"));
        }
        if !(self.duty_fraction > 0.0 && self.duty_fraction <= 1.0) {
            return Err(invalid(format!("duty fraction must be in (0, 1], got {}", self.duty_fraction)));
        }
        if !(self.adaptation_window > 0.0 && self.adaptation_window.is_finite()) {
            return Err(invalid("adaptation window must be > 0 s"));
        }
        if !(self.sync_k >= 0.0 && self.sync_min_margin >= 0.0) {
            return Err(invalid("synchronization margins must be >= 0"));
        }
        Ok(())
    }

    pub fn sample_interval(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Combined group delay of smoother and differencer, in samples.
    pub fn group_delay_samples(&self) -> f64 {
        (self.smooth_len as f64 - 1.0) / 2.0 + self.diff_lag as f64 / 2.0
    }

    /// Extent of each symbol's decision window, s.
    pub fn decision_window(&self) -> f64 {
        self.duty_fraction * self.symbol_duration + self.group_delay_samples() * self.sample_interval()
    }

    fn check_trace_rate(&self, interval: f64) -> Result<()> {
        let expected = self.sample_interval();
        if (interval - expected).abs() > 1e-6 * expected {
            return Err(invalid(format!(
                "trace sample interval {interval} s does not match receiver sample rate {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Lag-differenced (smoothed) pH signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSignal {
    pub t_start: f64,
    pub sample_interval: f64,
    pub samples: Vec<f64>,
}

impl DiffSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t_start + index as f64 * self.sample_interval
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// First sample index at or after `t`, possibly negative or past the end.
    fn index_at_or_after(&self, t: f64) -> isize {
        ((t - self.t_start) / self.sample_interval - GRID_EPS).ceil() as isize
    }

    /// Sample index range covering the half-open time window `[a, b)`.
    fn window(&self, a: f64, b: f64) -> (isize, isize) {
        (self.index_at_or_after(a), self.index_at_or_after(b))
    }
}

/// Decision threshold and its two references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub threshold: f64,
    pub peak_reference: f64,
    pub dark_reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub bits: BitSequence,
    pub threshold: f64,
    pub peak_reference: f64,
    pub dark_reference: f64,
    /// Estimated (or supplied) transmission start, s.
    pub sync_offset: f64,
    pub per_symbol_min: Vec<f64>,
}

impl DetectionReport {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            threshold: self.threshold,
            peak_reference: self.peak_reference,
            dark_reference: self.dark_reference,
        }
    }
}

fn sum_in_order(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |acc, x| acc + x)
}

/// Trailing moving average; the output starts `smooth_len - 1` samples later.
pub fn smooth(trace: &PhTrace, smooth_len: usize) -> Result<PhTrace> {
    if smooth_len < 1 {
        return Err(invalid("smoothing length must be >= 1"));
    }
    if trace.len() < smooth_len {
        return Err(invalid(format!(
            "trace has {} samples, fewer than the smoothing length {smooth_len}",
            trace.len()
        )));
    }
    let scale = smooth_len as f64;
    let samples = trace
        .samples
        .windows(smooth_len)
        .map(|w| sum_in_order(w.iter().copied()) / scale)
        .collect();
    Ok(PhTrace {
        t_start: trace.time(smooth_len - 1),
        sample_interval: trace.sample_interval,
        samples,
    })
}

/// `out[n] = in[n] - in[n - lag]`, stamped at the time of `in[n]`.
pub fn differentiate(trace: &PhTrace, diff_lag: usize) -> Result<DiffSignal> {
    if diff_lag < 1 {
        return Err(invalid("differencing lag must be >= 1"));
    }
    if trace.len() <= diff_lag {
        return Err(invalid(format!(
            "trace has {} samples, needs more than the lag {diff_lag}",
            trace.len()
        )));
    }
    let samples = trace.samples[diff_lag..]
        .iter()
        .zip(&trace.samples)
        .map(|(now, before)| now - before)
        .collect();
    Ok(DiffSignal {
        t_start: trace.time(diff_lag),
        sample_interval: trace.sample_interval,
        samples,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = sum_in_order(xs.iter().copied()) / n;
    let var = sum_in_order(xs.iter().map(|x| (x - mean) * (x - mean))) / n;
    (mean, var.sqrt())
}

/// Noise std of the differenced signal in the reference window.
///
/// Smoothing makes neighbouring samples of `diff` strongly correlated, so a
/// plain sample std over a few hundred samples is itself very noisy. First
/// differences of `diff` are close to uncorrelated; their spread gives the
/// white-noise level, which is then scaled by the filter's noise gain.
fn reference_noise_std(xs: &[f64], cfg: &ReceiverConfig) -> f64 {
    let (l, d) = (cfg.smooth_len, cfg.diff_lag);
    // impulse response of smooth-then-difference
    let mut w = vec![0.0; l + d + 1];
    for k in 0..l {
        w[k] += 1.0 / l as f64;
        w[k + d] -= 1.0 / l as f64;
    }
    let gain: f64 = w.iter().map(|v| v * v).sum();
    let step_gain: f64 = std::iter::once(w[0]).chain(w.windows(2).map(|p| p[1] - p[0])).map(|v| v * v).sum();
    let steps: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
    let (_, step_std) = mean_std(&steps);
    step_std * (gain / step_gain).sqrt()
}

/// Outcome of a synchronization attempt on a possibly incomplete signal.
enum SyncSearch {
    Found(f64),
    NeedMore,
}

/// Shared by batch and streaming detection. With `complete = false` it
/// returns `NeedMore` whenever the answer could still change with more data.
fn locate_sync(diff: &DiffSignal, cfg: &ReceiverConfig, complete: bool) -> Result<SyncSearch> {
    let dt = diff.sample_interval;
    let n_ref = (cfg.adaptation_window / dt).round() as usize;
    if n_ref < 2 {
        return Err(invalid("adaptation window must span at least 2 samples"));
    }
    if diff.len() <= n_ref {
        return if complete {
            Err(Error::SyncFailure(format!(
                "differenced signal ({} samples) does not extend past the {n_ref}-sample reference window",
                diff.len()
            )))
        } else {
            Ok(SyncSearch::NeedMore)
        };
    }
    let (mu, _) = mean_std(&diff.samples[..n_ref]);
    let sigma = reference_noise_std(&diff.samples[..n_ref], cfg);
    let level = mu - (cfg.sync_k * sigma).max(cfg.sync_min_margin);

    let Some(cross) = (n_ref..diff.len()).find(|&i| diff.samples[i] < level) else {
        return if complete {
            Err(Error::SyncFailure(format!(
                "differenced signal never drops below {level:e} (dark mean {mu:e}, std {sigma:e})"
            )))
        } else {
            Ok(SyncSearch::NeedMore)
        };
    };

    // Span of one isolated pulse response, in samples.
    let pulse = cfg.duty_fraction * cfg.symbol_duration / dt;
    let lobe = (pulse + (cfg.smooth_len + cfg.diff_lag) as f64).ceil() as usize;
    let half = lobe / 2 + 1;
    let search_end = cross + lobe;
    if !complete && diff.len() < search_end + half + 1 {
        return Ok(SyncSearch::NeedMore);
    }
    let xs = &diff.samples;
    let search_end = search_end.min(xs.len());
    let peak_idx = (cross..search_end)
        .fold(cross, |best, i| if xs[i] < xs[best] { i } else { best });

    // Midpoint of the half-depth crossings around the peak.
    let h = 0.5 * (mu + xs[peak_idx]);
    let lo_limit = peak_idx.saturating_sub(half).max(n_ref.saturating_sub(1));
    let hi_limit = (peak_idx + half).min(xs.len() - 1);
    let left = (lo_limit..peak_idx).rev().find(|&j| xs[j] >= h).map(|j| {
        diff.time(j) + (xs[j] - h) / (xs[j] - xs[j + 1]) * dt
    });
    let right = (peak_idx + 1..=hi_limit).find(|&j| xs[j] >= h).map(|j| {
        diff.time(j - 1) + (h - xs[j - 1]) / (xs[j] - xs[j - 1]) * dt
    });
    let t_peak = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        _ => diff.time(peak_idx),
    };

    let start = t_peak - cfg.group_delay_samples() * dt - 0.5 * cfg.duty_fraction * cfg.symbol_duration;
    let steps = ((start - diff.t_start) / dt).round();
    Ok(SyncSearch::Found(diff.t_start + steps * dt))
}

/// Estimates the transmission start from the first negative excursion.
///
/// The reference statistics come from the first `adaptation_window` seconds
/// of the differenced signal, which must be dark.
pub fn synchronize(diff: &DiffSignal, cfg: &ReceiverConfig) -> Result<f64> {
    cfg.validate()?;
    match locate_sync(diff, cfg, true)? {
        SyncSearch::Found(t) => Ok(t),
        SyncSearch::NeedMore => unreachable!("complete search never asks for more data"),
    }
}

fn window_min(diff: &DiffSignal, a: f64, b: f64) -> Result<f64> {
    let (lo, hi) = diff.window(a, b);
    if lo < 0 {
        return Err(invalid(format!(
            "window [{a}, {b}) starts before the differenced signal (t = {})",
            diff.t_start
        )));
    }
    if hi as usize > diff.len() {
        return Err(Error::WindowOverrun { needed_s: b, available_s: diff.end_time() });
    }
    if hi <= lo {
        return Err(invalid(format!("window [{a}, {b}) contains no samples")));
    }
    Ok(diff.samples[lo as usize..hi as usize]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

fn dark_reference(diff: &DiffSignal, cfg: &ReceiverConfig, sync_offset: f64) -> Result<f64> {
    let (lo, hi) = diff.window(sync_offset - cfg.adaptation_window, sync_offset);
    if lo < 0 {
        return Err(invalid(format!(
            "adaptation window [{}, {sync_offset}) starts before the differenced signal (t = {})",
            sync_offset - cfg.adaptation_window,
            diff.t_start
        )));
    }
    let hi = hi.min(diff.len() as isize);
    if hi - lo < 1 {
        return Err(invalid("adaptation window contains no samples"));
    }
    Ok(mean_std(&diff.samples[lo as usize..hi as usize]).0)
}

/// Peak reference, dark reference and the resulting decision threshold.
pub fn compute_threshold(diff: &DiffSignal, cfg: &ReceiverConfig, sync_offset: f64) -> Result<Thresholds> {
    cfg.validate()?;
    let dark = dark_reference(diff, cfg, sync_offset)?;
    let w = cfg.decision_window();
    let first = window_min(diff, sync_offset, sync_offset + w)?;
    if !(first < dark) {
        return Err(Error::SyncFailure(format!(
            "no negative excursion below the dark reference {dark:e} in the first symbol"
        )));
    }
    let peak = if cfg.multi_peak {
        let cutoff = 0.5 * (dark + first);
        let mut peaks = vec![first];
        for k in 1.. {
            let a = sync_offset + k as f64 * cfg.symbol_duration;
            match window_min(diff, a, a + w) {
                Ok(m) if m <= cutoff => peaks.push(m),
                _ => break,
            }
        }
        sum_in_order(peaks.iter().copied()) / peaks.len() as f64
    } else {
        first
    };
    Ok(Thresholds {
        threshold: cfg.beta * peak + (1.0 - cfg.beta) * dark,
        peak_reference: peak,
        dark_reference: dark,
    })
}

fn symbol_window(cfg: &ReceiverConfig, sync_offset: f64, k: usize) -> (f64, f64) {
    let a = sync_offset + k as f64 * cfg.symbol_duration;
    (a, a + cfg.decision_window())
}

fn decide(
    diff: &DiffSignal,
    cfg: &ReceiverConfig,
    sync_offset: f64,
    thresholds: Thresholds,
    n_symbols: usize,
) -> Result<DetectionReport> {
    let mut bits = Vec::with_capacity(n_symbols);
    let mut per_symbol_min = Vec::with_capacity(n_symbols);
    for k in 0..n_symbols {
        let (a, b) = symbol_window(cfg, sync_offset, k);
        let stat = window_min(diff, a, b)?;
        bits.push(stat <= thresholds.threshold);
        per_symbol_min.push(stat);
    }
    Ok(DetectionReport {
        bits: BitSequence::new(bits),
        threshold: thresholds.threshold,
        peak_reference: thresholds.peak_reference,
        dark_reference: thresholds.dark_reference,
        sync_offset,
        per_symbol_min,
    })
}

/// Smoothed-and-differenced front end of [`detect`].
pub fn front_end(trace: &PhTrace, cfg: &ReceiverConfig) -> Result<DiffSignal> {
    cfg.validate()?;
    cfg.check_trace_rate(trace.sample_interval)?;
    let smoothed = smooth(trace, cfg.smooth_len)?;
    differentiate(&smoothed, cfg.diff_lag)
}

/// Full receive chain. Without a supplied `sync_offset` the transmission
/// start is estimated from the first negative peak, so the transmission must
/// begin with a `1`.
pub fn detect(
    trace: &PhTrace,
    cfg: &ReceiverConfig,
    n_symbols: usize,
    sync_offset: Option<f64>,
) -> Result<DetectionReport> {
    if n_symbols == 0 {
        return Err(invalid("n_symbols must be >= 1"));
    }
    let diff = front_end(trace, cfg)?;
    let sync = match sync_offset {
        Some(t) => t,
        None => synchronize(&diff, cfg)?,
    };
    let thresholds = compute_threshold(&diff, cfg, sync)?;
    decide(&diff, cfg, sync, thresholds, n_symbols)
}

/// Detection with a known start and a threshold taken from an earlier
/// calibration run. The dark reference is re-measured on this trace when the
/// adaptation window is available; the peak reference is carried over.
pub fn detect_calibrated(
    trace: &PhTrace,
    cfg: &ReceiverConfig,
    n_symbols: usize,
    sync_offset: f64,
    calibration: Thresholds,
) -> Result<DetectionReport> {
    if n_symbols == 0 {
        return Err(invalid("n_symbols must be >= 1"));
    }
    let diff = front_end(trace, cfg)?;
    let dark = dark_reference(&diff, cfg, sync_offset).unwrap_or(calibration.dark_reference);
    let thresholds = Thresholds { dark_reference: dark, ..calibration };
    decide(&diff, cfg, sync_offset, thresholds, n_symbols)
}

/// Sample-at-a-time smoother and differencer. Produces exactly the values of
/// [`smooth`] followed by [`differentiate`].
#[derive(Debug, Clone)]
pub struct StreamingFrontEnd {
    smooth_len: usize,
    diff_lag: usize,
    raw: VecDeque<f64>,
    smoothed: VecDeque<f64>,
}

impl StreamingFrontEnd {
    pub fn new(smooth_len: usize, diff_lag: usize) -> Result<Self> {
        if smooth_len < 1 || diff_lag < 1 {
            return Err(invalid("smoothing length and lag must be >= 1"));
        }
        Ok(Self {
            smooth_len,
            diff_lag,
            raw: VecDeque::with_capacity(smooth_len),
            smoothed: VecDeque::with_capacity(diff_lag + 1),
        })
    }

    /// Number of raw samples consumed before the first output.
    pub fn latency(&self) -> usize {
        self.smooth_len - 1 + self.diff_lag
    }

    pub fn push(&mut self, ph: f64) -> Option<f64> {
        if self.raw.len() == self.smooth_len {
            self.raw.pop_front();
        }
        self.raw.push_back(ph);
        if self.raw.len() < self.smooth_len {
            return None;
        }
        let avg = sum_in_order(self.raw.iter().copied()) / self.smooth_len as f64;
        if self.smoothed.len() == self.diff_lag + 1 {
            self.smoothed.pop_front();
        }
        self.smoothed.push_back(avg);
        (self.smoothed.len() == self.diff_lag + 1).then(|| avg - self.smoothed[0])
    }
}

/// Incremental detector. Bits are released as soon as their decision windows
/// are complete; the final report equals [`detect`] on the same samples.
#[derive(Debug, Clone)]
pub struct StreamingDetector {
    cfg: ReceiverConfig,
    n_symbols: usize,
    front: StreamingFrontEnd,
    diff: DiffSignal,
    sync: Option<f64>,
    thresholds: Option<Thresholds>,
    bits: Vec<bool>,
    stats: Vec<f64>,
}

impl StreamingDetector {
    /// `t_start` is the time of the first raw sample that will be pushed.
    pub fn new(cfg: ReceiverConfig, t_start: f64, n_symbols: usize, sync_offset: Option<f64>) -> Result<Self> {
        cfg.validate()?;
        if n_symbols == 0 {
            return Err(invalid("n_symbols must be >= 1"));
        }
        let front = StreamingFrontEnd::new(cfg.smooth_len, cfg.diff_lag)?;
        let dt = cfg.sample_interval();
        Ok(Self {
            diff: DiffSignal {
                t_start: t_start + front.latency() as f64 * dt,
                sample_interval: dt,
                samples: Vec::new(),
            },
            cfg,
            n_symbols,
            front,
            sync: sync_offset,
            thresholds: None,
            bits: Vec::new(),
            stats: Vec::new(),
        })
    }

    pub fn sync_offset(&self) -> Option<f64> {
        self.sync
    }

    /// Feeds one raw pH sample; returns any bits decided as a result.
    pub fn push(&mut self, ph: f64) -> Result<Vec<bool>> {
        let Some(d) = self.front.push(ph) else {
            return Ok(Vec::new());
        };
        self.diff.samples.push(d);
        self.advance(false)
    }

    /// Signals end of input and returns the full report.
    pub fn finish(mut self) -> Result<DetectionReport> {
        self.advance(true)?;
        let thresholds = self.thresholds.expect("advance(true) sets thresholds or errors");
        Ok(DetectionReport {
            bits: BitSequence::new(self.bits),
            threshold: thresholds.threshold,
            peak_reference: thresholds.peak_reference,
            dark_reference: thresholds.dark_reference,
            sync_offset: self.sync.expect("set together with thresholds"),
            per_symbol_min: self.stats,
        })
    }

    fn window_ready(&self, end: f64) -> bool {
        self.diff.window(end, end).1 <= self.diff.len() as isize
    }

    fn advance(&mut self, complete: bool) -> Result<Vec<bool>> {
        if self.sync.is_none() {
            match locate_sync(&self.diff, &self.cfg, complete)? {
                SyncSearch::Found(t) => self.sync = Some(t),
                SyncSearch::NeedMore => return Ok(Vec::new()),
            }
        }
        let sync = self.sync.expect("just set");
        if self.thresholds.is_none() {
            if !complete && !self.window_ready(sync + self.cfg.decision_window()) {
                return Ok(Vec::new());
            }
            self.thresholds = Some(compute_threshold(&self.diff, &self.cfg, sync)?);
        }
        let threshold = self.thresholds.expect("just set").threshold;
        let mut fresh = Vec::new();
        while self.bits.len() < self.n_symbols {
            let (a, b) = symbol_window(&self.cfg, sync, self.bits.len());
            if !complete && !self.window_ready(b) {
                break;
            }
            let stat = window_min(&self.diff, a, b)?;
            let bit = stat <= threshold;
            self.bits.push(bit);
            self.stats.push(stat);
            fresh.push(bit);
        }
        Ok(fresh)
    }
}
