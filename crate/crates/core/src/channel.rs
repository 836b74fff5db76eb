//! Piecewise relaxation channel: synthesizes concentration and pH traces from
//! an optical schedule.
//!
//! The concentration is the relaxation state (continuous across segment
//! boundaries) plus a linear drift `drift_slope * t` plus white Gaussian noise
//! in mol/l. Noise comes from a ChaCha8 stream seeded with the configured seed
//! and is drawn with `rand_distr`'s standard-normal sampler, so a given seed
//! yields the same trace on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::model::{raw_concentration_to_ph, relax, ModelParams};
use crate::modulator::OpticalSchedule;

/// Relative slack for sample times that land a rounding error past the end
/// of the schedule.
const END_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of the additive noise, mol/l.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Uniformly sampled pH time series.
#[derive(Debug, Clone, PartialEq)]
pub struct PhTrace {
    pub t_start: f64,
    pub sample_interval: f64,
    pub samples: Vec<f64>,
}

impl PhTrace {
    pub fn new(t_start: f64, sample_interval: f64, samples: Vec<f64>) -> Result<Self> {
        if !t_start.is_finite() {
            return Err(invalid("trace start time must be finite"));
        }
        if !(sample_interval > 0.0 && sample_interval.is_finite()) {
            return Err(invalid(format!("sample interval must be > 0 s, got {sample_interval}")));
        }
        if samples.is_empty() {
            return Err(invalid("trace has no samples"));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("trace contains non-finite pH value {bad}")));
        }
        Ok(Self { t_start, sample_interval, samples })
    }

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
        self.time(self.samples.len() - 1)
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_interval
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|k| self.time(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub trace: PhTrace,
    /// Samples whose concentration fell below the floor and were clamped.
    pub clamp_count: usize,
    pub noiseless_trace: Option<PhTrace>,
}

/// Relaxation state at the start of every segment, so any instant can be
/// evaluated with a single exponential.
#[derive(Debug, Clone)]
pub struct SegmentStates<'a> {
    schedule: &'a OpticalSchedule,
    params: ModelParams,
    starts: Vec<f64>,
}

impl<'a> SegmentStates<'a> {
    pub fn new(schedule: &'a OpticalSchedule, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::new_unchecked(schedule, params))
    }

    pub(crate) fn new_unchecked(schedule: &'a OpticalSchedule, params: &ModelParams) -> Self {
        let mut starts = Vec::with_capacity(schedule.segments().len());
        let mut c = params.c_init;
        for seg in schedule.segments() {
            starts.push(c);
            c = relax(
                c,
                params.equilibrium(seg.state),
                params.time_constant(seg.state),
                seg.duration(),
            );
        }
        Self { schedule, params: *params, starts }
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let total = self.schedule.total_duration();
        if t >= 0.0 && t <= total {
            Ok(t)
        } else if t > total && t <= total * (1.0 + END_SLACK) {
            Ok(total)
        } else {
            Err(invalid(format!("t = {t} s is outside the schedule [0, {total}]")))
        }
    }

    fn segment_index(&self, t: f64) -> usize {
        let segs = self.schedule.segments();
        segs.partition_point(|s| s.end <= t).min(segs.len() - 1)
    }

    /// Relaxation state only (no drift).
    fn relaxation_at(&self, idx: usize, t: f64) -> f64 {
        let seg = &self.schedule.segments()[idx];
        relax(
            self.starts[idx],
            self.params.equilibrium(seg.state),
            self.params.time_constant(seg.state),
            t - seg.start,
        )
    }

    /// Relaxation state plus drift at `t`, in mol/l.
    pub fn concentration_at(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        let idx = self.segment_index(t);
        Ok(self.relaxation_at(idx, t) + self.params.drift_slope * t)
    }

    /// Same as [`concentration_at`](Self::concentration_at) for many times;
    /// ascending times are evaluated with a forward cursor.
    pub fn concentrations_at(&self, times: impl IntoIterator<Item = f64>) -> Result<Vec<f64>> {
        let segs = self.schedule.segments();
        let mut idx = 0usize;
        let mut last_t = f64::NEG_INFINITY;
        times
            .into_iter()
            .map(|t| {
                let t = self.check_time(t)?;
                if t < last_t {
                    idx = self.segment_index(t);
                } else {
                    while idx + 1 < segs.len() && segs[idx].end <= t {
                        idx += 1;
                    }
                }
                last_t = t;
                Ok(self.relaxation_at(idx, t) + self.params.drift_slope * t)
            })
            .collect()
    }
}

/// Noiseless concentration (relaxation state plus drift) at time `t`.
///
/// The result is a raw mol/l value: a strongly negative drift can push it to
/// or below zero, which the pH conversion handles by clamping.
pub fn simulate_concentration(schedule: &OpticalSchedule, params: &ModelParams, t: f64) -> Result<f64> {
    SegmentStates::new(schedule, params)?.concentration_at(t)
}

pub fn sample_count(schedule: &OpticalSchedule, sample_rate: f64) -> Result<usize> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(invalid(format!("sample rate must be > 0 Hz, got {sample_rate}")));
    }
    let n = (schedule.total_duration() * sample_rate * (1.0 + END_SLACK)).floor() as usize + 1;
    if n < 2 {
        return Err(invalid(format!(
            "sample rate {sample_rate} Hz yields fewer than 2 samples over {} s",
            schedule.total_duration()
        )));
    }
    Ok(n)
}

/// Samples the channel at `k / sample_rate` for every instant inside the
/// schedule, adds noise, clamps, and converts to pH.
pub fn simulate_trace(
    schedule: &OpticalSchedule,
    params: &ModelParams,
    noise: &NoiseConfig,
    sample_rate: f64,
) -> Result<SimulationReport> {
    noise.validate()?;
    let n = sample_count(schedule, sample_rate)?;
    let interval = 1.0 / sample_rate;
    let states = SegmentStates::new(schedule, params)?;
    let clean = states.concentrations_at((0..n).map(|k| k as f64 * interval))?;

    let noiseless: Vec<f64> = clean.iter().map(|&c| raw_concentration_to_ph(c).0).collect();

    let mut clamp_count = 0;
    let samples = if noise.sigma == 0.0 {
        clamp_count = clean.iter().filter(|&&c| raw_concentration_to_ph(c).1).count();
        noiseless.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        clean
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let (ph, clamped) = raw_concentration_to_ph(c + noise.sigma * z);
                clamp_count += usize::from(clamped);
                ph
            })
            .collect()
    };

    Ok(SimulationReport {
        trace: PhTrace::new(0.0, interval, samples)?,
        clamp_count,
        noiseless_trace: Some(PhTrace::new(0.0, interval, noiseless)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IlluminationState::{Dark, Light};
    use crate::modulator::{schedule_from_bits, BitSequence, ModulationConfig, Segment};

    fn fig4() -> ModelParams {
        ModelParams {
            c_eq_dark: 2.82e-6,
            c_eq_light: 5.79e-6,
            tau_dark: 6.39 * 60.0,
            tau_light: 8.48 * 60.0,
            drift_slope: 0.0,
            c_init: 2.82e-6,
        }
    }

    fn fig4_schedule() -> OpticalSchedule {
        let bits: BitSequence = "10011000101011101101".parse().unwrap();
        schedule_from_bits(&bits, &ModulationConfig::new(60.0, 0.25).unwrap()).unwrap()
    }

    #[test]
    fn starts_at_initial_concentration() {
        let p = ModelParams { c_init: 3.3e-6, ..fig4() };
        assert_eq!(simulate_concentration(&fig4_schedule(), &p, 0.0).unwrap(), 3.3e-6);
    }

    #[test]
    fn dark_equilibrium_is_a_fixed_point() {
        let s = OpticalSchedule::from_segments([Segment { start: 0.0, end: 500.0, state: Dark }]).unwrap();
        let p = fig4();
        for t in [0.0, 1.0, 77.7, 500.0] {
            assert_eq!(simulate_concentration(&s, &p, t).unwrap(), p.c_eq_dark);
        }
    }

    #[test]
    fn rejects_times_outside_schedule() {
        let s = fig4_schedule();
        assert!(simulate_concentration(&s, &fig4(), -0.5).is_err());
        assert!(simulate_concentration(&s, &fig4(), 1200.5).is_err());
        assert!(simulate_concentration(&s, &fig4(), 1200.0).is_ok());
    }

    #[test]
    fn continuous_at_segment_boundaries() {
        let s = fig4_schedule();
        let p = ModelParams { drift_slope: 1e-10, ..fig4() };
        let states = SegmentStates::new(&s, &p).unwrap();
        for seg in &s.segments()[1..] {
            let t = seg.start;
            // left limit: evaluate the previous segment's closed form at its end
            let idx = states.segment_index(t);
            let left = states.relaxation_at(idx - 1, t) + p.drift_slope * t;
            let right = states.concentration_at(t).unwrap();
            assert!((left - right).abs() <= 1e-12 * right, "t={t}: {left} vs {right}");
        }
    }

    #[test]
    fn cursor_and_pointwise_evaluation_agree() {
        let s = fig4_schedule();
        let p = fig4();
        let states = SegmentStates::new(&s, &p).unwrap();
        let times: Vec<f64> = vec![0.0, 14.9, 15.0, 300.0, 61.0, 1199.0, 1200.0, 0.5];
        let batch = states.concentrations_at(times.iter().copied()).unwrap();
        for (t, c) in times.iter().zip(batch) {
            assert_eq!(states.concentration_at(*t).unwrap(), c);
        }
    }

    #[test]
    fn stays_within_equilibrium_bounds_without_drift() {
        let s = fig4_schedule();
        let p = ModelParams { c_init: 4.0e-6, ..fig4() };
        let r = simulate_trace(&s, &p, &NoiseConfig::noiseless(), 1.0).unwrap();
        let lo = -(5.79e-6f64).log10();
        let hi = -(2.82e-6f64).log10();
        assert!(r.trace.samples.iter().all(|&ph| ph >= lo - 1e-12 && ph <= hi + 1e-12));
    }

    #[test]
    fn light_lowers_ph_and_darkness_recovers() {
        let s = fig4_schedule();
        let r = simulate_trace(&s, &fig4(), &NoiseConfig::noiseless(), 1.0).unwrap();
        let ph = &r.trace.samples;
        assert_eq!(ph.len(), 1201);
        // first symbol: light over [0, 15), dark until 60
        assert!(ph[15] < ph[0]);
        assert!(ph[59] > ph[15]);
        assert!(ph[59] < ph[0]);
    }

    #[test]
    fn zero_noise_matches_noiseless_and_seed_is_deterministic() {
        let s = fig4_schedule();
        let quiet = simulate_trace(&s, &fig4(), &NoiseConfig::noiseless(), 1.0).unwrap();
        assert_eq!(Some(quiet.trace.clone()), quiet.noiseless_trace);
        let states = SegmentStates::new(&s, &fig4()).unwrap();
        for (k, &ph) in quiet.trace.samples.iter().enumerate() {
            let c = states.concentration_at(k as f64).unwrap();
            assert_eq!(ph, -c.log10());
        }

        let noise = NoiseConfig { sigma: 1e-7, seed: 99 };
        let a = simulate_trace(&s, &fig4(), &noise, 1.0).unwrap();
        let b = simulate_trace(&s, &fig4(), &noise, 1.0).unwrap();
        assert_eq!(a, b);
        let c = simulate_trace(&s, &fig4(), &NoiseConfig { seed: 100, ..noise }, 1.0).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn too_few_samples() {
        let s = OpticalSchedule::from_segments([Segment { start: 0.0, end: 10.0, state: Light }]).unwrap();
        assert!(simulate_trace(&s, &fig4(), &NoiseConfig::noiseless(), 0.05).is_err());
        assert!(simulate_trace(&s, &fig4(), &NoiseConfig::noiseless(), 0.0).is_err());
        assert_eq!(simulate_trace(&s, &fig4(), &NoiseConfig::noiseless(), 0.1).unwrap().trace.len(), 2);
    }

    #[test]
    fn clamping_is_counted() {
        let s = OpticalSchedule::from_segments([Segment { start: 0.0, end: 100.0, state: Dark }]).unwrap();
        let p = ModelParams { drift_slope: -1e-7, ..fig4() };
        let r = simulate_trace(&s, &p, &NoiseConfig::noiseless(), 1.0).unwrap();
        // c(t) = 2.82e-6 - 1e-7 t drops below the floor from t = 29 s on
        assert_eq!(r.clamp_count, 72);
        assert!(r.trace.samples.iter().all(|v| v.is_finite()));
        assert_eq!(r.trace.samples[100], 14.0);
    }
}
