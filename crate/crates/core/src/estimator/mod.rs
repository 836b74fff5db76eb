//! Least-squares fit of the channel parameters to a measured or simulated
//! pH trace with a known optical schedule.
//!
//! The six parameters (both equilibria, both time constants, drift slope and
//! initial concentration) are searched inside a box. Positive parameters are
//! searched on a log scale, the drift slope on a linear one. Each start runs
//! an independent Nelder-Mead search; starts are spread over the box with a
//! seeded Latin hypercube and may run in parallel.

pub mod nelder_mead;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{PhTrace, SegmentStates};
use crate::error::{invalid, Error, Result};
use crate::model::{raw_concentration_to_ph, IlluminationState, ModelParams, CONCENTRATION_FLOOR};
use crate::modulator::OpticalSchedule;

use nelder_mead::{minimize, SimplexOptions};

pub const PARAM_NAMES: [&str; 6] = ["c_eq_dark", "c_eq_light", "tau_dark", "tau_light", "drift_slope", "c_init"];

/// Index of the drift slope in the parameter vector; the only parameter
/// that may be negative.
const DRIFT: usize = 4;
const C_INIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitDomain {
    #[default]
    Ph,
    Concentration,
}

impl fmt::Display for FitDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitDomain::Ph => "ph",
            FitDomain::Concentration => "concentration",
        })
    }
}

impl FromStr for FitDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ph" => Ok(FitDomain::Ph),
            "concentration" | "conc" => Ok(FitDomain::Concentration),
            other => Err(Error::Parse(format!("unknown fit domain {other:?}"))),
        }
    }
}

/// Per-parameter search box, in the order of [`PARAM_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl ParamBounds {
    /// Concentrations in [1e-8, 1e-4] mol/l, time constants in [1, 3600] s,
    /// and a drift slope of at most the trace's concentration range per trace
    /// duration.
    pub fn default_for(trace: &PhTrace) -> Self {
        let conc: Vec<f64> = trace.samples.iter().map(|ph| 10f64.powf(-ph)).collect();
        let (lo, hi) = conc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        let duration = (trace.end_time() - trace.t_start).max(trace.sample_interval);
        let range = (hi - lo).max(1e-6 * hi);
        let drift = range / duration;
        Self {
            lower: [1e-8, 1e-8, 1.0, 1.0, -drift, 1e-8],
            upper: [1e-4, 1e-4, 3600.0, 3600.0, drift, 1e-4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("bounds for {name} must satisfy lower < upper")));
            }
            if i != DRIFT && lo <= 0.0 {
                return Err(invalid(format!("lower bound for {name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, params: &ModelParams) -> bool {
        params
            .to_array()
            .iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    fn normalize(self, params: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| {
            let (lo, hi, v) = (self.lower[i], self.upper[i], params[i]);
            let u = if i == DRIFT {
                (v - lo) / (hi - lo)
            } else {
                (v.max(lo).ln() - lo.ln()) / (hi.ln() - lo.ln())
            };
            u.clamp(0.0, 1.0)
        })
    }

    fn denormalize(self, u: &[f64]) -> [f64; 6] {
        std::array::from_fn(|i| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            let u = u[i].clamp(0.0, 1.0);
            let v = if i == DRIFT {
                lo + u * (hi - lo)
            } else {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            };
            v.clamp(lo, hi)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// `None` derives [`ParamBounds::default_for`] from the trace.
    pub bounds: Option<ParamBounds>,
    pub n_starts: usize,
    /// Iteration budget of each local search.
    pub max_iters: usize,
    /// Relative objective tolerance.
    pub tol: f64,
    pub fit_domain: FitDomain,
    /// Seed of the start-point sampler.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bounds: None,
            n_starts: 8,
            max_iters: 20_000,
            tol: 1e-10,
            fit_domain: FitDomain::Ph,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts < 1 {
            return Err(invalid("n_starts must be >= 1"));
        }
        if self.max_iters < 1 {
            return Err(invalid("max_iters must be >= 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol must be > 0"));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Residual sum of squares in fit-domain units squared.
    pub rss: f64,
    pub fit_domain: FitDomain,
    pub n_evals: usize,
    pub converged: bool,
    /// Final rss of each start, in start order.
    pub per_start_rss: Vec<f64>,
}

/// Noiseless model pH at the given times.
pub fn model_trace(params: &ModelParams, schedule: &OpticalSchedule, sample_times: &[f64]) -> Result<Vec<f64>> {
    let states = SegmentStates::new(schedule, params)?;
    Ok(states
        .concentrations_at(sample_times.iter().copied())?
        .into_iter()
        .map(|c| raw_concentration_to_ph(c).0)
        .collect())
}

/// Precomputed observation side of the least-squares objective.
struct Objective<'a> {
    schedule: &'a OpticalSchedule,
    times: Vec<f64>,
    observed: Vec<f64>,
    domain: FitDomain,
}

impl<'a> Objective<'a> {
    fn new(schedule: &'a OpticalSchedule, trace: &PhTrace, domain: FitDomain) -> Result<Self> {
        let total = schedule.total_duration();
        let end = trace.end_time();
        if trace.t_start < 0.0 || end > total * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "trace spans [{}, {end}] s but the schedule covers [0, {total}] s",
                trace.t_start
            )));
        }
        let observed = match domain {
            FitDomain::Ph => trace.samples.clone(),
            FitDomain::Concentration => trace.samples.iter().map(|ph| 10f64.powf(-ph)).collect(),
        };
        Ok(Self { schedule, times: trace.times().collect(), observed, domain })
    }

    fn rss(&self, params: &ModelParams) -> f64 {
        let states = SegmentStates::new_unchecked(self.schedule, params);
        let Ok(model) = states.concentrations_at(self.times.iter().copied()) else {
            return f64::INFINITY;
        };
        let sq = model.iter().zip(&self.observed).map(|(&c, &obs)| {
            let m = match self.domain {
                FitDomain::Ph => raw_concentration_to_ph(c).0,
                FitDomain::Concentration => c.max(CONCENTRATION_FLOOR),
            };
            (m - obs) * (m - obs)
        });
        sq.fold(0.0, |acc, v| acc + v)
    }

    /// rss below this is indistinguishable from zero at double precision.
    fn zero_floor(&self) -> f64 {
        let scale = self.observed.iter().map(|v| v.abs()).sum::<f64>() / self.observed.len() as f64;
        self.observed.len() as f64 * (1e-9 * scale).powi(2)
    }
}

/// Sum of squared model-minus-trace differences in the chosen domain.
pub fn residual(params: &ModelParams, schedule: &OpticalSchedule, trace: &PhTrace, domain: FitDomain) -> Result<f64> {
    params.validate()?;
    Ok(Objective::new(schedule, trace, domain)?.rss(params))
}

/// Both illumination states must be observed for a positive duration.
fn check_identifiable(schedule: &OpticalSchedule, trace: &PhTrace) -> Result<()> {
    let (a, b) = (trace.t_start, trace.end_time());
    let seen = |state: IlluminationState| {
        schedule
            .segments()
            .iter()
            .filter(|s| s.state == state)
            .any(|s| s.end.min(b) - s.start.max(a) > 0.0)
    };
    match (seen(IlluminationState::Dark), seen(IlluminationState::Light)) {
        (true, true) => Ok(()),
        (true, false) => Err(Error::Identifiability(
            "trace covers no illuminated interval; light equilibrium and time constant are unconstrained".into(),
        )),
        (false, true) => Err(Error::Identifiability(
            "trace covers no dark interval; dark equilibrium and time constant are unconstrained".into(),
        )),
        (false, false) => Err(Error::Identifiability("trace does not overlap the schedule".into())),
    }
}

/// Latin hypercube over the unit box.
fn latin_hypercube(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

struct StartOutcome {
    params: [f64; 6],
    rss: f64,
    evals: usize,
    converged: bool,
}

fn lexicographic(a: &[f64; 6], b: &[f64; 6]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Multistart least-squares fit of all six parameters.
pub fn fit(schedule: &OpticalSchedule, trace: &PhTrace, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_identifiable(schedule, trace)?;
    let bounds = cfg.bounds.unwrap_or_else(|| ParamBounds::default_for(trace));
    bounds.validate()?;
    let objective = Objective::new(schedule, trace, cfg.fit_domain)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = latin_hypercube(cfg.n_starts, 6, &mut rng);
    // c_init starts at the first observed sample
    let first_c = 10f64.powf(-trace.samples[0]);
    let mut probe = bounds.denormalize(&[0.5; 6]);
    probe[C_INIT] = first_c;
    let u_init = bounds.normalize(&probe)[C_INIT];
    for s in &mut starts {
        s[C_INIT] = u_init;
    }

    let opts = SimplexOptions {
        ftol: cfg.tol,
        ftol_abs: 1e-3 * objective.zero_floor(),
        max_iters: cfg.max_iters,
        ..SimplexOptions::default()
    };

    let outcomes: Vec<StartOutcome> = starts
        .par_iter()
        .map(|u0| {
            let r = minimize(
                |u| objective.rss(&ModelParams::from_array(bounds.denormalize(u))),
                u0,
                &opts,
            );
            StartOutcome {
                params: bounds.denormalize(&r.x),
                rss: r.f,
                evals: r.evals,
                converged: r.converged,
            }
        })
        .collect();

    let best = outcomes
        .iter()
        .min_by(|a, b| a.rss.total_cmp(&b.rss).then_with(|| lexicographic(&a.params, &b.params)))
        .expect("n_starts >= 1");

    let mut sorted: Vec<f64> = outcomes.iter().map(|o| o.rss).collect();
    sorted.sort_by(f64::total_cmp);
    let agree = match sorted.as_slice() {
        [only] => only.is_finite() && best.converged,
        [r1, r2, ..] => r2 - r1 <= cfg.tol.sqrt() * r2.abs() + objective.zero_floor(),
        [] => false,
    };

    let result = FitResult {
        params: ModelParams::from_array(best.params),
        rss: best.rss,
        fit_domain: cfg.fit_domain,
        n_evals: outcomes.iter().map(|o| o.evals).sum(),
        converged: agree,
        per_start_rss: outcomes.iter().map(|o| o.rss).collect(),
    };
    if outcomes.iter().all(|o| !o.converged) {
        return Err(Error::NonConvergence(Box::new(result)));
    }
    Ok(result)
}
