//! Domain values of the relaxation channel and its closed-form step response.
//!
//! The proton concentration relaxes toward a state-dependent equilibrium with
//! a state-dependent time constant:
//!
//! ```text
//! dx/dt = -(x - c_eq[state]) / tau[state]
//! ```
//!
//! All times are in seconds and all concentrations in mol/l.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// Concentrations below this value are raised to it before conversion to pH.
pub const CONCENTRATION_FLOOR: f64 = 1e-14;

/// Proton concentration in mol/l. Always finite and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Concentration(f64);

impl Concentration {
    pub fn new(mol_per_l: f64) -> Result<Self> {
        if !mol_per_l.is_finite() {
            return Err(invalid(format!("concentration must be finite, got {mol_per_l}")));
        }
        if mol_per_l <= 0.0 {
            return Err(Error::Domain(format!(
                "concentration must be > 0 mol/l, got {mol_per_l}"
            )));
        }
        Ok(Self(mol_per_l))
    }

    /// Applies the floor policy: returns the clamped value and whether the
    /// floor was hit. Non-finite input is a caller bug and is rejected.
    pub fn clamped(mol_per_l: f64) -> Result<(Self, bool)> {
        if mol_per_l.is_nan() {
            return Err(invalid("concentration is NaN"));
        }
        if mol_per_l < CONCENTRATION_FLOOR {
            Ok((Self(CONCENTRATION_FLOOR), true))
        } else if mol_per_l.is_finite() {
            Ok((Self(mol_per_l), false))
        } else {
            Err(invalid("concentration is infinite"))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Concentration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} mol/l", self.0)
    }
}

/// Dimensionless pH value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhValue(f64);

impl PhValue {
    pub fn new(ph: f64) -> Result<Self> {
        if !ph.is_finite() {
            return Err(invalid(format!("pH must be finite, got {ph}")));
        }
        Ok(Self(ph))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for PhValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pH {}", self.0)
    }
}

pub fn ph_to_concentration(ph: PhValue) -> Concentration {
    // PhValue is finite, so 10^-pH is positive; it can only underflow for
    // absurd pH values (> ~308), in which case the floor applies.
    let c = 10f64.powf(-ph.0);
    Concentration(c.max(f64::MIN_POSITIVE))
}

pub fn concentration_to_ph(c: Concentration) -> PhValue {
    PhValue(-c.0.log10())
}

/// Raw-value convenience used on hot paths: clamps, converts, and reports
/// whether the floor was hit.
pub(crate) fn raw_concentration_to_ph(mol_per_l: f64) -> (f64, bool) {
    if mol_per_l < CONCENTRATION_FLOOR {
        (-CONCENTRATION_FLOOR.log10(), true)
    } else {
        (-mol_per_l.log10(), false)
    }
}

/// Optical input state of the modulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IlluminationState {
    Dark,
    Light,
}

impl IlluminationState {
    pub fn as_str(self) -> &'static str {
        match self {
            IlluminationState::Dark => "dark",
            IlluminationState::Light => "light",
        }
    }

    /// 0 for dark, 1 for light.
    pub fn index(self) -> u8 {
        match self {
            IlluminationState::Dark => 0,
            IlluminationState::Light => 1,
        }
    }
}

impl fmt::Display for IlluminationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IlluminationState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dark" => Ok(IlluminationState::Dark),
            "light" => Ok(IlluminationState::Light),
            other => Err(Error::Parse(format!("unknown illumination state {other:?}"))),
        }
    }
}

/// Channel parameters: equilibria and time constants per illumination state,
/// linear baseline drift, and the initial concentration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// mol/l
    pub c_eq_dark: f64,
    /// mol/l
    pub c_eq_light: f64,
    /// s
    pub tau_dark: f64,
    /// s
    pub tau_light: f64,
    /// mol/l per s, may be negative
    pub drift_slope: f64,
    /// mol/l
    pub c_init: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_eq_dark", self.c_eq_dark),
            ("c_eq_light", self.c_eq_light),
            ("c_init", self.c_init),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be a positive concentration, got {v}")));
            }
        }
        for (name, v) in [("tau_dark", self.tau_dark), ("tau_light", self.tau_light)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0 s, got {v}")));
            }
        }
        if !self.drift_slope.is_finite() {
            return Err(invalid("drift_slope must be finite"));
        }
        Ok(())
    }

    pub fn equilibrium(&self, state: IlluminationState) -> f64 {
        match state {
            IlluminationState::Dark => self.c_eq_dark,
            IlluminationState::Light => self.c_eq_light,
        }
    }

    pub fn time_constant(&self, state: IlluminationState) -> f64 {
        match state {
            IlluminationState::Dark => self.tau_dark,
            IlluminationState::Light => self.tau_light,
        }
    }

    /// `[c_eq_dark, c_eq_light, tau_dark, tau_light, drift_slope, c_init]`
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.c_eq_dark,
            self.c_eq_light,
            self.tau_dark,
            self.tau_light,
            self.drift_slope,
            self.c_init,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            c_eq_dark: v[0],
            c_eq_light: v[1],
            tau_dark: v[2],
            tau_light: v[3],
            drift_slope: v[4],
            c_init: v[5],
        }
    }
}

/// Exponential relaxation over `elapsed` seconds of a constant illumination
/// state, starting from `c_start`.
pub fn step_response(
    c_start: Concentration,
    state: IlluminationState,
    params: &ModelParams,
    elapsed: f64,
) -> Result<Concentration> {
    if !(elapsed >= 0.0) {
        return Err(invalid(format!("elapsed time must be >= 0 s, got {elapsed}")));
    }
    let c = relax(
        c_start.0,
        params.equilibrium(state),
        params.time_constant(state),
        elapsed,
    );
    Ok(Concentration(c))
}

/// `c0 + (c_eq - c0)(1 - exp(-dt/tau))`; unchecked scalar form.
#[inline]
pub(crate) fn relax(c0: f64, c_eq: f64, tau: f64, dt: f64) -> f64 {
    c0 + (c_eq - c0) * -(-dt / tau).exp_m1()
}
