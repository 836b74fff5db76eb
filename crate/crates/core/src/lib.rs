//! Simulation and demodulation of a light-driven proton-pump link.
//!
//! An LED schedule (on-off keying with a fractional pulse) drives a suspension
//! whose proton concentration relaxes exponentially toward a dark or a light
//! equilibrium. On top of that relaxation sit a linear baseline drift and
//! white Gaussian noise. A pH sensor samples the result.
//!
//! * [`model`]: concentration/pH values and the closed-form step response
//! * [`modulator`]: bits to optical schedules
//! * [`channel`]: schedules to noisy pH traces
//! * [`receiver`]: smoothing, lagged differencing, synchronization, threshold detection
//! * [`estimator`]: multistart least-squares fit of the channel parameters
//! * [`io`]: CSV and text formats
//! * [`seed`]: per-trial seed derivation

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimator;
pub mod io;
pub mod model;
pub mod modulator;
pub mod receiver;
pub mod seed;

pub use channel::{simulate_concentration, simulate_trace, NoiseConfig, PhTrace, SimulationReport};
pub use error::{Error, Result};
pub use estimator::{fit, model_trace, residual, FitConfig, FitDomain, FitResult, ParamBounds};
pub use model::{
    concentration_to_ph, ph_to_concentration, step_response, Concentration, IlluminationState, ModelParams,
    PhValue,
};
pub use modulator::{prepend_dark_adaptation, schedule_from_bits, BitSequence, ModulationConfig, OpticalSchedule, Segment};
pub use receiver::{
    compute_threshold, detect, detect_calibrated, differentiate, smooth, synchronize, DetectionReport, DiffSignal,
    ReceiverConfig, StreamingDetector, Thresholds,
};
