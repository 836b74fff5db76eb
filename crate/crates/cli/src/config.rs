//! Run configuration files.
//!
//! One TOML document describes a whole experiment. Every physical quantity
//! carries its unit in the key name (`tau_dark_s`, `sigma_mol_per_l`, ...).

use std::path::{Path, PathBuf};

use phlink::{BitSequence, FitConfig, FitDomain, ModelParams, ModulationConfig, NoiseConfig, ReceiverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit bit string, e.g. `"10011000101011101101"`.
    pub bits: Option<String>,
    /// Alternative to `bits`: a random sequence of the given length.
    pub random_bits: Option<RandomBits>,
    #[serde(default)]
    pub dark_adaptation_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    pub modulation: ModulationSection,
    pub model: ModelSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub receiver: ReceiverSection,
    #[serde(default)]
    pub fit: FitSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_sample_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBits {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSection {
    pub symbol_duration_s: f64,
    pub duty_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub c_eq_dark_mol_per_l: f64,
    pub c_eq_light_mol_per_l: f64,
    pub tau_dark_s: f64,
    pub tau_light_s: f64,
    #[serde(default)]
    pub drift_slope_mol_per_l_per_s: f64,
    /// Defaults to the dark equilibrium.
    pub c_init_mol_per_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub sigma_mol_per_l: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub smooth_len_samples: usize,
    pub diff_lag_samples: usize,
    pub beta: f64,
    pub adaptation_window_s: f64,
    pub sync_k: f64,
    pub sync_min_margin_ph: f64,
    pub multi_peak: bool,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        let d = ReceiverConfig::default();
        Self {
            smooth_len_samples: d.smooth_len,
            diff_lag_samples: d.diff_lag,
            beta: d.beta,
            adaptation_window_s: d.adaptation_window,
            sync_k: d.sync_k,
            sync_min_margin_ph: d.sync_min_margin,
            multi_peak: d.multi_peak,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub n_starts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub domain: FitDomainName,
    pub seed: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self { n_starts: d.n_starts, max_iters: d.max_iters, tol: d.tol, domain: FitDomainName::Ph, seed: d.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FitDomainName {
    Ph,
    Concentration,
}

impl From<FitDomainName> for FitDomain {
    fn from(d: FitDomainName) -> Self {
        match d {
            FitDomainName::Ph => FitDomain::Ph,
            FitDomainName::Concentration => FitDomain::Concentration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
}

/// Config keys a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum SweepParameter {
    SigmaMolPerL,
    DriftSlopeMolPerLPerS,
    SymbolDurationS,
    DutyFraction,
    Beta,
    SyncK,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        match (&self.bits, &self.random_bits) {
            (Some(_), Some(_)) => return Err(invalid("give either `bits` or `[random_bits]`, not both")),
            (None, None) => return Err(invalid("missing `bits` or `[random_bits]`")),
            _ => {}
        }
        if !(self.dark_adaptation_s >= 0.0 && self.dark_adaptation_s.is_finite()) {
            return Err(invalid("dark_adaptation_s must be >= 0"));
        }
        self.bit_sequence()?;
        self.modulation()?;
        self.params()?;
        self.noise().validate()?;
        self.receiver().validate()?;
        self.fit_config().validate()?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(invalid("sweep.values must not be empty"));
            }
            if s.trials < 1 {
                return Err(invalid("sweep.trials must be >= 1"));
            }
        }
        Ok(())
    }

    /// Transmitted bits. Random sequences always start with a one so the
    /// receiver has a pulse to synchronize on.
    pub fn bit_sequence(&self) -> CliResult<BitSequence> {
        match (&self.bits, &self.random_bits) {
            (Some(s), _) => {
                let bits: BitSequence = s.parse()?;
                if bits.is_empty() {
                    return Err(invalid("bits must not be empty"));
                }
                Ok(bits)
            }
            (None, Some(r)) => random_bits(r.count, r.seed),
            (None, None) => Err(invalid("missing `bits` or `[random_bits]`")),
        }
    }

    pub fn modulation(&self) -> CliResult<ModulationConfig> {
        Ok(ModulationConfig::new(self.modulation.symbol_duration_s, self.modulation.duty_fraction)?)
    }

    pub fn params(&self) -> CliResult<ModelParams> {
        let m = &self.model;
        let p = ModelParams {
            c_eq_dark: m.c_eq_dark_mol_per_l,
            c_eq_light: m.c_eq_light_mol_per_l,
            tau_dark: m.tau_dark_s,
            tau_light: m.tau_light_s,
            drift_slope: m.drift_slope_mol_per_l_per_s,
            c_init: m.c_init_mol_per_l.unwrap_or(m.c_eq_dark_mol_per_l),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig { sigma: self.noise.sigma_mol_per_l, seed: self.noise.seed }
    }

    pub fn receiver(&self) -> ReceiverConfig {
        let r = &self.receiver;
        ReceiverConfig {
            smooth_len: r.smooth_len_samples,
            diff_lag: r.diff_lag_samples,
            beta: r.beta,
            symbol_duration: self.modulation.symbol_duration_s,
            duty_fraction: self.modulation.duty_fraction,
            sample_rate: self.sample_rate_hz,
            adaptation_window: r.adaptation_window_s,
            sync_k: r.sync_k,
            sync_min_margin: r.sync_min_margin_ph,
            multi_peak: r.multi_peak,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            bounds: None,
            n_starts: self.fit.n_starts,
            max_iters: self.fit.max_iters,
            tol: self.fit.tol,
            fit_domain: self.fit.domain.into(),
            seed: self.fit.seed,
        }
    }

    /// Checks that the dark adaptation period is long enough for the
    /// receiver's filters to settle and fill its reference window.
    pub fn check_receiver_coverage(&self) -> CliResult<()> {
        let rx = self.receiver();
        let settle = (rx.smooth_len - 1 + rx.diff_lag) as f64 / self.sample_rate_hz;
        let needed = settle + rx.adaptation_window;
        if self.dark_adaptation_s < needed {
            return Err(invalid(format!(
                "dark_adaptation_s = {} s is shorter than the {needed} s the receiver needs \
                 (filter settling plus adaptation_window_s)",
                self.dark_adaptation_s
            )));
        }
        Ok(())
    }

    /// Copy of the configuration with one sweepable value replaced.
    pub fn with_value(&self, parameter: SweepParameter, value: f64) -> CliResult<Self> {
        let mut cfg = self.clone();
        match parameter {
            SweepParameter::SigmaMolPerL => cfg.noise.sigma_mol_per_l = value,
            SweepParameter::DriftSlopeMolPerLPerS => cfg.model.drift_slope_mol_per_l_per_s = value,
            SweepParameter::SymbolDurationS => cfg.modulation.symbol_duration_s = value,
            SweepParameter::DutyFraction => cfg.modulation.duty_fraction = value,
            SweepParameter::Beta => cfg.receiver.beta = value,
            SweepParameter::SyncK => cfg.receiver.sync_k = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `count` random bits from a ChaCha8 stream; the first bit is forced to one.
pub fn random_bits(count: usize, seed: u64) -> CliResult<BitSequence> {
    if count == 0 {
        return Err(invalid("random_bits.count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = (0..count).map(|i| i == 0 || rng.random::<bool>()).collect();
    Ok(BitSequence::new(bits))
}
