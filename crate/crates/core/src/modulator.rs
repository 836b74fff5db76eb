//! On-off keying with a fractional rectangular light pulse.
//!
//! A `1` lights the LED for the first `duty_fraction` of the symbol interval
//! and keeps it dark for the rest; a `0` keeps it dark for the whole interval.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::IlluminationState;

/// Ordered binary symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitSequence(Vec<bool>);

impl BitSequence {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_u8s(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(invalid(format!("bit must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Number of positions where `self` and `other` differ. Missing positions
    /// in the shorter sequence count as errors.
    pub fn hamming_distance(&self, other: &BitSequence) -> usize {
        let common = self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count();
        common + self.len().abs_diff(other.len())
    }
}

impl FromStr for BitSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl From<Vec<bool>> for BitSequence {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig {
    /// Symbol interval in seconds.
    pub symbol_duration: f64,
    /// Fraction of the symbol interval lit for a `1`, in (0, 1].
    pub duty_fraction: f64,
}

impl ModulationConfig {
    pub fn new(symbol_duration: f64, duty_fraction: f64) -> Result<Self> {
        let cfg = Self { symbol_duration, duty_fraction };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_duration.is_finite() && self.symbol_duration > 0.0) {
            return Err(invalid(format!(
                "symbol duration must be > 0 s, got {}",
                self.symbol_duration
            )));
        }
        // 0 would make both symbols dark.
        if !(self.duty_fraction > 0.0 && self.duty_fraction <= 1.0) {
            return Err(invalid(format!(
                "duty fraction must be in (0, 1], got {}",
                self.duty_fraction
            )));
        }
        Ok(())
    }

    pub fn pulse_duration(&self) -> f64 {
        self.duty_fraction * self.symbol_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: IlluminationState,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Contiguous light/dark segments covering `[0, total_duration]`.
///
/// Adjacent segments always differ in state, so two schedules describing the
/// same waveform compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalSchedule {
    segments: Vec<Segment>,
}

impl OpticalSchedule {
    /// Builds a schedule from raw segments, merging equal neighbours and
    /// dropping empty ones. Fails unless the segments start at 0 and are
    /// contiguous.
    pub fn from_segments(segments: impl IntoIterator<Item = Segment>) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::new();
        let mut expected_start = 0.0;
        for seg in segments {
            if !(seg.start.is_finite() && seg.end.is_finite()) {
                return Err(invalid("segment bounds must be finite"));
            }
            if seg.end < seg.start {
                return Err(invalid(format!(
                    "segment [{}, {}) ends before it starts",
                    seg.start, seg.end
                )));
            }
            if seg.start != expected_start {
                return Err(invalid(format!(
                    "segments not contiguous: expected start {expected_start}, got {}",
                    seg.start
                )));
            }
            expected_start = seg.end;
            push_merged(&mut out, seg);
        }
        if out.is_empty() {
            return Err(invalid("schedule has no segments of positive length"));
        }
        Ok(Self { segments: out })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// State in effect at `t`. Segments are half-open `[start, end)`, except
    /// that `t == total_duration` maps to the last segment.
    pub fn state_at(&self, t: f64) -> Option<IlluminationState> {
        if !(t >= 0.0 && t <= self.total_duration()) {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.end <= t);
        let idx = idx.min(self.segments.len() - 1);
        Some(self.segments[idx].state)
    }

    pub fn time_in(&self, state: IlluminationState) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.state == state)
            .map(Segment::duration)
            .sum()
    }

    /// Appends `other`, shifted to start where `self` ends.
    pub fn concat(&self, other: &OpticalSchedule) -> OpticalSchedule {
        let offset = self.total_duration();
        let mut segments = self.segments.clone();
        for seg in &other.segments {
            push_merged(
                &mut segments,
                Segment { start: seg.start + offset, end: seg.end + offset, state: seg.state },
            );
        }
        OpticalSchedule { segments }
    }
}

fn push_merged(out: &mut Vec<Segment>, seg: Segment) {
    if seg.end <= seg.start {
        return;
    }
    match out.last_mut() {
        Some(last) if last.state == seg.state => last.end = seg.end,
        _ => out.push(seg),
    }
}

pub fn schedule_from_bits(bits: &BitSequence, cfg: &ModulationConfig) -> Result<OpticalSchedule> {
    cfg.validate()?;
    if bits.is_empty() {
        return Err(invalid("cannot modulate an empty bit sequence"));
    }
    let period = cfg.symbol_duration;
    let pulse = cfg.pulse_duration();
    let mut segments = Vec::with_capacity(2 * bits.len());
    for (k, &bit) in bits.bits().iter().enumerate() {
        let t0 = k as f64 * period;
        let t1 = (k + 1) as f64 * period;
        if bit {
            let on_end = if cfg.duty_fraction >= 1.0 { t1 } else { t0 + pulse };
            push_merged(&mut segments, Segment { start: t0, end: on_end, state: IlluminationState::Light });
            push_merged(&mut segments, Segment { start: on_end, end: t1, state: IlluminationState::Dark });
        } else {
            push_merged(&mut segments, Segment { start: t0, end: t1, state: IlluminationState::Dark });
        }
    }
    Ok(OpticalSchedule { segments })
}

/// Prepends a dark period of `duration` seconds, shifting the schedule.
pub fn prepend_dark_adaptation(schedule: &OpticalSchedule, duration: f64) -> Result<OpticalSchedule> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(invalid(format!("dark adaptation must be >= 0 s, got {duration}")));
    }
    if duration == 0.0 {
        return Ok(schedule.clone());
    }
    let dark = OpticalSchedule {
        segments: vec![Segment { start: 0.0, end: duration, state: IlluminationState::Dark }],
    };
    Ok(dark.concat(schedule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use IlluminationState::{Dark, Light};

    fn seg(start: f64, end: f64, state: IlluminationState) -> Segment {
        Segment { start, end, state }
    }

    fn bits(s: &str) -> BitSequence {
        s.parse().unwrap()
    }

    #[test]
    fn single_one_quarter_duty() {
        let cfg = ModulationConfig::new(60.0, 0.25).unwrap();
        let s = schedule_from_bits(&bits("1"), &cfg).unwrap();
        assert_eq!(s.segments(), &[seg(0.0, 15.0, Light), seg(15.0, 60.0, Dark)]);
        assert_eq!(s.total_duration(), 60.0);
    }

    #[test]
    fn zeros_merge_into_one_dark_segment() {
        let cfg = ModulationConfig::new(60.0, 0.25).unwrap();
        let s = schedule_from_bits(&bits("00"), &cfg).unwrap();
        assert_eq!(s.segments(), &[seg(0.0, 120.0, Dark)]);
    }

    #[test]
    fn two_ones_half_duty() {
        let cfg = ModulationConfig::new(60.0, 0.5).unwrap();
        let s = schedule_from_bits(&bits("11"), &cfg).unwrap();
        assert_eq!(
            s.segments(),
            &[seg(0.0, 30.0, Light), seg(30.0, 60.0, Dark), seg(60.0, 90.0, Light), seg(90.0, 120.0, Dark)]
        );
    }

    #[test]
    fn full_duty_all_ones_is_one_light_segment() {
        let cfg = ModulationConfig::new(60.0, 1.0).unwrap();
        let s = schedule_from_bits(&bits("1111"), &cfg).unwrap();
        assert_eq!(s.segments(), &[seg(0.0, 240.0, Light)]);
    }

    #[test]
    fn invalid_inputs() {
        let cfg = ModulationConfig { symbol_duration: 60.0, duty_fraction: 0.25 };
        assert!(schedule_from_bits(&BitSequence::default(), &cfg).is_err());
        assert!(ModulationConfig::new(60.0, 0.0).is_err());
        assert!(ModulationConfig::new(60.0, 1.01).is_err());
        assert!(ModulationConfig::new(0.0, 0.5).is_err());
        assert!("10a1".parse::<BitSequence>().is_err());
        assert!(BitSequence::from_u8s(&[0, 1, 2]).is_err());
    }

    #[test]
    fn dark_adaptation() {
        let cfg = ModulationConfig::new(60.0, 0.25).unwrap();
        let s = schedule_from_bits(&bits("1"), &cfg).unwrap();
        assert_eq!(prepend_dark_adaptation(&s, 0.0).unwrap(), s);

        let light = OpticalSchedule::from_segments([seg(0.0, 15.0, Light)]).unwrap();
        let adapted = prepend_dark_adaptation(&light, 1800.0).unwrap();
        assert_eq!(adapted.segments(), &[seg(0.0, 1800.0, Dark), seg(1800.0, 1815.0, Light)]);

        // leading dark symbols merge with the adaptation period
        let s = schedule_from_bits(&bits("01"), &cfg).unwrap();
        let adapted = prepend_dark_adaptation(&s, 1800.0).unwrap();
        assert_eq!(adapted.segments()[0], seg(0.0, 1860.0, Dark));
        assert!(prepend_dark_adaptation(&s, -1.0).is_err());
    }

    #[test]
    fn from_segments_checks_contiguity() {
        assert!(OpticalSchedule::from_segments([seg(0.0, 10.0, Dark), seg(11.0, 20.0, Light)]).is_err());
        assert!(OpticalSchedule::from_segments([seg(1.0, 10.0, Dark)]).is_err());
        assert!(OpticalSchedule::from_segments([seg(0.0, 10.0, Dark), seg(10.0, 5.0, Light)]).is_err());
        let s = OpticalSchedule::from_segments([seg(0.0, 10.0, Dark), seg(10.0, 20.0, Dark)]).unwrap();
        assert_eq!(s.segments(), &[seg(0.0, 20.0, Dark)]);
    }

    #[test]
    fn state_lookup() {
        let cfg = ModulationConfig::new(60.0, 0.25).unwrap();
        let s = schedule_from_bits(&bits("101"), &cfg).unwrap();
        assert_eq!(s.state_at(0.0), Some(Light));
        assert_eq!(s.state_at(15.0), Some(Dark));
        assert_eq!(s.state_at(125.0), Some(Light));
        assert_eq!(s.state_at(180.0), Some(Dark));
        assert_eq!(s.state_at(180.1), None);
        assert_eq!(s.state_at(-0.1), None);
    }

    fn bit_vec() -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), 1..60)
    }

    proptest! {
        #[test]
        fn light_time_matches_number_of_ones(b in bit_vec(), alpha in 0.05f64..1.0, period in 1.0f64..600.0) {
            let cfg = ModulationConfig::new(period, alpha).unwrap();
            let b = BitSequence::new(b);
            let s = schedule_from_bits(&b, &cfg).unwrap();
            let expected = alpha * period * b.count_ones() as f64;
            prop_assert!((s.time_in(Light) - expected).abs() <= 1e-9 * (1.0 + expected));
            prop_assert!((s.total_duration() - period * b.len() as f64).abs() <= 1e-9 * s.total_duration());
        }

        #[test]
        fn schedule_is_contiguous_and_canonical(b in bit_vec(), alpha in 0.05f64..=1.0) {
            let cfg = ModulationConfig::new(60.0, alpha).unwrap();
            let s = schedule_from_bits(&BitSequence::new(b), &cfg).unwrap();
            prop_assert_eq!(s.segments()[0].start, 0.0);
            for w in s.segments().windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].state != w[1].state);
            }
            for seg in s.segments() {
                prop_assert!(seg.start < seg.end);
            }
        }

        #[test]
        fn splitting_and_concatenating_preserves_schedule(b in bit_vec(), split in 0usize..60, alpha in prop::sample::select(vec![0.25, 0.5, 0.75, 1.0])) {
            prop_assume!(split >= 1 && split < b.len());
            // power-of-two fractions of an integral period keep all boundaries exact
            let cfg = ModulationConfig::new(64.0, alpha).unwrap();
            let whole = schedule_from_bits(&BitSequence::new(b.clone()), &cfg).unwrap();
            let head = schedule_from_bits(&BitSequence::new(b[..split].to_vec()), &cfg).unwrap();
            let tail = schedule_from_bits(&BitSequence::new(b[split..].to_vec()), &cfg).unwrap();
            prop_assert_eq!(head.concat(&tail), whole);
        }

        #[test]
        fn bit_string_round_trip(b in bit_vec()) {
            let seq = BitSequence::new(b);
            prop_assert_eq!(seq.to_string().parse::<BitSequence>().unwrap(), seq);
        }
    }
}
