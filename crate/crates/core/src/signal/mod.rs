//! Synthetic power-quality disturbance waveforms.
//!
//! Seven single disturbances (V1..V7) and eleven mixtures of them (V8..V18)
//! are synthesized on a 50 Hz per-unit carrier. Mixed classes are composed
//! as `envelope(t) * flicker(t) * carrier(t) + transients(t)`, where the
//! carrier is the fundamental plus any harmonic terms, so each single-class
//! model is the special case with the other factors at their identity.

mod dataset;
mod noise;
mod params;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    generate_dataset, generate_record, read_waveform_set, write_waveform_set, WaveformRecord, WAVEFORM_MANIFEST,
};
pub use noise::{add_awgn, measure_snr};
pub use params::{
    sample_params, DisturbanceParams, EnvelopeEvent, EnvelopeKind, Flicker, Harmonics,
    ImpulsiveTransient, OscillatoryTransient, Ranges,
};

/// Nominal grid frequency in Hz.
pub const FUNDAMENTAL_HZ: f64 = 50.0;

/// Highest oscillatory-transient frequency the generator can emit.
pub const MAX_TRANSIENT_HZ: f64 = 900.0;

/// Sampling grid of a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeBase {
    pub sample_rate: f64,
    pub duration: f64,
}

impl Default for TimeBase {
    /// 3.2 kHz for 10 cycles, i.e. 640 samples.
    fn default() -> Self {
        TimeBase {
            sample_rate: 3200.0,
            duration: 0.2,
        }
    }
}

impl TimeBase {
    pub fn new(sample_rate: f64, duration: f64) -> Result<Self> {
        let tb = TimeBase {
            sample_rate,
            duration,
        };
        tb.validate()?;
        Ok(tb)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 2.0 * MAX_TRANSIENT_HZ) {
            return Err(Error::InvalidTimeBase(format!(
                "sample rate {} Hz must exceed {} Hz",
                self.sample_rate,
                2.0 * MAX_TRANSIENT_HZ
            )));
        }
        let cycles = self.duration * FUNDAMENTAL_HZ;
        if !(cycles.is_finite() && cycles >= 1.0 && (cycles - cycles.round()).abs() < 1e-9) {
            return Err(Error::InvalidTimeBase(format!(
                "duration {} s is not a whole number of fundamental periods",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.sample_rate * self.duration).round() as usize
    }

    /// Fundamental period T in seconds.
    pub fn period(&self) -> f64 {
        1.0 / FUNDAMENTAL_HZ
    }

    /// Angular frequency of the fundamental.
    pub fn omega(&self) -> f64 {
        2.0 * PI * FUNDAMENTAL_HZ
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.sample_rate
    }
}

/// The elementary disturbances that the 18 classes are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Harmonics,
    Sag,
    Swell,
    Interruption,
    Flicker,
    Oscillatory,
    Impulsive,
}

/// Class labels V1..V18.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DisturbanceClass {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
    V9,
    V10,
    V11,
    V12,
    V13,
    V14,
    V15,
    V16,
    V17,
    V18,
}

impl DisturbanceClass {
    pub const COUNT: usize = 18;

    pub const ALL: [DisturbanceClass; 18] = [
        Self::V1,
        Self::V2,
        Self::V3,
        Self::V4,
        Self::V5,
        Self::V6,
        Self::V7,
        Self::V8,
        Self::V9,
        Self::V10,
        Self::V11,
        Self::V12,
        Self::V13,
        Self::V14,
        Self::V15,
        Self::V16,
        Self::V17,
        Self::V18,
    ];

    /// Zero-based index, `V1 -> 0`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        const LABELS: [&str; 18] = [
            "V1", "V2", "V3", "V4", "V5", "V6", "V7", "V8", "V9", "V10", "V11", "V12", "V13",
            "V14", "V15", "V16", "V17", "V18",
        ];
        LABELS[self.index()]
    }

    pub fn description(self) -> &'static str {
        use DisturbanceClass::*;
        match self {
            V1 => "harmonics",
            V2 => "sag",
            V3 => "swell",
            V4 => "interruption",
            V5 => "flicker",
            V6 => "oscillatory transient",
            V7 => "impulsive transient",
            V8 => "harmonics + sag",
            V9 => "harmonics + swell",
            V10 => "interruption + harmonics",
            V11 => "impulsive transient + sag",
            V12 => "impulsive transient + swell",
            V13 => "impulsive transient + flicker",
            V14 => "impulsive transient + harmonics",
            V15 => "harmonics + oscillatory transient + sag",
            V16 => "harmonics + oscillatory transient + swell",
            V17 => "flicker + impulsive transient + harmonics",
            V18 => "harmonics + oscillatory transient + impulsive transient + sag",
        }
    }

    pub fn components(self) -> &'static [Component] {
        use Component::*;
        use DisturbanceClass::*;
        match self {
            V1 => &[Harmonics],
            V2 => &[Sag],
            V3 => &[Swell],
            V4 => &[Interruption],
            V5 => &[Flicker],
            V6 => &[Oscillatory],
            V7 => &[Impulsive],
            V8 => &[Harmonics, Sag],
            V9 => &[Harmonics, Swell],
            V10 => &[Interruption, Harmonics],
            V11 => &[Impulsive, Sag],
            V12 => &[Impulsive, Swell],
            V13 => &[Impulsive, Flicker],
            V14 => &[Impulsive, Harmonics],
            V15 => &[Harmonics, Oscillatory, Sag],
            V16 => &[Harmonics, Oscillatory, Swell],
            V17 => &[Flicker, Impulsive, Harmonics],
            V18 => &[Harmonics, Oscillatory, Impulsive, Sag],
        }
    }

    pub fn has(self, c: Component) -> bool {
        self.components().contains(&c)
    }

    /// Parse a comma-separated list such as `V1,V8,V18`; `all` selects every class.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<Self> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let c: Self = part.parse()?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(Error::UnknownClass(s.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for DisturbanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DisturbanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

impl Serialize for DisturbanceClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for DisturbanceClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A sampled per-unit voltage record.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub timebase: TimeBase,
    pub label: DisturbanceClass,
    pub params: DisturbanceParams,
    /// `None` for a noiseless record.
    pub snr_db: Option<f64>,
}

/// Heaviside window `u(t - start) - u(t - end)` with `u(0) = 1`.
#[inline]
fn window(t: f64, start: f64, end: f64) -> f64 {
    if t >= start && t < end {
        1.0
    } else {
        0.0
    }
}

/// Evaluate the class model at time `t`.
pub fn voltage_at(params: &DisturbanceParams, t: f64) -> f64 {
    let w = 2.0 * PI * FUNDAMENTAL_HZ;
    let mut carrier = (w * t).sin();
    if let Some(h) = &params.harmonics {
        carrier += h.alpha3 * (3.0 * w * t + h.phi3).sin()
            + h.alpha5 * (5.0 * w * t + h.phi5).sin()
            + h.alpha7 * (7.0 * w * t + h.phi7).sin();
    }
    let mut gain = 1.0;
    if let Some(e) = &params.envelope {
        let u = window(t, e.t1, e.t2);
        gain *= match e.kind {
            EnvelopeKind::Sag | EnvelopeKind::Interruption => 1.0 - e.alpha * u,
            EnvelopeKind::Swell => 1.0 + e.alpha * u,
        };
    }
    if let Some(f) = &params.flicker {
        gain *= 1.0 + f.alpha_f * (f.beta * w * t).sin();
    }
    let mut v = gain * carrier;
    if let Some(o) = &params.oscillatory {
        let u = window(t, o.t3, o.t4);
        if u != 0.0 {
            let dt = t - o.t3;
            v += o.alpha * (-dt / o.tau).exp() * (2.0 * PI * o.freq_hz * dt).sin();
        }
    }
    if let Some(i) = &params.impulsive {
        let u = window(t, i.t3, i.t4);
        if u != 0.0 {
            v += i.alpha * (-(t - i.t3) / i.tau).exp();
        }
    }
    v
}

/// Sample the class model on the given time base.
pub fn synthesize(
    class: DisturbanceClass,
    params: &DisturbanceParams,
    tb: &TimeBase,
) -> Result<Waveform> {
    tb.validate()?;
    params.validate(class, tb)?;
    let samples: Vec<f64> = (0..tb.n_samples())
        .map(|k| voltage_at(params, tb.time(k)))
        .collect();
    if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "non-finite sample at index {bad}"
        )));
    }
    Ok(Waveform {
        samples,
        timebase: *tb,
        label: class,
        params: params.clone(),
        snr_db: None,
    })
}
