use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Component, DisturbanceClass, TimeBase};
use crate::error::{Error, Result};

/// Parameter ranges of the disturbance models. Durations are in fundamental
/// periods, everything else in its natural unit.
pub struct Ranges;

impl Ranges {
    pub const HARMONIC_ALPHA: RangeInclusive<f64> = 0.0..=0.15;
    pub const HARMONIC_PHASE: RangeInclusive<f64> = 0.0..=2.0 * PI;
    pub const SAG_ALPHA: RangeInclusive<f64> = 0.1..=0.9;
    pub const SWELL_ALPHA: RangeInclusive<f64> = 0.1..=0.9;
    pub const INTERRUPTION_ALPHA: RangeInclusive<f64> = 0.9..=1.0;
    pub const ENVELOPE_CYCLES: RangeInclusive<f64> = 4.0..=9.0;
    pub const FLICKER_ALPHA: RangeInclusive<f64> = 0.3..=0.5;
    pub const FLICKER_BETA: RangeInclusive<f64> = 0.1..=0.4;
    pub const OSCILLATORY_ALPHA: RangeInclusive<f64> = 0.1..=0.8;
    pub const IMPULSIVE_ALPHA: RangeInclusive<f64> = 1.0..=10.0;
    pub const TRANSIENT_TAU: RangeInclusive<f64> = 0.008..=0.04;
    pub const TRANSIENT_CYCLES: RangeInclusive<f64> = 0.05..=3.0;
    pub const OSCILLATORY_FREQ: RangeInclusive<f64> = 300.0..=900.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonics {
    pub alpha3: f64,
    pub alpha5: f64,
    pub alpha7: f64,
    pub phi3: f64,
    pub phi5: f64,
    pub phi7: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Sag,
    Swell,
    Interruption,
}

/// Sag, swell or interruption of depth `alpha` over `[t1, t2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEvent {
    pub kind: EnvelopeKind,
    pub alpha: f64,
    pub t1: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flicker {
    pub alpha_f: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryTransient {
    pub alpha: f64,
    pub tau: f64,
    pub t3: f64,
    pub t4: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulsiveTransient {
    pub alpha: f64,
    pub tau: f64,
    pub t3: f64,
    pub t4: f64,
}

/// One parameter set per constituent disturbance of a class; absent
/// components are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmonics: Option<Harmonics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flicker: Option<Flicker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillatory: Option<OscillatoryTransient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulsive: Option<ImpulsiveTransient>,
}

const TOL: f64 = 1e-9;

fn check(name: &str, v: f64, r: &RangeInclusive<f64>) -> Result<()> {
    if v.is_finite() && v >= r.start() - TOL && v <= r.end() + TOL {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{name} = {v} outside [{}, {}]",
            r.start(),
            r.end()
        )))
    }
}

fn check_window(name: &str, start: f64, end: f64, cycles: &RangeInclusive<f64>, tb: &TimeBase) -> Result<()> {
    let period = tb.period();
    if !(start >= 0.0 && start < end && end <= tb.duration + TOL) {
        return Err(Error::InvalidParams(format!(
            "{name} window [{start}, {end}) not inside [0, {}]",
            tb.duration
        )));
    }
    check(&format!("{name} length / T"), (end - start) / period, cycles)
}

impl DisturbanceParams {
    /// Check that exactly the class's components are present and every field
    /// lies in its range.
    pub fn validate(&self, class: DisturbanceClass, tb: &TimeBase) -> Result<()> {
        let expected_envelope = if class.has(Component::Sag) {
            Some(EnvelopeKind::Sag)
        } else if class.has(Component::Swell) {
            Some(EnvelopeKind::Swell)
        } else if class.has(Component::Interruption) {
            Some(EnvelopeKind::Interruption)
        } else {
            None
        };
        let presence = [
            ("harmonics", self.harmonics.is_some(), class.has(Component::Harmonics)),
            ("flicker", self.flicker.is_some(), class.has(Component::Flicker)),
            ("oscillatory", self.oscillatory.is_some(), class.has(Component::Oscillatory)),
            ("impulsive", self.impulsive.is_some(), class.has(Component::Impulsive)),
        ];
        for (name, got, want) in presence {
            if got != want {
                return Err(Error::InvalidParams(format!(
                    "{class}: {name} component {} but the class {}",
                    if got { "present" } else { "missing" },
                    if want { "requires it" } else { "has none" }
                )));
            }
        }
        if self.envelope.map(|e| e.kind) != expected_envelope {
            return Err(Error::InvalidParams(format!(
                "{class}: envelope {:?}, expected {:?}",
                self.envelope.map(|e| e.kind),
                expected_envelope
            )));
        }

        if let Some(h) = &self.harmonics {
            check("alpha3", h.alpha3, &Ranges::HARMONIC_ALPHA)?;
            check("alpha5", h.alpha5, &Ranges::HARMONIC_ALPHA)?;
            check("alpha7", h.alpha7, &Ranges::HARMONIC_ALPHA)?;
            check("phi3", h.phi3, &Ranges::HARMONIC_PHASE)?;
            check("phi5", h.phi5, &Ranges::HARMONIC_PHASE)?;
            check("phi7", h.phi7, &Ranges::HARMONIC_PHASE)?;
        }
        if let Some(e) = &self.envelope {
            let range = match e.kind {
                EnvelopeKind::Sag => Ranges::SAG_ALPHA,
                EnvelopeKind::Swell => Ranges::SWELL_ALPHA,
                EnvelopeKind::Interruption => Ranges::INTERRUPTION_ALPHA,
            };
            check("envelope alpha", e.alpha, &range)?;
            check_window("envelope", e.t1, e.t2, &Ranges::ENVELOPE_CYCLES, tb)?;
        }
        if let Some(f) = &self.flicker {
            check("alpha_f", f.alpha_f, &Ranges::FLICKER_ALPHA)?;
            check("beta", f.beta, &Ranges::FLICKER_BETA)?;
        }
        if let Some(o) = &self.oscillatory {
            check("oscillatory alpha", o.alpha, &Ranges::OSCILLATORY_ALPHA)?;
            check("oscillatory tau", o.tau, &Ranges::TRANSIENT_TAU)?;
            check("f_n", o.freq_hz, &Ranges::OSCILLATORY_FREQ)?;
            check_window("oscillatory", o.t3, o.t4, &Ranges::TRANSIENT_CYCLES, tb)?;
        }
        if let Some(i) = &self.impulsive {
            check("impulsive alpha", i.alpha, &Ranges::IMPULSIVE_ALPHA)?;
            check("impulsive tau", i.tau, &Ranges::TRANSIENT_TAU)?;
            check_window("impulsive", i.t3, i.t4, &Ranges::TRANSIENT_CYCLES, tb)?;
        }
        Ok(())
    }

    /// Upper bound on `|V(t)|` implied by the composition rule.
    pub fn amplitude_bound(&self) -> f64 {
        let carrier = 1.0
            + self
                .harmonics
                .map_or(0.0, |h| h.alpha3 + h.alpha5 + h.alpha7);
        let envelope = self.envelope.map_or(1.0, |e| match e.kind {
            EnvelopeKind::Swell => 1.0 + e.alpha,
            _ => 1.0,
        });
        let flicker = self.flicker.map_or(1.0, |f| 1.0 + f.alpha_f);
        envelope * flicker * carrier
            + self.oscillatory.map_or(0.0, |o| o.alpha)
            + self.impulsive.map_or(0.0, |i| i.alpha)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: &RangeInclusive<f64>) -> f64 {
    rng.gen_range(r.clone())
}

/// Draw an event window of `cycles` fundamental periods. The start is uniform
/// over the positions that keep a margin of one period (or half the slack,
/// if smaller) from both record edges.
fn place_window<R: Rng + ?Sized>(rng: &mut R, cycles: &RangeInclusive<f64>, tb: &TimeBase) -> (f64, f64) {
    let period = tb.period();
    let hi = cycles.end().min(tb.duration / period);
    let len = if hi <= *cycles.start() {
        hi * period
    } else {
        rng.gen_range(*cycles.start()..=hi) * period
    };
    let slack = (tb.duration - len).max(0.0);
    let margin = period.min(slack / 2.0);
    let start = if slack - 2.0 * margin > 0.0 {
        rng.gen_range(margin..=slack - margin)
    } else {
        margin
    };
    (start, (start + len).min(tb.duration))
}

/// Draw a parameter set for `class`, uniformly inside every range.
pub fn sample_params<R: Rng + ?Sized>(class: DisturbanceClass, tb: &TimeBase, rng: &mut R) -> DisturbanceParams {
    let mut p = DisturbanceParams::default();
    // Fixed draw order: harmonics, envelope, flicker, oscillatory, impulsive.
    if class.has(Component::Harmonics) {
        p.harmonics = Some(Harmonics {
            alpha3: uniform(rng, &Ranges::HARMONIC_ALPHA),
            alpha5: uniform(rng, &Ranges::HARMONIC_ALPHA),
            alpha7: uniform(rng, &Ranges::HARMONIC_ALPHA),
            phi3: uniform(rng, &Ranges::HARMONIC_PHASE),
            phi5: uniform(rng, &Ranges::HARMONIC_PHASE),
            phi7: uniform(rng, &Ranges::HARMONIC_PHASE),
        });
    }
    let envelope = [
        (Component::Sag, EnvelopeKind::Sag, Ranges::SAG_ALPHA),
        (Component::Swell, EnvelopeKind::Swell, Ranges::SWELL_ALPHA),
        (Component::Interruption, EnvelopeKind::Interruption, Ranges::INTERRUPTION_ALPHA),
    ]
    .into_iter()
    .find(|(c, _, _)| class.has(*c));
    if let Some((_, kind, range)) = envelope {
        let alpha = uniform(rng, &range);
        let (t1, t2) = place_window(rng, &Ranges::ENVELOPE_CYCLES, tb);
        p.envelope = Some(EnvelopeEvent { kind, alpha, t1, t2 });
    }
    if class.has(Component::Flicker) {
        p.flicker = Some(Flicker {
            alpha_f: uniform(rng, &Ranges::FLICKER_ALPHA),
            beta: uniform(rng, &Ranges::FLICKER_BETA),
        });
    }
    if class.has(Component::Oscillatory) {
        let alpha = uniform(rng, &Ranges::OSCILLATORY_ALPHA);
        let tau = uniform(rng, &Ranges::TRANSIENT_TAU);
        let freq_hz = uniform(rng, &Ranges::OSCILLATORY_FREQ);
        let (t3, t4) = place_window(rng, &Ranges::TRANSIENT_CYCLES, tb);
        p.oscillatory = Some(OscillatoryTransient { alpha, tau, t3, t4, freq_hz });
    }
    if class.has(Component::Impulsive) {
        let alpha = uniform(rng, &Ranges::IMPULSIVE_ALPHA);
        let tau = uniform(rng, &Ranges::TRANSIENT_TAU);
        let (t3, t4) = place_window(rng, &Ranges::TRANSIENT_CYCLES, tb);
        p.impulsive = Some(ImpulsiveTransient { alpha, tau, t3, t4 });
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn sag_draw_respects_depth_and_length() {
        let tb = TimeBase::default();
        for s in 0..200 {
            let p = sample_params(DisturbanceClass::V2, &tb, &mut seed::rng(s));
            let e = p.envelope.unwrap();
            assert!((0.1..=0.9).contains(&e.alpha));
            let cycles = (e.t2 - e.t1) * crate::signal::FUNDAMENTAL_HZ;
            assert!((4.0 - 1e-9..=9.0 + 1e-9).contains(&cycles), "{cycles}");
            assert!(e.t1 >= 0.0 && e.t2 <= tb.duration);
        }
    }

    #[test]
    fn oscillatory_frequency_range() {
        let tb = TimeBase::default();
        for s in 0..200 {
            let p = sample_params(DisturbanceClass::V6, &tb, &mut seed::rng(s));
            let f = p.oscillatory.unwrap().freq_hz;
            assert!((300.0..=900.0).contains(&f));
        }
    }

    #[test]
    fn short_events_keep_a_full_period_margin() {
        let tb = TimeBase::default();
        let t = tb.period();
        for s in 0..200 {
            let p = sample_params(DisturbanceClass::V7, &tb, &mut seed::rng(s));
            let i = p.impulsive.unwrap();
            assert!(i.t3 >= t - 1e-12 && i.t4 <= tb.duration - t + 1e-12);
        }
    }

    #[test]
    fn mixed_classes_get_one_set_per_component() {
        let tb = TimeBase::default();
        let p = sample_params(DisturbanceClass::V18, &tb, &mut seed::rng(3));
        assert!(p.harmonics.is_some());
        assert!(p.oscillatory.is_some());
        assert!(p.impulsive.is_some());
        assert_eq!(p.envelope.unwrap().kind, EnvelopeKind::Sag);
        assert!(p.flicker.is_none());
        assert!(p.validate(DisturbanceClass::V18, &tb).is_ok());
        assert!(p.validate(DisturbanceClass::V15, &tb).is_err());
    }

    #[test]
    fn serde_round_trip_omits_absent_components() {
        let tb = TimeBase::default();
        let p = sample_params(DisturbanceClass::V13, &tb, &mut seed::rng(9));
        let s = serde_json::to_string(&p).unwrap();
        assert!(!s.contains("harmonics"));
        let back: DisturbanceParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
