use pqd_core::seed;
use pqd_core::signal::{
    add_awgn, generate_dataset, measure_snr, sample_params, synthesize, voltage_at, DisturbanceParams, EnvelopeEvent,
    EnvelopeKind, Flicker, Harmonics, ImpulsiveTransient, Ranges,
};
use pqd_core::{DisturbanceClass, TimeBase, Waveform};
use proptest::prelude::*;

fn flat_harmonics() -> Harmonics {
    Harmonics {
        alpha3: 0.0,
        alpha5: 0.0,
        alpha7: 0.0,
        phi3: 1.0,
        phi5: 2.0,
        phi7: 3.0,
    }
}

fn unit_sine(tb: &TimeBase) -> Waveform {
    let p = DisturbanceParams {
        harmonics: Some(flat_harmonics()),
        ..Default::default()
    };
    synthesize(DisturbanceClass::V1, &p, tb).unwrap()
}

fn envelope(kind: EnvelopeKind, alpha: f64) -> EnvelopeEvent {
    EnvelopeEvent {
        kind,
        alpha,
        t1: 0.04,
        t2: 0.14,
    }
}

#[test]
fn pure_sine_when_harmonics_vanish() {
    let tb = TimeBase::default();
    let w = unit_sine(&tb);
    assert_eq!(w.samples.len(), 640);
    for (k, &v) in w.samples.iter().enumerate() {
        assert_eq!(v, (tb.omega() * tb.time(k)).sin());
    }
}

#[test]
fn half_depth_sag_inside_the_window() {
    let tb = TimeBase::default();
    let p = DisturbanceParams {
        envelope: Some(envelope(EnvelopeKind::Sag, 0.5)),
        ..Default::default()
    };
    for t in [0.0401, 0.07, 0.1, 0.1399] {
        assert_eq!(voltage_at(&p, t), 0.5 * (tb.omega() * t).sin());
    }
    let w = synthesize(DisturbanceClass::V2, &p, &tb).unwrap();
    for (k, &v) in w.samples.iter().enumerate() {
        let t = tb.time(k);
        let s = (tb.omega() * t).sin();
        if (0.04..0.14).contains(&t) {
            assert_eq!(v, 0.5 * s);
        } else {
            assert_eq!(v, s);
        }
    }
}

#[test]
fn impulsive_transient_inactive_before_onset() {
    let tb = TimeBase::default();
    let p = DisturbanceParams {
        impulsive: Some(ImpulsiveTransient {
            alpha: 5.0,
            tau: 0.01,
            t3: 0.1,
            t4: 0.11,
        }),
        ..Default::default()
    };
    let w = synthesize(DisturbanceClass::V7, &p, &tb).unwrap();
    for (k, &v) in w.samples.iter().enumerate().take_while(|(k, _)| tb.time(*k) < 0.1) {
        assert_eq!(v, (tb.omega() * tb.time(k)).sin());
    }
    // Left-closed window: the onset sample already carries the full spike.
    assert_eq!(voltage_at(&p, 0.1), (tb.omega() * 0.1).sin() + 5.0);
}

#[test]
fn harmonics_plus_sag_composes_multiplicatively() {
    let tb = TimeBase::default();
    let p = DisturbanceParams {
        harmonics: Some(flat_harmonics()),
        envelope: Some(envelope(EnvelopeKind::Sag, 0.3)),
        ..Default::default()
    };
    let w = synthesize(DisturbanceClass::V8, &p, &tb).unwrap();
    for (k, &v) in w.samples.iter().enumerate() {
        let t = tb.time(k);
        if (0.04..0.14).contains(&t) {
            assert_eq!(v, 0.7 * (tb.omega() * t).sin());
        }
    }
}

#[test]
fn envelopes_leave_samples_outside_the_window_untouched() {
    let tb = TimeBase::default();
    for (class, kind, alpha) in [
        (DisturbanceClass::V2, EnvelopeKind::Sag, 0.8),
        (DisturbanceClass::V3, EnvelopeKind::Swell, 0.6),
        (DisturbanceClass::V4, EnvelopeKind::Interruption, 0.95),
    ] {
        for s in 0..50 {
            let mut p = sample_params(class, &tb, &mut seed::rng(s));
            p.envelope.as_mut().unwrap().alpha = alpha;
            let e = p.envelope.unwrap();
            assert_eq!(e.kind, kind);
            let w = synthesize(class, &p, &tb).unwrap();
            for (k, &v) in w.samples.iter().enumerate() {
                let t = tb.time(k);
                let sine = (tb.omega() * t).sin();
                if t < e.t1 || t >= e.t2 {
                    assert_eq!(v, sine, "{class} t={t}");
                } else {
                    let gain = if kind == EnvelopeKind::Swell { 1.0 + alpha } else { 1.0 - alpha };
                    assert_eq!(v, gain * sine, "{class} t={t}");
                }
            }
        }
    }
}

#[test]
fn flicker_vanishes_at_modulation_zero_crossings() {
    let tb = TimeBase::default();
    for s in 0..20 {
        let p = sample_params(DisturbanceClass::V5, &tb, &mut seed::rng(s));
        let Flicker { beta, .. } = p.flicker.unwrap();
        // sin(beta * omega * t) = 0 at t = j / (2 * 50 * beta).
        for j in 0..4 {
            let t = j as f64 / (100.0 * beta);
            let diff = voltage_at(&p, t) - (tb.omega() * t).sin();
            assert!(diff.abs() < 1e-14, "beta {beta} t {t}: {diff:e}");
        }
    }
}

#[test]
fn a_million_parameter_draws_stay_in_range() {
    let tb = TimeBase::default();
    let mut rng = seed::rng(2024);
    for i in 0..1_000_000u32 {
        let class = DisturbanceClass::ALL[i as usize % 18];
        let p = sample_params(class, &tb, &mut rng);
        if let Err(e) = p.validate(class, &tb) {
            panic!("draw {i} ({class}): {e}");
        }
        if let Some(e) = p.envelope {
            let margin = tb.period().min((tb.duration - (e.t2 - e.t1)) / 2.0);
            assert!(e.t1 >= margin - 1e-12 && e.t2 <= tb.duration - margin + 1e-12, "{e:?}");
        }
    }
}

#[test]
fn sampled_ranges_for_sag_and_oscillatory() {
    let tb = TimeBase::default();
    for s in 0..500 {
        let p = sample_params(DisturbanceClass::V2, &tb, &mut seed::rng(s));
        let e = p.envelope.unwrap();
        assert!(Ranges::SAG_ALPHA.contains(&e.alpha));
        let cycles = (e.t2 - e.t1) / tb.period();
        assert!((4.0 - 1e-9..=9.0 + 1e-9).contains(&cycles));
        let p = sample_params(DisturbanceClass::V6, &tb, &mut seed::rng(s));
        assert!((300.0..=900.0).contains(&p.oscillatory.unwrap().freq_hz));
    }
}

#[test]
fn awgn_variance_matches_signal_power() {
    // Unit sine, P = 0.5, 20 dB: sigma^2 = 0.005.
    let tb = TimeBase::default();
    let clean = unit_sine(&tb);
    let p: f64 = clean.samples.iter().map(|v| v * v).sum::<f64>() / 640.0;
    assert!((p - 0.5).abs() < 1e-12);
    let (mut sum_sq, mut count) = (0.0, 0);
    for s in 0..200 {
        let noisy = add_awgn(&clean, 20.0, &mut seed::rng(s)).unwrap();
        assert_eq!(noisy.snr_db, Some(20.0));
        for (a, b) in noisy.samples.iter().zip(&clean.samples) {
            sum_sq += (a - b) * (a - b);
            count += 1;
        }
    }
    let var = sum_sq / count as f64;
    assert!((var - 0.005).abs() < 0.005 * 0.03, "{var}");
    assert_eq!(clean, unit_sine(&tb), "input must not be modified");
}

#[test]
fn awgn_calibration_over_100_seeds() {
    let tb = TimeBase::default();
    let clean = unit_sine(&tb);
    for target in [20.0, 30.0, 40.0] {
        let measured: Vec<f64> = (0..100)
            .map(|s| {
                let noisy = add_awgn(&clean, target, &mut seed::rng(1000 + s)).unwrap();
                measure_snr(&clean.samples, &noisy.samples).unwrap()
            })
            .collect();
        let mean = measured.iter().sum::<f64>() / 100.0;
        assert!((mean - target).abs() <= 0.3, "target {target}: mean {mean}");
        assert!(measured.iter().all(|m| (m - target).abs() < 1.5), "{measured:?}");
    }
}

#[test]
fn measure_snr_closed_forms() {
    assert_eq!(measure_snr(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), f64::INFINITY);
    let v = measure_snr(&[1.0, 0.0], &[1.1, 0.0]).unwrap();
    assert!((v - 20.0).abs() < 1e-9, "{v}");
    assert!(measure_snr(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn dataset_sizes_and_determinism() {
    let tb = TimeBase::default();
    let one = generate_dataset(&[DisturbanceClass::V1], 1, None, &tb, 5).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].label, DisturbanceClass::V1);
    assert!(one[0].params.harmonics.is_some());

    let a = generate_dataset(&DisturbanceClass::ALL, 4, Some(30.0), &tb, 77).unwrap();
    let b = generate_dataset(&DisturbanceClass::ALL, 4, Some(30.0), &tb, 77).unwrap();
    assert_eq!(a.len(), 72);
    assert_eq!(a, b);
    let clean = generate_dataset(&DisturbanceClass::ALL, 4, None, &tb, 77).unwrap();
    for (n, c) in a.iter().zip(&clean) {
        assert_eq!(n.params, c.params, "clean and noisy sets share parameters");
        assert_ne!(n.samples, c.samples);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn samples_respect_the_amplitude_bound(class_idx in 0usize..18, s in any::<u64>()) {
        let tb = TimeBase::default();
        let class = DisturbanceClass::ALL[class_idx];
        let p = sample_params(class, &tb, &mut seed::rng(s));
        let w = synthesize(class, &p, &tb).unwrap();
        let bound = p.amplitude_bound();
        prop_assert!(w.samples.iter().all(|v| v.is_finite() && v.abs() <= bound + 1e-12));
    }

    #[test]
    fn out_of_range_parameters_are_rejected(alpha in 0.91f64..5.0) {
        let tb = TimeBase::default();
        let p = DisturbanceParams {
            envelope: Some(envelope(EnvelopeKind::Sag, alpha)),
            ..Default::default()
        };
        prop_assert!(synthesize(DisturbanceClass::V2, &p, &tb).is_err());
    }
}
