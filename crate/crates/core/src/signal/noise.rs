use rand::Rng;
use rand_distr::StandardNormal;

use super::Waveform;
use crate::error::{Error, Result};

/// Add white Gaussian noise at `snr_db` relative to the mean signal power.
///
/// `+inf` returns the samples unchanged (but tagged). The input must be a
/// noiseless record.
pub fn add_awgn<R: Rng + ?Sized>(w: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    if w.snr_db.is_some() {
        return Err(Error::Precondition(
            "add_awgn expects a noiseless waveform".into(),
        ));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Precondition(format!("invalid SNR {snr_db} dB")));
    }
    let mut out = w.clone();
    out.snr_db = Some(snr_db);
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let n = w.samples.len().max(1) as f64;
    let power = w.samples.iter().map(|v| v * v).sum::<f64>() / n;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in out.samples.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

/// `10 log10(sum clean^2 / sum (noisy - clean)^2)`; `+inf` when the residual
/// is exactly zero.
pub fn measure_snr(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::shape(format!(
            "measure_snr: lengths {} and {} differ",
            clean.len(),
            noisy.len()
        )));
    }
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let residual: f64 = clean
        .iter()
        .zip(noisy)
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / residual).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::signal::{sample_params, synthesize, DisturbanceClass, TimeBase};

    fn unit_sine() -> Waveform {
        let tb = TimeBase::default();
        let mut p = sample_params(DisturbanceClass::V1, &tb, &mut seed::rng(0));
        let h = p.harmonics.as_mut().unwrap();
        h.alpha3 = 0.0;
        h.alpha5 = 0.0;
        h.alpha7 = 0.0;
        synthesize(DisturbanceClass::V1, &p, &tb).unwrap()
    }

    #[test]
    fn measure_snr_direct_arithmetic() {
        let snr = measure_snr(&[1.0, 0.0], &[1.1, 0.0]).unwrap();
        assert!((snr - 20.0).abs() < 1e-9, "{snr}");
        assert_eq!(measure_snr(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), f64::INFINITY);
        assert!(measure_snr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn noise_variance_follows_signal_power() {
        // Unit sine has P = 0.5, so 20 dB means sigma^2 = 0.005.
        let w = unit_sine();
        let p: f64 = w.samples.iter().map(|v| v * v).sum::<f64>() / w.samples.len() as f64;
        assert!((p - 0.5).abs() < 1e-12);
        let mut var = 0.0;
        let trials = 200;
        for s in 0..trials {
            let noisy = add_awgn(&w, 20.0, &mut seed::rng(s)).unwrap();
            var += noisy
                .samples
                .iter()
                .zip(&w.samples)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / w.samples.len() as f64;
        }
        var /= trials as f64;
        assert!((var - 0.005).abs() < 0.005 * 0.02, "{var}");
    }

    #[test]
    fn infinite_snr_and_original_untouched() {
        let w = unit_sine();
        let before = w.clone();
        let same = add_awgn(&w, f64::INFINITY, &mut seed::rng(1)).unwrap();
        assert_eq!(same.samples, w.samples);
        let noisy = add_awgn(&w, 30.0, &mut seed::rng(1)).unwrap();
        assert_eq!(w, before);
        assert_eq!(noisy.snr_db, Some(30.0));
        assert!(add_awgn(&noisy, 30.0, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn round_trip_at_40_db() {
        let w = unit_sine();
        let mean = (0..100)
            .map(|s| {
                let n = add_awgn(&w, 40.0, &mut seed::rng(s)).unwrap();
                measure_snr(&w.samples, &n.samples).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 40.0).abs() < 0.5, "{mean}");
    }
}
