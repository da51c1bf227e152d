mod common;

use common::{naive_dft, naive_st, random_signal};
use num_complex::Complex64;
use pqd_core::stransform::{amplitude, dft, stockwell, StMatrix};
use proptest::prelude::*;

fn max_dev_time_average(st: &StMatrix, spectrum: &[Complex64]) -> f64 {
    (0..st.rows)
        .map(|r| {
            let avg = st.row(r).iter().sum::<Complex64>() / st.cols as f64;
            (avg - spectrum[r]).norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn dft_closed_forms() {
    let c = |re: f64| Complex64::new(re, 0.0);
    let x = dft(&[1.0, 1.0, 1.0, 1.0]).unwrap().coefficients;
    assert_eq!(x, vec![c(1.0), c(0.0), c(0.0), c(0.0)]);
    let x = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap().coefficients;
    assert_eq!(x, vec![c(0.25); 4]);
    let n = 16;
    let k0 = 3;
    let sig: Vec<f64> = (0..n).map(|k| (2.0 * std::f64::consts::PI * (k0 * k) as f64 / n as f64).cos()).collect();
    let x = dft(&sig).unwrap().coefficients;
    for (m, v) in x.iter().enumerate() {
        let want = if m == k0 || m == n - k0 { 0.5 } else { 0.0 };
        assert!((v - c(want)).norm() < 1e-12, "bin {m}: {v}");
    }
}

#[test]
fn fft_spectrum_matches_direct_sum() {
    for n in [2, 8, 64, 256] {
        let x = random_signal(n, n as u64);
        let fast = dft(&x).unwrap().coefficients;
        let slow = naive_dft(&x);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "N={n}: {err}");
    }
}

#[test]
fn matches_direct_sum_oracle_up_to_64() {
    for (i, n) in [2usize, 4, 8, 16, 32, 64].into_iter().enumerate() {
        for seed in 0..3 {
            let x = random_signal(n, 100 * i as u64 + seed);
            let st = stockwell(&x, 1.0).unwrap();
            let oracle = naive_st(&x);
            assert_eq!(st.rows, oracle.len());
            let mut worst = 0.0f64;
            for (r, row) in oracle.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    worst = worst.max((st.at(r, j) - v).norm());
                }
            }
            assert!(worst < 1e-9, "N={n} seed {seed}: {worst:e}");
        }
    }
}

#[test]
fn time_average_recovers_spectrum_at_128() {
    for seed in 0..20 {
        let x = random_signal(128, seed);
        let st = stockwell(&x, 3200.0).unwrap();
        let spec = dft(&x).unwrap().coefficients;
        let dev = max_dev_time_average(&st, &spec);
        assert!(dev < 1e-9, "seed {seed}: {dev:e}");
    }
}

#[test]
fn constant_signal_has_flat_dc_row_and_zero_mean_elsewhere() {
    let x = vec![0.75; 64];
    let st = stockwell(&x, 1.0).unwrap();
    assert!(st.row(0).iter().all(|v| (v - Complex64::new(0.75, 0.0)).norm() < 1e-15));
    for r in 1..st.rows {
        let avg = st.row(r).iter().sum::<Complex64>() / 64.0;
        assert!(avg.norm() < 1e-12, "row {r}: {avg}");
    }
}

#[test]
fn amplitude_closed_forms() {
    let m = StMatrix {
        rows: 1,
        cols: 2,
        entries: vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
        sample_rate: 1.0,
        original_len: 2,
    };
    assert_eq!(amplitude(&m).data, vec![5.0, 0.0]);
}

#[test]
fn rejects_lengths_that_are_not_powers_of_two() {
    assert!(stockwell(&[1.0; 6], 1.0).is_err());
    assert!(stockwell(&[1.0], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_in_the_signal(
        log_n in 1u32..8,
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let n = 1usize << log_n;
        let x = random_signal(n, seed);
        let y = random_signal(n, seed ^ 0x9e37);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (sx, sy, sm) = (stockwell(&x, 1.0).unwrap(), stockwell(&y, 1.0).unwrap(), stockwell(&mix, 1.0).unwrap());
        for i in 0..sm.entries.len() {
            let want = a * sx.entries[i] + b * sy.entries[i];
            prop_assert!((sm.entries[i] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn time_average_identity_for_any_signal(log_n in 1u32..10, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let x = random_signal(n, seed);
        let st = stockwell(&x, 1.0).unwrap();
        let spec = dft(&x).unwrap().coefficients;
        prop_assert!(max_dev_time_average(&st, &spec) < 1e-9);
    }
}
