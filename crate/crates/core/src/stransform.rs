//! Discrete Stockwell transform.
//!
//! Row `n > 0` of the transform is the inverse DFT of the spectrum shifted by
//! `n` bins and multiplied by the frequency-domain Gaussian
//! `exp(-2 pi^2 m^2 / n^2)`, with `m` taken over the centered range
//! `[-N/2, N/2)`. Row 0 is the signal mean. Only rows `0..=N/2` are kept.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Forward DFT scaled by `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub coefficients: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Inverse of [`dft`].
    pub fn inverse(&self) -> Vec<Complex64> {
        let mut buf = self.coefficients.clone();
        FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
        buf
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n >= 2 && n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

/// `X[m] = (1/N) sum_k x[k] exp(-i 2 pi m k / N)`.
pub fn dft(x: &[f64]) -> Result<Spectrum> {
    check_pow2(x.len())?;
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
    Ok(Spectrum { coefficients: buf })
}

/// Complex S-Transform, rows = frequency bins `0..=N/2`, columns = time.
#[derive(Debug, Clone, PartialEq)]
pub struct StMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub entries: Vec<Complex64>,
    pub sample_rate: f64,
    /// Length of the signal before zero padding; columns past it are padding.
    pub original_len: usize,
}

impl StMatrix {
    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Physical frequency of a row in Hz.
    pub fn row_frequency(&self, row: usize) -> f64 {
        row as f64 * self.sample_rate / self.cols as f64
    }
}

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Keep the first `cols` columns.
    pub fn crop_cols(&self, cols: usize) -> RealMatrix {
        let cols = cols.min(self.cols);
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols..r * self.cols + cols]);
        }
        RealMatrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// Frequency-domain Gaussian for row `n` at (uncentered) offset index `m`.
fn gaussian(n: usize, m: usize, len: usize) -> f64 {
    let mc = if m < len / 2 { m as f64 } else { m as f64 - len as f64 };
    let nf = n as f64;
    (-2.0 * PI * PI * mc * mc / (nf * nf)).exp()
}

/// S-Transform of a power-of-two length signal.
pub fn stockwell(x: &[f64], sample_rate: f64) -> Result<StMatrix> {
    let spectrum = dft(x)?;
    let n = x.len();
    let rows = n / 2 + 1;
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut entries = vec![Complex64::new(0.0, 0.0); rows * n];
    entries[..n].fill(Complex64::new(mean, 0.0));

    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for row in 1..rows {
        for (m, b) in buf.iter_mut().enumerate() {
            *b = spectrum.coefficients[(m + row) % n] * gaussian(row, m, n);
        }
        // Unnormalized inverse: sum_m A[m] exp(+i 2 pi m j / N).
        ifft.process(&mut buf);
        entries[row * n..(row + 1) * n].copy_from_slice(&buf);
    }
    Ok(StMatrix {
        rows,
        cols: n,
        entries,
        sample_rate,
        original_len: n,
    })
}

/// S-Transform of an arbitrary-length record, zero-padded to the next power
/// of two. `original_len` remembers the unpadded length.
pub fn padded_st(samples: &[f64], sample_rate: f64) -> Result<StMatrix> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut x = samples.to_vec();
    x.resize(n.next_power_of_two(), 0.0);
    let mut st = stockwell(&x, sample_rate)?;
    st.original_len = n;
    Ok(st)
}

/// S-Transform of a waveform, zero-padded to the next power of two.
pub fn forward_st(w: &Waveform) -> Result<StMatrix> {
    padded_st(&w.samples, w.timebase.sample_rate)
}

/// Amplitude of [`padded_st`] with the padding columns dropped: shape
/// `(padded / 2 + 1, samples.len())`.
pub fn record_amplitude(samples: &[f64], sample_rate: f64) -> Result<RealMatrix> {
    let st = padded_st(samples, sample_rate)?;
    Ok(amplitude(&st).crop_cols(st.original_len))
}

/// Entrywise modulus.
pub fn amplitude(s: &StMatrix) -> RealMatrix {
    RealMatrix {
        rows: s.rows,
        cols: s.cols,
        data: s.entries.iter().map(|c| c.norm()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeHeader {
    pub rows: usize,
    pub cols: usize,
    pub fs: f64,
}

/// Write `path` (row-major little-endian f64) and `path.json` with the header.
pub fn write_amplitude(path: &Path, a: &RealMatrix, fs_hz: f64) -> Result<()> {
    let mut bytes = Vec::with_capacity(a.data.len() * 8);
    for v in &a.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header = AmplitudeHeader {
        rows: a.rows,
        cols: a.cols,
        fs: fs_hz,
    };
    let hpath = header_path(path);
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(&hpath, e))?;
    fs::write(&hpath, json).map_err(|e| Error::io(&hpath, e))
}

pub fn read_amplitude(path: &Path) -> Result<(RealMatrix, f64)> {
    let hpath = header_path(path);
    let hbytes = fs::read(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: AmplitudeHeader = serde_json::from_slice(&hbytes).map_err(|e| Error::json(&hpath, e))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((RealMatrix::new(header.rows, header.cols, data)?, header.fs))
}

fn header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn dft_small_cases() {
        let s = dft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(close(s.coefficients[0], 1.0, 0.0));
        assert!(s.coefficients[1..].iter().all(|c| c.norm() < 1e-15));

        let s = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(s.coefficients.iter().all(|&c| close(c, 0.25, 0.0)));

        let n = 32;
        let k0 = 5;
        let x: Vec<f64> = (0..n).map(|k| (2.0 * PI * (k0 * k) as f64 / n as f64).cos()).collect();
        let s = dft(&x).unwrap();
        for (m, c) in s.coefficients.iter().enumerate() {
            let want = if m == k0 || m == n - k0 { 0.5 } else { 0.0 };
            assert!(close(*c, want, 0.0), "bin {m}: {c}");
        }
    }

    #[test]
    fn dft_rejects_non_power_of_two() {
        assert!(matches!(dft(&[1.0; 6]), Err(Error::NotPowerOfTwo(6))));
        assert!(matches!(dft(&[1.0]), Err(Error::NotPowerOfTwo(1))));
    }

    #[test]
    fn inverse_recovers_signal() {
        let x: Vec<f64> = (0..256).map(|k| ((k * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let back = dft(&x).unwrap().inverse();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b.re).abs() <= 1e-12 * a.abs().max(1.0));
            assert!(b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_lives_in_row_zero() {
        let st = stockwell(&[3.0; 64], 64.0).unwrap();
        assert!(st.row(0).iter().all(|&c| close(c, 3.0, 0.0)));
        for r in 1..st.rows {
            let avg: Complex64 = st.row(r).iter().sum::<Complex64>() / st.cols as f64;
            assert!(avg.norm() < 1e-12);
        }
    }

    #[test]
    fn amplitude_is_modulus() {
        let st = StMatrix {
            rows: 1,
            cols: 2,
            entries: vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
            sample_rate: 1.0,
            original_len: 2,
        };
        assert_eq!(amplitude(&st).data, vec![5.0, 0.0]);
    }

    #[test]
    fn waveform_is_padded_and_rows_map_to_hz() {
        use crate::signal::{sample_params, synthesize, DisturbanceClass, TimeBase};
        let tb = TimeBase::default();
        let p = sample_params(DisturbanceClass::V2, &tb, &mut crate::seed::rng(0));
        let w = synthesize(DisturbanceClass::V2, &p, &tb).unwrap();
        let st = forward_st(&w).unwrap();
        assert_eq!(st.cols, 1024);
        assert_eq!(st.rows, 513);
        assert_eq!(st.original_len, 640);
        assert_eq!(st.row_frequency(16), 50.0);
    }

    #[test]
    fn amplitude_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("amp.bin");
        let m = RealMatrix::new(2, 3, vec![0.0, 1.5, -2.0, 3.25, 4.0, 1e-300]).unwrap();
        write_amplitude(&p, &m, 3200.0).unwrap();
        let (back, fs_hz) = read_amplitude(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(fs_hz, 3200.0);
    }
}
