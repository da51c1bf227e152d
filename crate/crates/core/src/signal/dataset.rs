use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_awgn, sample_params, synthesize, DisturbanceClass, DisturbanceParams, TimeBase, Waveform};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Manifest file name inside a waveform directory.
pub const WAVEFORM_MANIFEST: &str = "waveforms.jsonl";

/// One manifest line. `file` is relative to the manifest's directory and
/// holds `n_samples` little-endian f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformRecord {
    pub id: String,
    pub class_label: DisturbanceClass,
    pub snr_db: Option<f64>,
    pub sample_rate: f64,
    pub n_samples: usize,
    pub params: DisturbanceParams,
    pub file: String,
}

fn snr_tag(snr_db: Option<f64>) -> u64 {
    snr_db.map_or(0, f64::to_bits)
}

/// `per_class` waveforms for each class, class-major. Parameters depend only
/// on `(seed, class, index)`, so the clean and noisy sets generated with the
/// same seed share them; the noise stream also mixes in the SNR.
pub fn generate_dataset(
    classes: &[DisturbanceClass],
    per_class: usize,
    snr_db: Option<f64>,
    tb: &TimeBase,
    master_seed: u64,
) -> Result<Vec<Waveform>> {
    if per_class == 0 {
        return Err(Error::Precondition("per_class must be at least 1".into()));
    }
    tb.validate()?;
    let jobs: Vec<(DisturbanceClass, usize)> = classes
        .iter()
        .flat_map(|&c| (0..per_class).map(move |i| (c, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(class, i)| generate_record(class, i, snr_db, tb, master_seed))
        .collect()
}

/// Record `index` of `class` exactly as [`generate_dataset`] produces it.
pub fn generate_record(
    class: DisturbanceClass,
    index: usize,
    snr_db: Option<f64>,
    tb: &TimeBase,
    master_seed: u64,
) -> Result<Waveform> {
    let mut rng = seed::derived_rng(master_seed, Stream::Params, class.index() as u64, index as u64);
    let params = sample_params(class, tb, &mut rng);
    let clean = synthesize(class, &params, tb)?;
    match snr_db {
        None => Ok(clean),
        Some(snr) => {
            let noise_seed = seed::derive(
                master_seed,
                Stream::Noise,
                ((class.index() as u64) << 32) | index as u64,
                snr_tag(Some(snr)),
            );
            add_awgn(&clean, snr, &mut seed::rng(noise_seed))
        }
    }
}

/// Identifier `<label>_<index>` where the index counts within the class.
fn assign_ids(waveforms: &[Waveform]) -> Vec<String> {
    let mut counters: HashMap<DisturbanceClass, usize> = HashMap::new();
    waveforms
        .iter()
        .map(|w| {
            let c = counters.entry(w.label).or_insert(0);
            let id = format!("{}_{}", w.label, *c);
            *c += 1;
            id
        })
        .collect()
}

/// Write one `.f64` file per waveform plus the JSON-lines manifest.
pub fn write_waveform_set(dir: &Path, waveforms: &[Waveform]) -> Result<Vec<WaveformRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ids = assign_ids(waveforms);
    let mut records = Vec::with_capacity(waveforms.len());
    for (w, id) in waveforms.iter().zip(ids) {
        let file = format!("{id}.f64");
        let path = dir.join(&file);
        let mut bytes = Vec::with_capacity(w.samples.len() * 8);
        for v in &w.samples {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        records.push(WaveformRecord {
            id,
            class_label: w.label,
            snr_db: w.snr_db,
            sample_rate: w.timebase.sample_rate,
            n_samples: w.samples.len(),
            params: w.params.clone(),
            file,
        });
    }
    let manifest = dir.join(WAVEFORM_MANIFEST);
    let f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut out = BufWriter::new(f);
    for r in &records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::json(&manifest, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(&manifest, e))?;
    }
    out.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(records)
}

/// Read a directory written by [`write_waveform_set`].
pub fn read_waveform_set(dir: &Path) -> Result<Vec<(WaveformRecord, Waveform)>> {
    let manifest = dir.join(WAVEFORM_MANIFEST);
    let f = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WaveformRecord = serde_json::from_str(&line).map_err(|e| Error::json(&manifest, e))?;
        let path = dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != rec.n_samples * 8 {
            return Err(Error::Precondition(format!(
                "{}: expected {} samples, found {} bytes",
                path.display(),
                rec.n_samples,
                bytes.len()
            )));
        }
        let samples: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let timebase = TimeBase {
            sample_rate: rec.sample_rate,
            duration: rec.n_samples as f64 / rec.sample_rate,
        };
        let w = Waveform {
            samples,
            timebase,
            label: rec.class_label,
            params: rec.params.clone(),
            snr_db: rec.snr_db,
        };
        out.push((rec, w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let tb = TimeBase::default();
        let a = generate_dataset(&DisturbanceClass::ALL, 3, None, &tb, 11).unwrap();
        assert_eq!(a.len(), 54);
        let b = generate_dataset(&DisturbanceClass::ALL, 3, None, &tb, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&DisturbanceClass::ALL, 3, None, &tb, 12).unwrap();
        assert_ne!(a, c);
        let one = generate_dataset(&[DisturbanceClass::V1], 1, None, &tb, 11).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].label, DisturbanceClass::V1);
        assert!(generate_dataset(&[DisturbanceClass::V1], 0, None, &tb, 11).is_err());
    }

    #[test]
    fn noisy_set_shares_parameters_with_clean_set() {
        let tb = TimeBase::default();
        let clean = generate_dataset(&[DisturbanceClass::V5], 4, None, &tb, 2).unwrap();
        let noisy = generate_dataset(&[DisturbanceClass::V5], 4, Some(30.0), &tb, 2).unwrap();
        for (c, n) in clean.iter().zip(&noisy) {
            assert_eq!(c.params, n.params);
            assert_ne!(c.samples, n.samples);
            assert_eq!(n.snr_db, Some(30.0));
        }
    }

    #[test]
    fn write_then_read_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let tb = TimeBase::default();
        let ws = generate_dataset(&[DisturbanceClass::V6, DisturbanceClass::V17], 2, Some(20.0), &tb, 5).unwrap();
        let recs = write_waveform_set(dir.path(), &ws).unwrap();
        assert_eq!(recs[0].id, "V6_0");
        assert_eq!(recs[3].id, "V17_1");
        let back = read_waveform_set(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        for ((rec, w), orig) in back.iter().zip(&ws) {
            assert_eq!(&w.samples, &orig.samples);
            assert_eq!(&w.params, &orig.params);
            assert_eq!(rec.n_samples, 640);
            assert_eq!(w.timebase.n_samples(), 640);
        }
    }
}
