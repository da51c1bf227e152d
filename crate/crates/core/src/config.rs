//! Declarative run configuration: one JSON document covering every stage.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::signal::{DisturbanceClass, TimeBase};
use crate::train::TrainConfig;

/// A noise condition: `None` is the noiseless set, `Some(db)` adds white
/// Gaussian noise at that SNR. Written in JSON as `"clean"` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub Option<f64>);

impl Snr {
    pub const CLEAN: Snr = Snr(None);

    /// Directory name for this condition: `clean`, `snr40`, `snr12.5`.
    pub fn condition_name(&self) -> String {
        match self.0 {
            None => "clean".to_string(),
            Some(db) => format!("snr{db}"),
        }
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("clean"),
            Some(db) => write!(f, "{db} dB"),
        }
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "+inf" | "infinity" | "none" | "clean") {
            return Ok(Snr::CLEAN);
        }
        let db = t
            .trim_end_matches("db")
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("cannot parse SNR {s:?}; use a number of dB or \"clean\"")))?;
        if db == f64::INFINITY {
            return Ok(Snr::CLEAN);
        }
        if !db.is_finite() {
            return Err(Error::Config(format!("SNR {s:?} must be finite or \"clean\"")));
        }
        Ok(Snr(Some(db)))
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            None => s.serialize_str("clean"),
            Some(db) => s.serialize_f64(db),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Snr;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an SNR in dB or \"clean\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Snr, E> {
                Snr::from_str(&v.to_string()).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Snr, E> {
                Ok(Snr(Some(v as f64)))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Snr, E> {
                Ok(Snr(Some(v as f64)))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Snr, E> {
                Snr::from_str(v).map_err(E::custom)
            }
            fn visit_unit<E: de::Error>(self) -> std::result::Result<Snr, E> {
                Ok(Snr::CLEAN)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    pub timebase: TimeBase,
    pub classes: Vec<DisturbanceClass>,
    pub per_class: usize,
    pub snr: Vec<Snr>,
    pub image_px: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    /// The desk-scale experiment: 18 classes x 100 records, 64 px images,
    /// four noise conditions. 40 epochs is too short to converge from a
    /// peak learning rate of 1e-4, so the cosine starts at 1e-3.
    fn default() -> Self {
        RunConfig {
            seed: 0,
            timebase: TimeBase::default(),
            classes: DisturbanceClass::ALL.to_vec(),
            per_class: 100,
            snr: vec![Snr::CLEAN, Snr(Some(40.0)), Snr(Some(30.0)), Snr(Some(20.0))],
            image_px: 64,
            model: ModelConfig::desk(),
            train: TrainConfig {
                epochs: 40,
                lr_max: 1e-3,
                ..TrainConfig::default()
            },
            out_dir: PathBuf::from("pqd-run"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Copy the master seed into the stages that consume it.
    pub fn sync_seed(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.timebase.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.classes.is_empty() {
            return Err(Error::Config("no classes selected".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort_by_key(|c| c.index());
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(Error::Config("class list contains duplicates".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        if self.snr.is_empty() {
            return Err(Error::Config("at least one SNR condition is required".into()));
        }
        let mut names: Vec<String> = self.snr.iter().map(Snr::condition_name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.snr.len() {
            return Err(Error::Config("SNR list contains duplicates".into()));
        }
        if self.image_px == 0 {
            return Err(Error::Config("image_px must be positive".into()));
        }
        if self.model.num_classes != DisturbanceClass::COUNT {
            return Err(Error::Config(format!(
                "model.num_classes must be {} for the disturbance dataset, got {}",
                DisturbanceClass::COUNT,
                self.model.num_classes
            )));
        }
        if self.model.in_channels != 3 {
            return Err(Error::Config("model.in_channels must be 3 for RGB spectrograms".into()));
        }
        Ok(())
    }
}
