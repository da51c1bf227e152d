//! Power-quality disturbance (PQD) classification pipeline.
//!
//! The crate covers every stage between a synthetic voltage record and a
//! class prediction:
//!
//! * [`signal`] synthesizes the 18 single and mixed disturbance classes and
//!   injects calibrated white Gaussian noise.
//! * [`stransform`] computes the discrete Stockwell transform.
//! * [`imaging`] turns amplitude matrices into jet-colormapped PNG spectrograms.
//! * [`tensor`] is a small dense-tensor engine with hand-written backward passes.
//! * [`model`] assembles the grouped-convolution / squeeze-excitation residual
//!   network (GSResNet).
//! * [`train`] holds Nadam, the cosine schedule, splitting, the training loop
//!   and evaluation metrics.
//! * [`pipeline`] wires the stages together for the `pqd` command-line tool.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod stransform;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use signal::{DisturbanceClass, TimeBase, Waveform};
