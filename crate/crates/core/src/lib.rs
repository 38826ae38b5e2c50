//! Complexity-boosted adaptive (CBA) training for CTC sequence encoders.
//!
//! The crate is organised bottom-up:
//!
//! * [`policy`]: regularized incomplete beta function and the per-batch
//!   sample-complexity policies (min-max and rank normalisation).
//! * [`augment`]: SpecAugment-style time/frequency masking whose mask counts
//!   are scaled by the per-sample policy factor.
//! * [`ctc`]: log-space CTC loss with analytic gradients, a brute-force
//!   alignment oracle, greedy decoding and edit-distance metrics.
//! * [`model`]: a small residual temporal encoder with intermediate CTC taps,
//!   hand-written reverse-mode gradients and checkpoint I/O.
//! * [`data`]: synthetic spectrogram corpus generation and the `CBAD1` file
//!   format.
//! * [`trainer`]: the two-stage training procedure, evaluation and the
//!   ablation grid.

pub mod augment;
mod binio;
pub mod ctc;
pub mod data;
pub mod features;
pub mod model;
pub mod policy;
pub mod seed;
pub mod trainer;

pub use features::FeatureMatrix;
