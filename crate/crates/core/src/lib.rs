//! Desk-scale adversarial robustness benchmark for a toy CTC speech
//! recognizer: synthetic corpus, hand-rolled autodiff and DSP, five attack
//! families, and a deterministic experiment harness.

pub mod attacks;
pub mod corpus;
pub mod dsp;
pub mod grad;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod signal;

pub use signal::{NormKind, Perturbation, Waveform};
