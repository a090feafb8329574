//! Adversarial attacks on differentiable audio source-separation models.
//!
//! The crate provides:
//!
//! - [`audio`] — clips, WAV I/O, and deterministic multi-source synthesis;
//! - [`dsp`] — STFT/ISTFT with exact real-linear adjoints, Griffin-Lim
//!   inversion, and patch-wise l2 norms;
//! - [`models`] — a differentiable separation-model abstraction with two toy
//!   architectures (frequency-domain mask net, time-domain conv net),
//!   hand-derived backward passes, weight serialization, and a training loop;
//! - [`attacks`] — GD / FGSM / PGD perturbation crafting under l2, sup, and
//!   short-term-power-ratio constraints, in the time or frequency domain;
//! - [`metrics`] — SDR and a scalar-projection SIR, the DS/DI/DSA degradation
//!   metrics, and median-of-medians aggregation;
//! - [`harness`] — experiment orchestration: white-box sweeps, white/gray/
//!   black-box transfer studies, and untargeted-source effect tables.
//!
//! All reference-mode arithmetic is `f64` and every random choice flows from a
//! named, seeded stream ([`rng::StreamSeed`]), so runs reproduce bit-exactly.

pub mod attacks;
pub mod audio;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
