//! Analysis chain for resonator-based electron spin resonance.
//!
//! Complex transmission traces are fitted to a notch resonator model to get
//! the internal quality factor at each magnetic field; the field-dependent
//! part of the internal loss forms the ESR spectrum, which is decomposed into
//! Lorentzian/Gaussian components on a pedestal background. Linewidths are
//! converted to spin coherence times, and power sweeps are fitted to the
//! interacting-TLS and spin-saturation laws. [`synth`] generates seeded
//! synthetic data for every stage.

pub mod decompose;
pub mod error;
pub mod fit;
pub mod io;
pub mod lineshape;
pub mod parallel;
pub mod physics;
pub mod power;
pub mod resonator;
pub mod rng;
pub mod synth;

pub use error::{EsrError, Result};
