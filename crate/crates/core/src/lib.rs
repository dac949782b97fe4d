//! Frequency-domain analysis of diffusion processes on motion-like sequences.
//!
//! The crate is organized around the time-by-dims [`MotionSequence`] and its
//! orthonormal DCT-II image. On top of the transform sit: variance-preserving
//! noise schedules and a zero-drift noise-energy profile ([`schedule`]),
//! spectral diffusion dynamics with Monte Carlo verification ([`spectral`]),
//! forward/reverse diffusion and two band-resolved experiments ([`diffusion`]),
//! a timestep-adaptive attention block with a hand-derived backward pass
//! ([`fta`]), masked time/frequency-domain losses ([`objective`]), and
//! Fréchet-distance / diversity metrics over feature sets ([`metrics`]).
//!
//! All stochastic operations take an explicit [`RngSeed`] and are pure
//! functions of their arguments; sub-streams are derived per trial or per
//! chunk so that parallel execution cannot change results.

pub mod diffusion;
pub mod error;
pub mod fta;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod schedule;
pub mod signal;
pub mod spectral;
pub mod transform;

pub use error::{Error, Result};
pub use rng::RngSeed;
pub use signal::{FrameMask, MotionSequence};
pub use transform::{Spectrum, SpectrumBatch};
