//! Time-domain audio-visual target speaker extraction.
//!
//! The crate covers the whole desk-scale pipeline: mixture simulation
//! ([`mixsim`]), signal primitives and Si-SNR ([`signal`]), oracle masks
//! ([`masks`]), a small reverse-mode tensor engine ([`nn`]), the lip
//! embedding extractor ([`lipnet`]), the time-domain separator
//! ([`avtasnet`]), the frequency-domain baseline ([`favsnet`]) and the
//! training/evaluation harness ([`train`]).

pub mod avtasnet;
pub mod error;
pub mod favsnet;
pub mod lipnet;
pub mod masks;
pub mod mixsim;
pub mod nn;
pub mod real;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
