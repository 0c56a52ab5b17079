//! Two-microphone GCC-PHAT direction-of-arrival estimation.
//!
//! The crate provides four correlation back-ends over a fixed angle grid
//! (exact matrix product, zero-padded IFFT, IFFT with quadratic
//! interpolation, low-rank SVD), the STFT front-end feeding them, an
//! image-method room simulator and the accuracy/timing evaluation harness.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod factorization;
pub mod params;
pub mod simulator;
pub mod steering;
pub mod stft;

pub use error::{Error, Result};
pub use estimators::{prepare, Backend, CorrelationCurve, DoaEstimate, Method, Prepared, Scratch};
pub use factorization::{factorize, load_factors, save_factors, LowRankFactors};
pub use params::GccParams;
pub use steering::{AngularGrid, SteeringMatrix};
pub use stft::{CrossSpectrum, Stft, Window};
