//! Scalar configuration shared by every back-end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-padding factors accepted by the IFFT back-ends.
pub const INTERP_FACTORS: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// GCC-PHAT configuration. `Default` gives the reference operating point:
/// 181 angles, 512-sample frames, 160-sample hop, 5 cm spacing, 343 m/s,
/// 16 kHz and an SVD tolerance of 1e-5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GccParams {
    /// Number of discrete angles.
    pub q: usize,
    /// Frame size in samples.
    pub n: usize,
    /// Hop size in samples.
    pub hop: usize,
    /// Microphone spacing in meters.
    pub dist: f64,
    /// Speed of sound in m/s.
    pub speed: f64,
    /// Sample rate in samples/s.
    pub rate: f64,
    /// Relative Frobenius reconstruction tolerance for the low-rank factors.
    pub delta: f64,
    /// Zero-padding factor of the IFFT back-ends.
    pub interp: usize,
}

impl Default for GccParams {
    fn default() -> Self {
        Self {
            q: 181,
            n: 512,
            hop: 160,
            dist: 0.05,
            speed: 343.0,
            rate: 16000.0,
            delta: 1e-5,
            interp: 1,
        }
    }
}

impl GccParams {
    /// Number of one-sided frequency bins, `N/2 + 1`.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Largest TDOA magnitude in samples, reached at ±90°.
    pub fn max_tdoa(&self) -> f64 {
        self.rate / self.speed * self.dist
    }

    pub fn with_interp(mut self, interp: usize) -> Self {
        self.interp = interp;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.q < 2 {
            return fail(format!("Q must be at least 2, got {}", self.q));
        }
        if self.n < 4 || !self.n.is_multiple_of(2) {
            return fail(format!("N must be even and at least 4, got {}", self.n));
        }
        if self.hop == 0 || self.hop > self.n {
            return fail(format!("hop must be in (0, N], got {}", self.hop));
        }
        for (name, v) in [
            ("distance", self.dist),
            ("speed of sound", self.speed),
            ("sample rate", self.rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if !INTERP_FACTORS.contains(&self.interp) {
            return fail(format!(
                "interpolation factor must be one of {INTERP_FACTORS:?}, got {}",
                self.interp
            ));
        }
        if self.max_tdoa() >= self.n as f64 / 2.0 {
            return fail(format!(
                "maximum TDOA {:.3} samples does not fit in half a frame ({})",
                self.max_tdoa(),
                self.n / 2
            ));
        }
        Ok(())
    }
}
