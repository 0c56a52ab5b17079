//! Framing, windowing, one-sided spectra and the PHAT cross-spectrum.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Magnitude products below this are treated as silence in the PHAT weighting.
pub const PHAT_GUARD: f64 = 1e-20;

/// Analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rect",
        })
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(Window::Hann),
            "rect" | "rectangular" => Ok(Window::Rectangular),
            other => Err(Error::Config(format!("unknown window `{other}`"))),
        }
    }
}

/// One-sided spectrum of one frame of one channel (`N/2 + 1` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpectrum {
    pub bins: Vec<Complex64>,
}

/// PHAT-weighted cross-spectrum: unit-modulus bins, or exactly zero where a
/// channel carries no energy.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    pub bins: Vec<Complex64>,
}

impl CrossSpectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Reusable short-time analyzer. Holds the window and the forward plan.
pub struct Stft {
    n: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("n", &self.n)
            .field("hop", &self.hop)
            .finish_non_exhaustive()
    }
}

impl Stft {
    pub fn new(n: usize, hop: usize, window: Window) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!("frame size must be even, got {n}")));
        }
        if hop == 0 {
            return Err(Error::Config("hop size must be positive".into()));
        }
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
        Ok(Self {
            n,
            hop,
            window: window.coefficients(n),
            fft,
        })
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n {
            0
        } else {
            (len - self.n) / self.hop + 1
        }
    }

    pub fn frames(&self, signal: &[f64]) -> Result<Vec<FrameSpectrum>> {
        if signal.len() < self.n {
            return Err(Error::Signal(format!(
                "signal has {} samples, fewer than one {}-sample frame",
                signal.len(),
                self.n
            )));
        }
        let mut input = self.fft.make_input_vec();
        let mut scratch = self.fft.make_scratch_vec();
        let count = self.frame_count(signal.len());
        let mut out = Vec::with_capacity(count);
        for l in 0..count {
            let start = l * self.hop;
            for ((dst, &x), &w) in input
                .iter_mut()
                .zip(&signal[start..start + self.n])
                .zip(&self.window)
            {
                *dst = x * w;
            }
            let mut bins = self.fft.make_output_vec();
            self.fft
                .process_with_scratch(&mut input, &mut bins, &mut scratch)
                .expect("buffer sizes come from the plan");
            bins[0].im = 0.0;
            bins[self.n / 2].im = 0.0;
            out.push(FrameSpectrum { bins });
        }
        Ok(out)
    }
}

/// Frames `signal` into `⌊(len−N)/hop⌋+1` windowed spectra.
pub fn stft_frames(
    signal: &[f64],
    n: usize,
    hop: usize,
    window: Window,
) -> Result<Vec<FrameSpectrum>> {
    Stft::new(n, hop, window)?.frames(signal)
}

/// `X1·conj(X2) / (|X1|·|X2|)` per bin, zero where the magnitude product is
/// below [`PHAT_GUARD`].
pub fn cross_spectrum(x1: &FrameSpectrum, x2: &FrameSpectrum) -> Result<CrossSpectrum> {
    if x1.bins.len() != x2.bins.len() {
        return Err(Error::dim("cross_spectrum", x1.bins.len(), x2.bins.len()));
    }
    let bins = x1
        .bins
        .iter()
        .zip(&x2.bins)
        .map(|(a, b)| {
            let mag = a.norm() * b.norm();
            if mag < PHAT_GUARD || !mag.is_finite() {
                Complex64::new(0.0, 0.0)
            } else {
                a * b.conj() / mag
            }
        })
        .collect();
    Ok(CrossSpectrum { bins })
}

/// Cross-spectra of every frame pair of a stereo signal.
pub fn stereo_cross_spectra(stft: &Stft, ch1: &[f64], ch2: &[f64]) -> Result<Vec<CrossSpectrum>> {
    if ch1.len() != ch2.len() {
        return Err(Error::dim("stereo channel length", ch1.len(), ch2.len()));
    }
    let f1 = stft.frames(ch1)?;
    let f2 = stft.frames(ch2)?;
    f1.iter()
        .zip(&f2)
        .map(|(a, b)| cross_spectrum(a, b))
        .collect()
}
