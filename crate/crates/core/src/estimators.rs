//! GCC-PHAT back-ends.
//!
//! Every back-end maps a PHAT cross-spectrum to a correlation score per grid
//! angle; [`pick_peak`] then selects the direction. Four families exist:
//!
//! * `MM` evaluates the steering matrix product exactly.
//! * `FFTi` zero-pads the spectrum by `i`, runs a real inverse FFT and reads
//!   the lag nearest to each candidate TDOA.
//! * `FFTi-QI` fits a parabola through the nearest lag and its neighbours and
//!   evaluates it at the fractional TDOA.
//! * `SVD` applies the low-rank factors of the real and imaginary parts of the
//!   steering matrix.
//!
//! The free functions are the reference form of each step. [`prepare`] builds
//! a [`Backend`] that hoists all plans, lookup tables and matrices out of the
//! per-frame path so that timing comparisons measure only the online work.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner};

use crate::error::{Error, Result};
use crate::factorization::LowRankFactors;
use crate::params::{GccParams, INTERP_FACTORS};
use crate::steering::{
    normalization_gains, steering_matrix, theta_grid, AngularGrid, SteeringMatrix,
};
use crate::stft::CrossSpectrum;

/// Correlation score per grid angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    pub values: Vec<f64>,
}

/// Winning grid index, its angle and its correlation value (`E_est`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaEstimate {
    pub q_max: usize,
    pub theta_est: f64,
    pub energy: f64,
}

/// Time-domain correlation on a lag grid `factor` times finer than the
/// sample grid, `factor · N` samples long.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedLags {
    pub samples: Vec<f64>,
    pub factor: usize,
}

/// Exact correlation `Re(W·X12)`.
pub fn mm_correlate(w: &SteeringMatrix, x12: &CrossSpectrum) -> Result<CorrelationCurve> {
    if x12.len() != w.cols() {
        return Err(Error::dim("mm_correlate spectrum", w.cols(), x12.len()));
    }
    let mut values = vec![0.0; w.rows()];
    matrix_product(w, &x12.bins, &mut values);
    Ok(CorrelationCurve { values })
}

fn matrix_product(w: &SteeringMatrix, x: &[Complex64], out: &mut [f64]) {
    for (q, v) in out.iter_mut().enumerate() {
        *v = w
            .row(q)
            .iter()
            .zip(x)
            .fold(0.0, |acc, (a, b)| acc + (a.re * b.re - a.im * b.im));
    }
}

/// Zero-padded inverse transform of the gain-weighted cross-spectrum.
///
/// `samples[t] = Re(Σ_{k=0}^{N/2} g[k]·X12[k]·exp(j2πkt/(iN)))`, so a sample
/// at lag `i·τ` is directly comparable to the exact correlation at `τ`.
pub fn fft_correlate(x12: &CrossSpectrum, params: &GccParams) -> Result<InterpolatedLags> {
    params.validate()?;
    let plan = LagTransform::new(params.n, params.interp)?;
    let mut spectrum = plan.fft.make_input_vec();
    let mut scratch = plan.fft.make_scratch_vec();
    let mut samples = plan.fft.make_output_vec();
    plan.run(&x12.bins, &mut spectrum, &mut scratch, &mut samples)?;
    Ok(InterpolatedLags {
        samples,
        factor: params.interp,
    })
}

struct LagTransform {
    n: usize,
    factor: usize,
    gains: Vec<f64>,
    fft: Arc<dyn ComplexToReal<f64>>,
}

impl LagTransform {
    fn new(n: usize, factor: usize) -> Result<Self> {
        if !INTERP_FACTORS.contains(&factor) {
            return Err(Error::Config(format!(
                "interpolation factor must be one of {INTERP_FACTORS:?}, got {factor}"
            )));
        }
        Ok(Self {
            n,
            factor,
            gains: normalization_gains(n)?,
            fft: RealFftPlanner::<f64>::new().plan_fft_inverse(n * factor),
        })
    }

    fn run(
        &self,
        x12: &[Complex64],
        spectrum: &mut [Complex64],
        scratch: &mut [Complex64],
        out: &mut [f64],
    ) -> Result<()> {
        let half = self.n / 2;
        if x12.len() != half + 1 {
            return Err(Error::dim("fft_correlate spectrum", half + 1, x12.len()));
        }
        spectrum.fill(Complex64::new(0.0, 0.0));
        // The real inverse transform doubles interior bins through the implied
        // conjugate half, so interior bins carry half weight and the edge bins
        // contribute only their real part.
        spectrum[0] = Complex64::new(self.gains[0] * x12[0].re, 0.0);
        for k in 1..half {
            spectrum[k] = x12[k] * (0.5 * self.gains[k]);
        }
        spectrum[half] = if self.factor == 1 {
            Complex64::new(self.gains[half] * x12[half].re, 0.0)
        } else {
            x12[half] * (0.5 * self.gains[half])
        };
        self.fft
            .process_with_scratch(spectrum, out, scratch)
            .map_err(|e| Error::Signal(format!("inverse transform failed: {e}")))
    }
}

/// Rounded lag (half away from zero) and the residual `i·τ − ⌊i·τ⌉`.
fn nearest_lag(tau: f64, factor: usize) -> (i64, f64) {
    let scaled = factor as f64 * tau;
    let rounded = scaled.round();
    (rounded as i64, scaled - rounded)
}

fn wrap(lag: i64, len: usize) -> usize {
    lag.rem_euclid(len as i64) as usize
}

fn check_lags(y: &InterpolatedLags, params: &GccParams) -> Result<()> {
    if y.factor != params.interp {
        return Err(Error::Config(format!(
            "lags were interpolated by {} but parameters say {}",
            y.factor, params.interp
        )));
    }
    if y.samples.len() != y.factor * params.n {
        return Err(Error::dim(
            "interpolated lags",
            y.factor * params.n,
            y.samples.len(),
        ));
    }
    Ok(())
}

/// Reads the lag nearest to each grid TDOA; negative lags wrap modulo `i·N`.
pub fn map_lags(
    y: &InterpolatedLags,
    grid: &AngularGrid,
    params: &GccParams,
) -> Result<CorrelationCurve> {
    check_lags(y, params)?;
    let values = grid
        .taus
        .iter()
        .map(|&tau| y.samples[wrap(nearest_lag(tau, y.factor).0, y.samples.len())])
        .collect();
    Ok(CorrelationCurve { values })
}

/// Parabola through three adjacent samples, evaluated at offset `delta` from
/// the middle one.
pub fn parabolic_value(minus: f64, center: f64, plus: f64, delta: f64) -> f64 {
    let a = (minus - 2.0 * center + plus) / 2.0;
    let b = (plus - minus) / 2.0;
    a * delta * delta + b * delta + center
}

/// Quadratic interpolation of the lags at each fractional grid TDOA.
pub fn qi_correlate(
    y: &InterpolatedLags,
    grid: &AngularGrid,
    params: &GccParams,
) -> Result<CorrelationCurve> {
    check_lags(y, params)?;
    let len = y.samples.len();
    let values = grid
        .taus
        .iter()
        .map(|&tau| {
            let (lag, delta) = nearest_lag(tau, y.factor);
            parabolic_value(
                y.samples[wrap(lag - 1, len)],
                y.samples[wrap(lag, len)],
                y.samples[wrap(lag + 1, len)],
                delta,
            )
        })
        .collect();
    Ok(CorrelationCurve { values })
}

/// Low-rank evaluation `U_R(T_R·Re X12) − U_I(T_I·Im X12)`.
pub fn svd_correlate(factors: &LowRankFactors, x12: &CrossSpectrum) -> Result<CorrelationCurve> {
    if x12.len() != factors.bins() {
        return Err(Error::dim(
            "svd_correlate spectrum",
            factors.bins(),
            x12.len(),
        ));
    }
    let mut values = vec![0.0; factors.q()];
    let mut latent = Vec::new();
    low_rank_product(factors, &x12.bins, &mut latent, &mut values);
    Ok(CorrelationCurve { values })
}

fn low_rank_product(f: &LowRankFactors, x: &[Complex64], latent: &mut Vec<f64>, out: &mut [f64]) {
    let bins = f.bins();
    latent.clear();
    latent.extend(
        f.t_r
            .chunks_exact(bins)
            .map(|row| row.iter().zip(x).fold(0.0, |acc, (t, z)| acc + t * z.re)),
    );
    latent.extend(
        f.t_i
            .chunks_exact(bins)
            .map(|row| row.iter().zip(x).fold(0.0, |acc, (t, z)| acc + t * z.im)),
    );
    let (lr, li) = latent.split_at(f.k_r);
    for ((v, ur), ui) in out
        .iter_mut()
        .zip(f.u_r.chunks_exact(f.k_r))
        .zip(f.u_i.chunks_exact(f.k_i))
    {
        let re = ur.iter().zip(lr).fold(0.0, |acc, (u, l)| acc + u * l);
        let im = ui.iter().zip(li).fold(0.0, |acc, (u, l)| acc + u * l);
        *v = re - im;
    }
}

/// Arg-max of the curve; ties go to the lowest index.
pub fn pick_peak(curve: &CorrelationCurve, grid: &AngularGrid) -> Result<DoaEstimate> {
    peak(&curve.values, grid)
}

fn peak(values: &[f64], grid: &AngularGrid) -> Result<DoaEstimate> {
    if values.is_empty() {
        return Err(Error::dim("pick_peak curve", grid.len().max(1), 0));
    }
    if values.len() != grid.len() {
        return Err(Error::dim("pick_peak curve", grid.len(), values.len()));
    }
    let mut q_max = 0;
    for (q, &v) in values.iter().enumerate().skip(1) {
        if v > values[q_max] {
            q_max = q;
        }
    }
    Ok(DoaEstimate {
        q_max,
        theta_est: grid.thetas[q_max],
        energy: values[q_max],
    })
}

/// Back-end identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mm,
    Fft(usize),
    FftQi(usize),
    Svd,
}

impl Method {
    /// All fourteen back-ends in report order.
    pub fn roster() -> Vec<Method> {
        let mut all = vec![Method::Mm];
        all.extend(INTERP_FACTORS.iter().map(|&i| Method::Fft(i)));
        all.extend(INTERP_FACTORS.iter().map(|&i| Method::FftQi(i)));
        all.push(Method::Svd);
        all
    }

    /// Lower-case command-line name, e.g. `fft02-qi`.
    pub fn id(&self) -> String {
        self.to_string().to_ascii_lowercase()
    }

    pub fn needs_factors(&self) -> bool {
        matches!(self, Method::Svd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Mm => f.write_str("MM"),
            Method::Fft(i) => write!(f, "FFT{i:02}"),
            Method::FftQi(i) => write!(f, "FFT{i:02}-QI"),
            Method::Svd => f.write_str("SVD"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Method::roster()
            .into_iter()
            .find(|m| m.id() == lower)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected mm, fft01..fft32, fft01-qi..fft32-qi or svd)"
                ))
            })
    }
}

/// Per-call buffers. Each back-end sizes the ones it uses on first call.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    spectrum: Vec<Complex64>,
    fft: Vec<Complex64>,
    lags: Vec<f64>,
    latent: Vec<f64>,
    curve: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }
}

/// A prepared back-end. Immutable and shareable; every call brings its own
/// [`Scratch`].
pub trait Backend: Send + Sync {
    fn method(&self) -> Method;

    fn grid(&self) -> &AngularGrid;

    /// Writes one score per grid angle into `out`.
    fn correlate_into(
        &self,
        x12: &CrossSpectrum,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) -> Result<()>;

    fn correlate(&self, x12: &CrossSpectrum) -> Result<CorrelationCurve> {
        let mut values = vec![0.0; self.grid().len()];
        self.correlate_into(x12, &mut Scratch::new(), &mut values)?;
        Ok(CorrelationCurve { values })
    }

    fn estimate(&self, x12: &CrossSpectrum, scratch: &mut Scratch) -> Result<DoaEstimate> {
        let mut curve = std::mem::take(&mut scratch.curve);
        curve.resize(self.grid().len(), 0.0);
        let result = self
            .correlate_into(x12, scratch, &mut curve)
            .and_then(|_| peak(&curve, self.grid()));
        scratch.curve = curve;
        result
    }
}

/// Grid and steering matrix shared by the back-ends of one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: GccParams,
    pub grid: AngularGrid,
    pub steering: SteeringMatrix,
}

impl Prepared {
    pub fn new(params: &GccParams) -> Result<Arc<Self>> {
        let grid = theta_grid(params)?;
        let steering = steering_matrix(params, &grid)?;
        Ok(Arc::new(Self {
            params: *params,
            grid,
            steering,
        }))
    }
}

fn check_out(out: &[f64], q: usize) -> Result<()> {
    if out.len() != q {
        return Err(Error::dim("correlation output", q, out.len()));
    }
    Ok(())
}

struct MatrixBackend {
    shared: Arc<Prepared>,
}

impl Backend for MatrixBackend {
    fn method(&self) -> Method {
        Method::Mm
    }

    fn grid(&self) -> &AngularGrid {
        &self.shared.grid
    }

    fn correlate_into(&self, x12: &CrossSpectrum, _: &mut Scratch, out: &mut [f64]) -> Result<()> {
        let w = &self.shared.steering;
        if x12.len() != w.cols() {
            return Err(Error::dim("mm_correlate spectrum", w.cols(), x12.len()));
        }
        check_out(out, w.rows())?;
        matrix_product(w, &x12.bins, out);
        Ok(())
    }
}

/// Lookup entry for one grid angle: wrapped indices of the lags at
/// `⌊iτ⌉ − 1`, `⌊iτ⌉`, `⌊iτ⌉ + 1` and the rounding residual.
#[derive(Debug, Clone, Copy)]
struct LagTap {
    minus: usize,
    center: usize,
    plus: usize,
    delta: f64,
}

struct LagBackend {
    shared: Arc<Prepared>,
    transform: LagTransform,
    taps: Vec<LagTap>,
    quadratic: bool,
}

impl LagBackend {
    fn new(shared: Arc<Prepared>, factor: usize, quadratic: bool) -> Result<Self> {
        let transform = LagTransform::new(shared.params.n, factor)?;
        let len = factor * shared.params.n;
        let taps = shared
            .grid
            .taus
            .iter()
            .map(|&tau| {
                let (lag, delta) = nearest_lag(tau, factor);
                LagTap {
                    minus: wrap(lag - 1, len),
                    center: wrap(lag, len),
                    plus: wrap(lag + 1, len),
                    delta,
                }
            })
            .collect();
        Ok(Self {
            shared,
            transform,
            taps,
            quadratic,
        })
    }
}

impl Backend for LagBackend {
    fn method(&self) -> Method {
        if self.quadratic {
            Method::FftQi(self.transform.factor)
        } else {
            Method::Fft(self.transform.factor)
        }
    }

    fn grid(&self) -> &AngularGrid {
        &self.shared.grid
    }

    fn correlate_into(
        &self,
        x12: &CrossSpectrum,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) -> Result<()> {
        check_out(out, self.taps.len())?;
        let fft = &self.transform.fft;
        scratch
            .spectrum
            .resize(fft.complex_len(), Complex64::new(0.0, 0.0));
        scratch
            .fft
            .resize(fft.get_scratch_len(), Complex64::new(0.0, 0.0));
        scratch.lags.resize(fft.len(), 0.0);
        self.transform.run(
            &x12.bins,
            &mut scratch.spectrum,
            &mut scratch.fft,
            &mut scratch.lags,
        )?;
        let y = &scratch.lags;
        if self.quadratic {
            for (v, t) in out.iter_mut().zip(&self.taps) {
                *v = parabolic_value(y[t.minus], y[t.center], y[t.plus], t.delta);
            }
        } else {
            for (v, t) in out.iter_mut().zip(&self.taps) {
                *v = y[t.center];
            }
        }
        Ok(())
    }
}

struct LowRankBackend {
    shared: Arc<Prepared>,
    factors: Arc<LowRankFactors>,
}

impl Backend for LowRankBackend {
    fn method(&self) -> Method {
        Method::Svd
    }

    fn grid(&self) -> &AngularGrid {
        &self.shared.grid
    }

    fn correlate_into(
        &self,
        x12: &CrossSpectrum,
        scratch: &mut Scratch,
        out: &mut [f64],
    ) -> Result<()> {
        if x12.len() != self.factors.bins() {
            return Err(Error::dim(
                "svd_correlate spectrum",
                self.factors.bins(),
                x12.len(),
            ));
        }
        check_out(out, self.factors.q())?;
        low_rank_product(&self.factors, &x12.bins, &mut scratch.latent, out);
        Ok(())
    }
}

/// Builds a back-end. `factors` is required for [`Method::Svd`] and must
/// match the configuration.
pub fn prepare(
    method: Method,
    shared: &Arc<Prepared>,
    factors: Option<&Arc<LowRankFactors>>,
) -> Result<Box<dyn Backend>> {
    let shared = Arc::clone(shared);
    Ok(match method {
        Method::Mm => Box::new(MatrixBackend { shared }),
        Method::Fft(i) => Box::new(LagBackend::new(shared, i, false)?),
        Method::FftQi(i) => Box::new(LagBackend::new(shared, i, true)?),
        Method::Svd => {
            let factors = factors
                .ok_or_else(|| Error::Config("the SVD back-end needs low-rank factors".into()))?;
            let p = &shared.params;
            if factors.q() != p.q || factors.n() != p.n {
                return Err(Error::Config(format!(
                    "factors were built for Q={}, N={} but the configuration has Q={}, N={}",
                    factors.q(),
                    factors.n(),
                    p.q,
                    p.n
                )));
            }
            Box::new(LowRankBackend {
                shared,
                factors: Arc::clone(factors),
            })
        }
    })
}
