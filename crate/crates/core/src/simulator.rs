//! Shoebox-room simulation: random rooms and poses, image-method impulse
//! responses, speech-shaped sources and SNR-controlled sensor noise.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::GccParams;

/// Minimum distance from any wall for microphones and sources, in meters.
pub const WALL_CLEARANCE: f64 = 0.5;
/// Length of the fractional-delay interpolation kernel.
pub const SINC_TAPS: usize = 81;
/// Default impulse response length in samples.
pub const DEFAULT_RIR_LEN: usize = 4096;

pub type Point = [f64; 3];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn distance(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

/// Room size class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoomCategory {
    Small,
    Medium,
    Large,
}

impl RoomCategory {
    pub const ALL: [RoomCategory; 3] = [
        RoomCategory::Small,
        RoomCategory::Medium,
        RoomCategory::Large,
    ];

    /// Lower and upper corner of the allowed dimensions, in meters.
    pub fn bounds(self) -> (Point, Point) {
        match self {
            RoomCategory::Small => ([5.0, 5.0, 3.0], [10.0, 10.0, 5.0]),
            RoomCategory::Medium => ([10.0, 10.0, 3.0], [20.0, 20.0, 5.0]),
            RoomCategory::Large => ([20.0, 20.0, 5.0], [20.0, 20.0, 10.0]),
        }
    }
}

impl fmt::Display for RoomCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoomCategory::Small => "small",
            RoomCategory::Medium => "medium",
            RoomCategory::Large => "large",
        })
    }
}

impl FromStr for RoomCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(RoomCategory::Small),
            "medium" => Ok(RoomCategory::Medium),
            "large" => Ok(RoomCategory::Large),
            other => Err(Error::Config(format!("unknown room category `{other}`"))),
        }
    }
}

/// Shoebox room with the same reflection coefficient on all six surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Point,
    pub beta: f64,
}

/// Uniform draw of room dimensions inside the category bounds.
pub fn sample_room(category: RoomCategory, rng: &mut impl Rng) -> Point {
    let (lo, hi) = category.bounds();
    let mut dims = [0.0; 3];
    for i in 0..3 {
        let u: f64 = rng.random();
        dims[i] = lo[i] + u * (hi[i] - lo[i]);
    }
    dims
}

/// Microphone pair, source and the true direction of arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub mic_a: Point,
    pub mic_b: Point,
    pub source: Point,
    pub theta0: f64,
}

/// Far-field DOA of `source` relative to the pair axis `mic_a → mic_b`:
/// `asin(û·v̂)`, zero on the perpendicular bisector plane.
pub fn doa_of(mic_a: Point, mic_b: Point, source: Point) -> f64 {
    let axis = sub(mic_b, mic_a);
    let center = [
        0.5 * (mic_a[0] + mic_b[0]),
        0.5 * (mic_a[1] + mic_b[1]),
        0.5 * (mic_a[2] + mic_b[2]),
    ];
    let view = sub(source, center);
    let c = dot(axis, view) / (dot(axis, axis).sqrt() * dot(view, view).sqrt());
    c.clamp(-1.0, 1.0).asin()
}

fn uniform_in(lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

/// Random pair pose and source position with no minimum source distance.
pub fn place_pair_and_source(room: &RoomSpec, d: f64, rng: &mut impl Rng) -> Result<Placement> {
    place_constrained(room, d, 0.0, rng)
}

/// As [`place_pair_and_source`], redrawing the source until it is at least
/// `min_distance` from the pair center.
pub fn place_constrained(
    room: &RoomSpec,
    d: f64,
    min_distance: f64,
    rng: &mut impl Rng,
) -> Result<Placement> {
    let margin = WALL_CLEARANCE + d / 2.0;
    if room.dims.iter().any(|&l| l <= 2.0 * margin) {
        return Err(Error::Config(format!(
            "room {:?} too small for {WALL_CLEARANCE} m wall clearance",
            room.dims
        )));
    }
    let mut center = [0.0; 3];
    for (c, dim) in center.iter_mut().zip(room.dims) {
        *c = uniform_in(margin, dim - margin, rng);
    }
    let axis = loop {
        let v: Point = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = dot(v, v).sqrt();
        if norm > 1e-9 {
            break [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    };
    let mic_a = [
        center[0] - 0.5 * d * axis[0],
        center[1] - 0.5 * d * axis[1],
        center[2] - 0.5 * d * axis[2],
    ];
    let mic_b = [
        center[0] + 0.5 * d * axis[0],
        center[1] + 0.5 * d * axis[1],
        center[2] + 0.5 * d * axis[2],
    ];
    for _ in 0..10_000 {
        let mut source = [0.0; 3];
        for (s, dim) in source.iter_mut().zip(room.dims) {
            *s = uniform_in(WALL_CLEARANCE, dim - WALL_CLEARANCE, rng);
        }
        if distance(source, center) >= min_distance.max(1e-6) {
            return Ok(Placement {
                mic_a,
                mic_b,
                source,
                theta0: doa_of(mic_a, mic_b, source),
            });
        }
    }
    Err(Error::Config(format!(
        "no source position at least {min_distance} m from the pair fits in room {:?}",
        room.dims
    )))
}

/// Image-method impulse response from `source` to `mic`.
///
/// Each image contributes `β^(reflections) / (4π·r)` at delay `r·fS/c`,
/// spread over an 81-tap Hann-windowed sinc centred on the exact
/// fractional delay.
pub fn image_rir(
    room: &RoomSpec,
    source: Point,
    mic: Point,
    rate: f64,
    speed: f64,
    length: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; length];
    let half = (SINC_TAPS / 2) as i64;
    // images whose kernel starts past the end contribute nothing
    let max_delay = (length as i64 + half) as f64;
    let max_dist = max_delay * speed / rate;
    let (step_c, step_s) = {
        let a = 2.0 * PI / SINC_TAPS as f64;
        (a.cos(), a.sin())
    };

    let axis_images = |axis: usize| -> Vec<(f64, i32)> {
        let l = room.dims[axis];
        let reach = (max_dist / (2.0 * l)).ceil() as i64 + 1;
        let mut out = Vec::new();
        for m in -reach..=reach {
            for parity in 0..2i64 {
                let pos = (1 - 2 * parity) as f64 * source[axis] + 2.0 * m as f64 * l - mic[axis];
                let refl = (m - parity).abs() + m.abs();
                if room.beta == 0.0 && refl > 0 {
                    continue;
                }
                out.push((pos, refl as i32));
            }
        }
        out
    };
    let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));

    for &(x, rx) in &xs {
        if x.abs() > max_dist {
            continue;
        }
        for &(y, ry) in &ys {
            let xy = x * x + y * y;
            if xy > max_dist * max_dist {
                continue;
            }
            for &(z, rz) in &zs {
                let r = (xy + z * z).sqrt();
                let delay = r * rate / speed;
                if delay >= max_delay {
                    continue;
                }
                let gain = room.beta.powi(rx + ry + rz) / (4.0 * PI * r);
                if gain == 0.0 {
                    continue;
                }
                add_fractional_impulse(&mut h, delay, gain, half, step_c, step_s);
            }
        }
    }
    h
}

fn add_fractional_impulse(
    h: &mut [f64],
    delay: f64,
    gain: f64,
    half: i64,
    step_c: f64,
    step_s: f64,
) {
    let center = delay.round() as i64;
    let first = center - half;
    let t0 = first as f64 - delay;
    // sin(π(t0 + j)) = (−1)^j sin(π t0)
    let s0 = (PI * t0).sin();
    let arg = 2.0 * PI * t0 / SINC_TAPS as f64;
    let (mut wc, mut ws) = (arg.cos(), arg.sin());
    for j in 0..SINC_TAPS as i64 {
        let idx = first + j;
        let t = t0 + j as f64;
        if idx >= 0 && (idx as usize) < h.len() {
            let sinc = if t.abs() < 1e-12 {
                1.0
            } else {
                let s = if j % 2 == 0 { s0 } else { -s0 };
                s / (PI * t)
            };
            h[idx as usize] += gain * 0.5 * (1.0 + wc) * sinc;
        }
        let nc = wc * step_c - ws * step_s;
        ws = ws * step_c + wc * step_s;
        wc = nc;
    }
}

/// Linear convolution truncated to `out_len` samples.
pub fn convolve(signal: &[f64], kernel: &[f64], out_len: usize) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return vec![0.0; out_len];
    }
    let full = signal.len() + kernel.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectrum = |x: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("planned sizes");
        out
    };
    let a = spectrum(signal);
    let b = spectrum(kernel);
    let mut prod: Vec<_> = a.iter().zip(&b).map(|(x, y)| x * y / size as f64).collect();
    prod[0].im = 0.0;
    prod[size / 2].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut prod, &mut out).expect("planned sizes");
    out.truncate(out_len.min(full));
    out.resize(out_len, 0.0);
    out
}

/// Speech-shaped noise: white noise through a one-pole low-pass at 500 Hz
/// (−6 dB/octave above it) with a 4 Hz syllabic envelope, unit RMS.
pub fn speech_like_source(duration_s: f64, rate: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let len = (duration_s * rate).round() as usize;
    if len == 0 {
        return Err(Error::Config("duration shorter than one sample".into()));
    }
    let pole = (-2.0 * PI * 500.0 / rate).exp();
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            state = (1.0 - pole) * e + pole * state;
            let s = 0.5 * (1.0 + (2.0 * PI * 4.0 * t as f64 / rate + phase).sin());
            state * (0.1 + 0.9 * s * s)
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(out)
}

/// One simulated configuration. `snr_db = None` disables noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub category: RoomCategory,
    pub room: RoomSpec,
    pub mic_a: Point,
    pub mic_b: Point,
    pub source: Point,
    pub theta0: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Two rendered channels; `ch1` is `mic_a`, `ch2` is `mic_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub ch1: Vec<f64>,
    pub ch2: Vec<f64>,
    pub scenario: Scenario,
}

/// Generation knobs shared by all scenarios of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub beta: f64,
    pub snr_db: Option<f64>,
    pub dist: f64,
    pub rate: f64,
    pub speed: f64,
    pub duration_s: f64,
    pub rir_len: usize,
    pub min_source_distance: f64,
    /// Fixed room class; `None` picks one uniformly per scenario.
    pub category: Option<RoomCategory>,
}

impl SimConfig {
    pub fn new(params: &GccParams, beta: f64, snr_db: Option<f64>) -> Self {
        Self {
            beta,
            snr_db,
            dist: params.dist,
            rate: params.rate,
            speed: params.speed,
            duration_s: 1.0,
            rir_len: DEFAULT_RIR_LEN,
            min_source_distance: 0.0,
            category: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must be in [0, 1), got {}",
                self.beta
            )));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config(format!("SNR must be finite, got {snr}")));
            }
        }
        if self.rir_len == 0 {
            return Err(Error::Config("RIR length must be positive".into()));
        }
        Ok(())
    }
}

/// Independent 64-bit seed for item `index` of stream `stream`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const GEOMETRY_STREAM: u64 = 1;
const SOURCE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Draws room class, dimensions and pose from `seed`.
pub fn generate_scenario(config: &SimConfig, id: u64, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = stream_rng(seed, GEOMETRY_STREAM);
    let category = match config.category {
        Some(c) => c,
        None => RoomCategory::ALL[rng.random_range(0..3)],
    };
    let room = RoomSpec {
        dims: sample_room(category, &mut rng),
        beta: config.beta,
    };
    let pl = place_constrained(&room, config.dist, config.min_source_distance, &mut rng)?;
    Ok(Scenario {
        id,
        category,
        room,
        mic_a: pl.mic_a,
        mic_b: pl.mic_b,
        source: pl.source,
        theta0: pl.theta0,
        snr_db: config.snr_db,
        seed,
    })
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Convolves `source_signal` with both impulse responses and adds
/// independent white Gaussian noise at the scenario SNR, measured per
/// channel over the `length` rendered samples.
pub fn render(
    scenario: &Scenario,
    source_signal: &[f64],
    length: usize,
    config: &SimConfig,
) -> Result<RenderedPair> {
    if source_signal.is_empty() || power(source_signal) == 0.0 {
        return Err(Error::Config("source signal is silent".into()));
    }
    let mut channels = [scenario.mic_a, scenario.mic_b].map(|mic| {
        let h = image_rir(
            &scenario.room,
            scenario.source,
            mic,
            config.rate,
            config.speed,
            config.rir_len,
        );
        convolve(source_signal, &h, length)
    });
    if let Some(snr) = scenario.snr_db {
        let mut rng = stream_rng(scenario.seed, NOISE_STREAM);
        for ch in channels.iter_mut() {
            let ps = power(ch);
            if ps == 0.0 {
                return Err(Error::Config("rendered channel is silent".into()));
            }
            let noise: Vec<f64> = (0..ch.len()).map(|_| rng.sample(StandardNormal)).collect();
            let scale = (ps / (power(&noise) * 10f64.powf(snr / 10.0))).sqrt();
            for (x, n) in ch.iter_mut().zip(&noise) {
                *x += scale * n;
            }
        }
    }
    let [ch1, ch2] = channels;
    Ok(RenderedPair {
        ch1,
        ch2,
        scenario: scenario.clone(),
    })
}

/// Renders a scenario with its own seeded speech-like source.
pub fn render_scenario(scenario: &Scenario, config: &SimConfig) -> Result<RenderedPair> {
    let mut rng = stream_rng(scenario.seed, SOURCE_STREAM);
    let src = speech_like_source(config.duration_s, config.rate, &mut rng)?;
    let len = src.len();
    render(scenario, &src, len, config)
}

/// One JSON object per line, in input order.
pub fn manifest_jsonl(scenarios: &[Scenario]) -> String {
    let mut out = String::new();
    for s in scenarios {
        out.push_str(&serde_json::to_string(s).expect("scenario fields are plain numbers"));
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<Scenario>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Config(format!("manifest line {}: {e}", i + 1)))
        })
        .collect()
}
