//! Accuracy sweeps (energy-weighted DOA, RMSE per cell) and per-frame
//! timing of the back-ends.
//!
//! Per configuration the frame-wise estimates are averaged with their
//! correlation peak `E_est` as weight; the cell RMSE is then the root mean
//! square of those averaged errors across configurations, in degrees.
//! Frames whose peak is not positive carry no weight, and configurations
//! with no weight at all are excluded from the RMSE and counted.

use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{prepare, Backend, Method, Prepared, Scratch};
use crate::factorization::{factorize, LowRankFactors};
use crate::params::GccParams;
use crate::simulator::{
    derive_seed, generate_scenario, render_scenario, RenderedPair, RoomCategory, Scenario,
    SimConfig,
};
use crate::stft::{stereo_cross_spectra, CrossSpectrum, Stft, Window};

/// Frame-wise aggregate of one method on one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfigurationResult {
    pub theta0: f64,
    pub weighted_sum: f64,
    pub energy_sum: f64,
    pub frames: usize,
}

impl ConfigurationResult {
    pub fn new(theta0: f64) -> Self {
        Self {
            theta0,
            ..Self::default()
        }
    }

    /// Adds one frame; non-positive peaks get zero weight.
    pub fn push(&mut self, theta_est: f64, energy: f64) {
        let w = energy.max(0.0);
        self.weighted_sum += theta_est * w;
        self.energy_sum += w;
        self.frames += 1;
    }
}

/// Energy-weighted mean DOA in radians, or `None` for a configuration that
/// carried no energy.
pub fn weighted_doa(result: &ConfigurationResult) -> Option<f64> {
    (result.energy_sum > 0.0).then(|| result.weighted_sum / result.energy_sum)
}

/// Root mean square of `errors`.
pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::dim("rmse errors", 1, 0));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// One (reflection coefficient, SNR) condition. `snr_db = None` is noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub beta: f64,
    pub snr_db: Option<f64>,
}

/// Accuracy of one method in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub method: Method,
    pub beta: f64,
    pub snr_db: Option<f64>,
    pub rmse_deg: f64,
    /// Configurations that entered the RMSE.
    pub configurations: usize,
    /// Configurations excluded for carrying no energy.
    pub degenerate: usize,
}

/// Sweep settings. Scenario `i` of cell `c` uses seed
/// `derive_seed(seed, c, i)`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub params: GccParams,
    pub methods: Vec<Method>,
    pub cells: Vec<Cell>,
    pub n_configs: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub rir_len: usize,
    pub window: Window,
    pub min_source_distance: f64,
    pub category: Option<RoomCategory>,
}

impl SweepConfig {
    pub fn new(
        params: GccParams,
        methods: Vec<Method>,
        cells: Vec<Cell>,
        n_configs: usize,
        seed: u64,
    ) -> Self {
        Self {
            params,
            methods,
            cells,
            n_configs,
            seed,
            duration_s: 1.0,
            rir_len: crate::simulator::DEFAULT_RIR_LEN,
            window: Window::Hann,
            min_source_distance: 0.0,
            category: None,
        }
    }

    pub fn sim_config(&self, cell: &Cell) -> SimConfig {
        SimConfig {
            duration_s: self.duration_s,
            rir_len: self.rir_len,
            min_source_distance: self.min_source_distance,
            category: self.category,
            ..SimConfig::new(&self.params, cell.beta, cell.snr_db)
        }
    }

    /// Scenarios of cell `cell_index`, in order.
    pub fn scenarios(&self, cell_index: usize) -> Result<Vec<Scenario>> {
        let cell = self
            .cells
            .get(cell_index)
            .ok_or_else(|| Error::dim("cell index", self.cells.len(), cell_index))?;
        let sim = self.sim_config(cell);
        (0..self.n_configs as u64)
            .map(|i| {
                generate_scenario(&sim, i, derive_seed(self.seed, cell_index as u64, i)).map_err(
                    |e| Error::Scenario {
                        id: i,
                        source: Box::new(e),
                    },
                )
            })
            .collect()
    }
}

/// Prepared back-ends for a method list. Factors are built on demand when
/// `SVD` is requested and none are supplied.
pub fn prepare_backends(
    params: &GccParams,
    methods: &[Method],
    factors: Option<Arc<LowRankFactors>>,
) -> Result<Vec<Box<dyn Backend>>> {
    let shared = Prepared::new(params)?;
    let factors = match factors {
        Some(f) => Some(f),
        None if methods.iter().any(Method::needs_factors) => {
            Some(Arc::new(factorize(&shared.steering, params.delta)?))
        }
        None => None,
    };
    methods
        .iter()
        .map(|&m| prepare(m, &shared, factors.as_ref()))
        .collect()
}

/// Runs every back-end over the same cross-spectra of one rendered pair.
pub fn evaluate_pair(
    pair: &RenderedPair,
    stft: &Stft,
    backends: &[Box<dyn Backend>],
) -> Result<Vec<ConfigurationResult>> {
    let spectra = stereo_cross_spectra(stft, &pair.ch1, &pair.ch2)?;
    evaluate_spectra(pair.scenario.theta0, &spectra, backends)
}

pub fn evaluate_spectra(
    theta0: f64,
    spectra: &[CrossSpectrum],
    backends: &[Box<dyn Backend>],
) -> Result<Vec<ConfigurationResult>> {
    let mut scratch = Scratch::new();
    backends
        .iter()
        .map(|b| {
            let mut acc = ConfigurationResult::new(theta0);
            for x in spectra {
                let est = b.estimate(x, &mut scratch)?;
                acc.push(est.theta_est, est.energy);
            }
            Ok(acc)
        })
        .collect()
}

/// Simulates `n_configs` scenarios per cell and reports the RMSE of every
/// method. Deterministic for a fixed seed.
pub fn run_accuracy_sweep(
    config: &SweepConfig,
    factors: Option<Arc<LowRankFactors>>,
) -> Result<Vec<CellReport>> {
    if config.n_configs == 0 {
        return Err(Error::Config(
            "at least one configuration per cell is required".into(),
        ));
    }
    let backends = prepare_backends(&config.params, &config.methods, factors)?;
    let stft = Stft::new(config.params.n, config.params.hop, config.window)?;
    let mut reports = Vec::with_capacity(config.cells.len() * config.methods.len());
    for (ci, cell) in config.cells.iter().enumerate() {
        let sim = config.sim_config(cell);
        let scenarios = config.scenarios(ci)?;
        let results: Vec<Vec<ConfigurationResult>> = scenarios
            .par_iter()
            .map(|sc| {
                render_scenario(sc, &sim)
                    .and_then(|pair| evaluate_pair(&pair, &stft, &backends))
                    .map_err(|e| Error::Scenario {
                        id: sc.id,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;
        for (mi, &method) in config.methods.iter().enumerate() {
            let mut errors = Vec::with_capacity(results.len());
            let mut degenerate = 0;
            for r in &results {
                match weighted_doa(&r[mi]) {
                    Some(theta) => errors.push((theta - r[mi].theta0).to_degrees()),
                    None => degenerate += 1,
                }
            }
            let rmse_deg = if errors.is_empty() {
                f64::NAN
            } else {
                rmse(&errors)?
            };
            reports.push(CellReport {
                method,
                beta: cell.beta,
                snr_db: cell.snr_db,
                rmse_deg,
                configurations: errors.len(),
                degenerate,
            });
        }
    }
    Ok(reports)
}

/// Per-frame execution time of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub method: Method,
    pub mean_us_per_frame: f64,
    pub median_us_per_frame: f64,
    pub frames_timed: usize,
    pub params: String,
}

pub const WARMUP_CALLS: usize = 100;

/// Compact identifier of the configuration a timing was taken at.
pub fn params_fingerprint(p: &GccParams) -> String {
    format!(
        "Q{}-N{}-hop{}-d{}-c{}-fs{}-delta{:e}",
        p.q, p.n, p.hop, p.dist, p.speed, p.rate, p.delta
    )
}

/// `n` random unit-modulus cross-spectra with real edge bins.
pub fn random_spectra(params: &GccParams, n: usize, seed: u64) -> Vec<CrossSpectrum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = params.bins();
    (0..n)
        .map(|_| {
            let mut b: Vec<Complex64> = (0..bins)
                .map(|_| {
                    Complex64::from_polar(
                        1.0,
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    )
                })
                .collect();
            b[0] = Complex64::new(1.0, 0.0);
            b[bins - 1] = Complex64::new(if rng.random_bool(0.5) { 1.0 } else { -1.0 }, 0.0);
            CrossSpectrum { bins: b }
        })
        .collect()
}

/// Times `estimate` on the same batch of spectra for every back-end.
/// Preparation is outside the timed region; each back-end gets
/// [`WARMUP_CALLS`] untimed calls first.
pub fn time_backends(
    backends: &[Box<dyn Backend>],
    spectra: &[CrossSpectrum],
    params: &GccParams,
) -> Result<Vec<TimingReport>> {
    if spectra.is_empty() {
        return Err(Error::dim("benchmark frames", 1, 0));
    }
    let fingerprint = params_fingerprint(params);
    let mut out = Vec::with_capacity(backends.len());
    for b in backends {
        let mut scratch = Scratch::new();
        for x in spectra.iter().cycle().take(WARMUP_CALLS) {
            black_box(b.estimate(black_box(x), &mut scratch)?);
        }
        let mut times = Vec::with_capacity(spectra.len());
        for x in spectra {
            let start = Instant::now();
            let est = b.estimate(black_box(x), &mut scratch);
            let elapsed = start.elapsed();
            black_box(est?);
            times.push(elapsed.as_secs_f64() * 1e6);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        times.sort_by(f64::total_cmp);
        let mid = times.len() / 2;
        let median = if times.len() % 2 == 0 {
            0.5 * (times[mid - 1] + times[mid])
        } else {
            times[mid]
        };
        out.push(TimingReport {
            method: b.method(),
            // clocks with coarse resolution can report zero for tiny calls
            mean_us_per_frame: mean.max(f64::MIN_POSITIVE),
            median_us_per_frame: median,
            frames_timed: times.len(),
            params: fingerprint.clone(),
        });
    }
    Ok(out)
}

pub fn run_bench(
    methods: &[Method],
    n_frames: usize,
    params: &GccParams,
    factors: Option<Arc<LowRankFactors>>,
    seed: u64,
) -> Result<Vec<TimingReport>> {
    let backends = prepare_backends(params, methods, factors)?;
    let spectra = random_spectra(params, n_frames, seed);
    time_backends(&backends, &spectra, params)
}

fn snr_field(snr: Option<f64>) -> String {
    match snr {
        Some(v) => format!("{v:.6}"),
        None => "inf".into(),
    }
}

pub const ACCURACY_HEADER: [&str; 5] = ["method", "beta", "snr_db", "rmse_deg", "configs"];
pub const TIMING_HEADER: [&str; 5] = [
    "method",
    "mean_us_per_frame",
    "median_us_per_frame",
    "frames_timed",
    "params",
];

/// CSV text of an accuracy table.
pub fn format_cell_reports(reports: &[CellReport]) -> String {
    let mut s = ACCURACY_HEADER.join(",");
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{:.6},{},{:.6},{}",
            r.method.id(),
            r.beta,
            snr_field(r.snr_db),
            r.rmse_deg,
            r.configurations
        );
    }
    s
}

/// CSV text of a timing table.
pub fn format_timing_reports(reports: &[TimingReport]) -> String {
    let mut s = TIMING_HEADER.join(",");
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{}",
            r.method.id(),
            r.mean_us_per_frame,
            r.median_us_per_frame,
            r.frames_timed,
            r.params
        );
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_cell_reports(reports: &[CellReport], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_cell_reports(reports))
}

pub fn emit_timing_reports(reports: &[TimingReport], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_timing_reports(reports))
}

/// Parses an accuracy CSV written by [`emit_cell_reports`]. The degenerate
/// count is not part of the file and reads back as zero.
pub fn read_cell_reports(path: impl AsRef<Path>) -> Result<Vec<CellReport>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let parse_err =
        |what: &str, e: String| Error::io(path, std::io::Error::other(format!("{what}: {e}")));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err("record", e.to_string()))?;
        if rec.len() != ACCURACY_HEADER.len() {
            return Err(parse_err(
                "record",
                format!("expected 5 fields, got {}", rec.len()),
            ));
        }
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| parse_err(ACCURACY_HEADER[i], e.to_string()))
        };
        out.push(CellReport {
            method: rec[0].parse()?,
            beta: num(1)?,
            snr_db: if &rec[2] == "inf" {
                None
            } else {
                Some(num(2)?)
            },
            rmse_deg: num(3)?,
            configurations: rec[4]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err("configs", e.to_string()))?,
            degenerate: 0,
        });
    }
    Ok(out)
}

/// Outcome of one acceptance assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn find(
    reports: &[CellReport],
    method: Method,
    beta: f64,
    snr: Option<f64>,
) -> Option<&CellReport> {
    reports
        .iter()
        .find(|r| r.method == method && r.beta == beta && r.snr_db == snr)
}

/// Ordering checks on an accuracy table, applied to every cell present:
/// MM is no worse than FFT01, FFT02-QI is within 10 % of MM, MM degrades
/// with lower SNR at fixed β and with higher β at the highest SNR.
pub fn accuracy_checks(reports: &[CellReport]) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();
    for r in reports {
        let c = Cell {
            beta: r.beta,
            snr_db: r.snr_db,
        };
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let label = |c: &Cell| {
        format!(
            "beta={} snr={}",
            c.beta,
            c.snr_db.map_or("inf".into(), |s| s.to_string())
        )
    };
    for c in &cells {
        let mm = find(reports, Method::Mm, c.beta, c.snr_db);
        if let (Some(mm), Some(fft)) = (mm, find(reports, Method::Fft(1), c.beta, c.snr_db)) {
            checks.push(Check::new(
                format!("MM <= FFT01 [{}]", label(c)),
                mm.rmse_deg <= fft.rmse_deg,
                format!("MM {:.4} deg, FFT01 {:.4} deg", mm.rmse_deg, fft.rmse_deg),
            ));
        }
        if let (Some(mm), Some(qi)) = (mm, find(reports, Method::FftQi(2), c.beta, c.snr_db)) {
            let rel = (qi.rmse_deg - mm.rmse_deg).abs() / mm.rmse_deg;
            checks.push(Check::new(
                format!("FFT02-QI within 10% of MM [{}]", label(c)),
                rel <= 0.10,
                format!(
                    "MM {:.4} deg, FFT02-QI {:.4} deg, relative {:.2}%",
                    mm.rmse_deg,
                    qi.rmse_deg,
                    100.0 * rel
                ),
            ));
        }
    }
    let snr_key = |s: Option<f64>| s.unwrap_or(f64::INFINITY);
    let mut betas: Vec<f64> = cells.iter().map(|c| c.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    for &beta in &betas {
        let mut snrs: Vec<Option<f64>> = cells
            .iter()
            .filter(|c| c.beta == beta)
            .map(|c| c.snr_db)
            .collect();
        snrs.sort_by(|a, b| snr_key(*a).total_cmp(&snr_key(*b)));
        for w in snrs.windows(2) {
            if let (Some(lo), Some(hi)) = (
                find(reports, Method::Mm, beta, w[0]),
                find(reports, Method::Mm, beta, w[1]),
            ) {
                checks.push(Check::new(
                    format!(
                        "MM rmse(snr={}) >= rmse(snr={}) [beta={beta}]",
                        snr_field(w[0]),
                        snr_field(w[1])
                    ),
                    lo.rmse_deg >= hi.rmse_deg,
                    format!("{:.4} vs {:.4} deg", lo.rmse_deg, hi.rmse_deg),
                ));
            }
        }
    }
    let top_snr = cells
        .iter()
        .map(|c| c.snr_db)
        .max_by(|a, b| snr_key(*a).total_cmp(&snr_key(*b)));
    if let Some(snr) = top_snr {
        let at: Vec<f64> = betas
            .iter()
            .copied()
            .filter(|&b| find(reports, Method::Mm, b, snr).is_some())
            .collect();
        for w in at.windows(2) {
            let (lo, hi) = (
                find(reports, Method::Mm, w[0], snr).unwrap(),
                find(reports, Method::Mm, w[1], snr).unwrap(),
            );
            checks.push(Check::new(
                format!(
                    "MM rmse(beta={}) >= rmse(beta={}) [snr={}]",
                    w[1],
                    w[0],
                    snr_field(snr)
                ),
                hi.rmse_deg >= lo.rmse_deg,
                format!("{:.4} vs {:.4} deg", hi.rmse_deg, lo.rmse_deg),
            ));
        }
    }
    checks
}

/// Relative timing checks: MM slower than FFT32-QI, SVD and FFT02-QI;
/// FFT32 slower than FFT01. Only pairs present in `reports` are checked.
pub fn timing_checks(reports: &[TimingReport]) -> Vec<Check> {
    let get = |m: Method| reports.iter().find(|r| r.method == m);
    let pairs = [
        (Method::Mm, Method::FftQi(32)),
        (Method::Mm, Method::Svd),
        (Method::Mm, Method::FftQi(2)),
        (Method::Fft(32), Method::Fft(1)),
    ];
    pairs
        .iter()
        .filter_map(|&(slow, fast)| {
            let (s, f) = (get(slow)?, get(fast)?);
            Some(Check::new(
                format!("{slow} slower than {fast}"),
                s.mean_us_per_frame > f.mean_us_per_frame,
                format!(
                    "{:.3} us vs {:.3} us",
                    s.mean_us_per_frame, f.mean_us_per_frame
                ),
            ))
        })
        .collect()
}
