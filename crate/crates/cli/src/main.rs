//! `gccphat` command-line driver.

mod wav;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use gccphat_core::evaluation::{
    accuracy_checks, emit_cell_reports, emit_timing_reports, run_accuracy_sweep, run_bench,
    timing_checks, Cell, Check, SweepConfig,
};
use gccphat_core::simulator::{
    derive_seed, generate_scenario, manifest_jsonl, render_scenario, RoomCategory, SimConfig,
};
use gccphat_core::stft::stereo_cross_spectra;
use gccphat_core::{
    factorize, load_factors, prepare, save_factors, GccParams, Method, Prepared, Scratch, Stft,
    Window,
};
use serde::Serialize;

/// Peak level of written WAV files, relative to full scale.
const WAV_PEAK: f64 = 0.9;

/// One line of the per-frame NDJSON stream.
#[derive(Serialize)]
struct FrameRecord {
    frame: usize,
    theta_deg: f64,
    energy: f64,
}

#[derive(Parser, Debug)]
#[command(
    name = "gccphat",
    version,
    about = "Two-microphone GCC-PHAT direction-of-arrival toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the low-rank steering factors and write them to a file.
    Factorize {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value = "factors.gphat")]
        out: PathBuf,
    },
    /// Estimate the DOA of every frame of a stereo WAV file (NDJSON output).
    Estimate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        wav: PathBuf,
        /// mm, fftNN, fftNN-qi, svd; bare `fft` / `fft-qi` take --interp.
        #[arg(long, default_value = "mm")]
        method: String,
        /// Factor file, required by `svd`.
        #[arg(long)]
        factors: Option<PathBuf>,
        #[arg(long, default_value = "hann")]
        window: Window,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a scenario corpus: manifest.jsonl and, optionally, WAV files.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 10)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// SNR in dB, or `inf` for noiseless rendering.
        #[arg(long, default_value = "20")]
        snr: Snr,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// small, medium or large; random per scenario when omitted.
        #[arg(long)]
        category: Option<RoomCategory>,
        #[arg(long, default_value_t = 0.0)]
        min_distance: f64,
        /// Also render each scenario to a stereo WAV file.
        #[arg(long)]
        wav: bool,
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
    },
    /// Accuracy sweep over β × SNR cells (CSV output).
    Evaluate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_delimiter = ',', default_value = "mm,fft01,fft02-qi,svd")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.6")]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "10,20,40")]
        snrs: Vec<Snr>,
        #[arg(long, default_value_t = 50)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value = "hann")]
        window: Window,
        #[arg(long)]
        category: Option<RoomCategory>,
        #[arg(long, default_value_t = 0.0)]
        min_distance: f64,
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Run the ordering checks; a failing check sets a non-zero exit status.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value = "accuracy.csv")]
        out: PathBuf,
    },
    /// Per-frame execution time of each method on random spectra (CSV output).
    Bench {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "mm,fft01,fft02,fft04,fft08,fft16,fft32,fft01-qi,fft02-qi,fft04-qi,fft08-qi,fft16-qi,fft32-qi,svd"
        )]
        methods: Vec<String>,
        #[arg(long, default_value_t = 2000)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Run the ordering checks; a failing check sets a non-zero exit status.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value = "timing.csv")]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct ParamArgs {
    /// Number of candidate angles.
    #[arg(long, default_value_t = GccParams::default().q)]
    q: usize,
    /// Frame size in samples.
    #[arg(long, default_value_t = GccParams::default().n)]
    n: usize,
    /// Hop size in samples.
    #[arg(long, default_value_t = GccParams::default().hop)]
    hop: usize,
    /// Microphone spacing in metres.
    #[arg(long, default_value_t = GccParams::default().dist)]
    dist: f64,
    /// Speed of sound in m/s.
    #[arg(long, default_value_t = GccParams::default().speed)]
    speed: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = GccParams::default().rate)]
    rate: f64,
    /// Tolerated relative energy loss of the low-rank factors.
    #[arg(long, default_value_t = GccParams::default().delta)]
    delta: f64,
    /// Interpolation factor used by bare `fft` / `fft-qi` method names.
    #[arg(long, default_value_t = GccParams::default().interp)]
    interp: usize,
}

impl ParamArgs {
    fn params(&self) -> Result<GccParams> {
        let p = GccParams {
            q: self.q,
            n: self.n,
            hop: self.hop,
            dist: self.dist,
            speed: self.speed,
            rate: self.rate,
            delta: self.delta,
            interp: self.interp,
        };
        p.validate()?;
        Ok(p)
    }

    fn wav_rate(&self) -> Result<u32> {
        if self.rate.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&self.rate) {
            bail!("WAV I/O needs an integral sample rate, got {}", self.rate);
        }
        Ok(self.rate as u32)
    }
}

/// SNR in dB; `inf` means noiseless.
#[derive(Debug, Clone, Copy)]
struct Snr(Option<f64>);

impl FromStr for Snr {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "none" => Ok(Snr(None)),
            v => v
                .parse::<f64>()
                .map(|db| Snr(Some(db)))
                .map_err(|e| format!("`{s}` is not an SNR in dB or `inf`: {e}")),
        }
    }
}

fn usage_error(kind: ErrorKind, message: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, message).exit()
}

fn parse_method(name: &str, interp: usize) -> Method {
    let resolved = match name.trim().to_ascii_lowercase().as_str() {
        "fft" => format!("fft{interp:02}"),
        "fft-qi" => format!("fft{interp:02}-qi"),
        other => other.to_string(),
    };
    resolved
        .parse()
        .unwrap_or_else(|e| usage_error(ErrorKind::InvalidValue, e))
}

fn parse_methods(names: &[String], interp: usize) -> Vec<Method> {
    let methods: Vec<Method> = names.iter().map(|n| parse_method(n, interp)).collect();
    if methods.is_empty() {
        usage_error(ErrorKind::InvalidValue, "at least one method is required");
    }
    methods
}

fn read_factors(path: Option<&Path>) -> Result<Option<Arc<gccphat_core::LowRankFactors>>> {
    path.map(|p| {
        load_factors(p)
            .map(Arc::new)
            .with_context(|| format!("cannot load factors from {}", p.display()))
    })
    .transpose()
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!(
            "{} {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    checks.iter().all(|c| c.passed)
}

fn cmd_factorize(params: &ParamArgs, out: &Path) -> Result<()> {
    let p = params.params()?;
    let shared = Prepared::new(&p)?;
    let factors = factorize(&shared.steering, p.delta)?;
    save_factors(&factors, out)?;
    let (rr, ri) = factors.reconstruction_ratios(&shared.steering);
    println!("K_R={} K_I={}", factors.k_r, factors.k_i);
    println!("reconstruction_ratio_R={rr:.6e} reconstruction_ratio_I={ri:.6e}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_estimate(
    params: &ParamArgs,
    wav_path: &Path,
    method: &str,
    factors: Option<&Path>,
    window: Window,
    out: Option<&Path>,
) -> Result<()> {
    let method = parse_method(method, params.interp);
    if method.needs_factors() && factors.is_none() {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            "method svd requires --factors <FILE>",
        );
    }
    let p = params.params()?;
    let (ch1, ch2) = wav::read_stereo(wav_path, params.wav_rate()?)?;
    let shared = Prepared::new(&p)?;
    let factors = read_factors(factors)?;
    let backend = prepare(method, &shared, factors.as_ref())?;
    let stft = Stft::new(p.n, p.hop, window)?;
    let spectra = stereo_cross_spectra(&stft, &ch1, &ch2)
        .with_context(|| format!("cannot analyse {}", wav_path.display()))?;

    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut scratch = Scratch::new();
    for (frame, x) in spectra.iter().enumerate() {
        let est = backend.estimate(x, &mut scratch)?;
        let record = FrameRecord {
            frame,
            theta_deg: est.theta_est.to_degrees(),
            energy: est.energy,
        };
        serde_json::to_writer(&mut sink, &record)?;
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}

struct SimulateArgs<'a> {
    params: &'a ParamArgs,
    configs: usize,
    seed: u64,
    beta: f64,
    snr: Option<f64>,
    duration: f64,
    category: Option<RoomCategory>,
    min_distance: f64,
    wav: bool,
    out: &'a Path,
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let p = a.params.params()?;
    let sim = SimConfig {
        duration_s: a.duration,
        category: a.category,
        min_source_distance: a.min_distance,
        ..SimConfig::new(&p, a.beta, a.snr)
    };
    let scenarios = (0..a.configs as u64)
        .map(|i| {
            generate_scenario(&sim, i, derive_seed(a.seed, 0, i))
                .with_context(|| format!("scenario {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(a.out)
        .with_context(|| format!("cannot create directory {}", a.out.display()))?;
    let manifest = a.out.join("manifest.jsonl");
    fs::write(&manifest, manifest_jsonl(&scenarios))
        .with_context(|| format!("cannot write {}", manifest.display()))?;
    if a.wav {
        let rate = a.params.wav_rate()?;
        for sc in &scenarios {
            let pair = render_scenario(sc, &sim)
                .with_context(|| format!("cannot render scenario {}", sc.id))?;
            let path = a.out.join(format!("scenario_{:04}.wav", sc.id));
            wav::write_stereo(&path, &pair.ch1, &pair.ch2, rate, WAV_PEAK)?;
        }
    }
    println!("wrote {} scenarios to {}", scenarios.len(), a.out.display());
    Ok(())
}

struct EvaluateArgs<'a> {
    params: &'a ParamArgs,
    methods: &'a [String],
    betas: &'a [f64],
    snrs: &'a [Snr],
    configs: usize,
    seed: u64,
    duration: f64,
    window: Window,
    category: Option<RoomCategory>,
    min_distance: f64,
    factors: Option<&'a Path>,
    check: bool,
    out: &'a Path,
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<bool> {
    let p = a.params.params()?;
    let methods = parse_methods(a.methods, a.params.interp);
    let cells: Vec<Cell> = a
        .betas
        .iter()
        .flat_map(|&beta| a.snrs.iter().map(move |&Snr(snr_db)| Cell { beta, snr_db }))
        .collect();
    let mut config = SweepConfig::new(p, methods, cells, a.configs, a.seed);
    config.duration_s = a.duration;
    config.window = a.window;
    config.category = a.category;
    config.min_source_distance = a.min_distance;
    let reports = run_accuracy_sweep(&config, read_factors(a.factors)?)?;
    emit_cell_reports(&reports, a.out)?;
    println!("wrote {} rows to {}", reports.len(), a.out.display());
    Ok(!a.check || report_checks(&accuracy_checks(&reports)))
}

fn cmd_bench(
    params: &ParamArgs,
    methods: &[String],
    frames: usize,
    seed: u64,
    factors: Option<&Path>,
    check: bool,
    out: &Path,
) -> Result<bool> {
    let p = params.params()?;
    let methods = parse_methods(methods, params.interp);
    let reports = run_bench(&methods, frames, &p, read_factors(factors)?, seed)?;
    emit_timing_reports(&reports, out)?;
    for r in &reports {
        println!(
            "{:9} mean {:9.3} us  median {:9.3} us",
            r.method.to_string(),
            r.mean_us_per_frame,
            r.median_us_per_frame
        );
    }
    println!("wrote {} rows to {}", reports.len(), out.display());
    Ok(!check || report_checks(&timing_checks(&reports)))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Factorize { params, out } => cmd_factorize(&params, &out).map(|_| true),
        Command::Estimate {
            params,
            wav,
            method,
            factors,
            window,
            out,
        } => cmd_estimate(
            &params,
            &wav,
            &method,
            factors.as_deref(),
            window,
            out.as_deref(),
        )
        .map(|_| true),
        Command::Simulate {
            params,
            configs,
            seed,
            beta,
            snr,
            duration,
            category,
            min_distance,
            wav,
            out,
        } => cmd_simulate(SimulateArgs {
            params: &params,
            configs,
            seed,
            beta,
            snr: snr.0,
            duration,
            category,
            min_distance,
            wav,
            out: &out,
        })
        .map(|_| true),
        Command::Evaluate {
            params,
            methods,
            betas,
            snrs,
            configs,
            seed,
            duration,
            window,
            category,
            min_distance,
            factors,
            check,
            out,
        } => cmd_evaluate(EvaluateArgs {
            params: &params,
            methods: &methods,
            betas: &betas,
            snrs: &snrs,
            configs,
            seed,
            duration,
            window,
            category,
            min_distance,
            factors: factors.as_deref(),
            check,
            out: &out,
        }),
        Command::Bench {
            params,
            methods,
            frames,
            seed,
            factors,
            check,
            out,
        } => cmd_bench(
            &params,
            &methods,
            frames,
            seed,
            factors.as_deref(),
            check,
            &out,
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
