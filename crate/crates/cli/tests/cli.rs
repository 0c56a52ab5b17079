use std::path::Path;
use std::process::{Command, Output};

use gccphat_core::evaluation::read_cell_reports;
use gccphat_core::load_factors;
use hound::{SampleFormat, WavSpec, WavWriter};
use tempfile::TempDir;

fn gccphat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gccphat"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_wav(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
    let spec = WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).unwrap();
    for f in frames {
        for &s in f {
            w.write_sample(s).unwrap();
        }
    }
    w.finalize().unwrap();
}

/// Deterministic pseudo-random noise, identical on both channels.
fn broadside_frames(len: usize) -> Vec<Vec<i16>> {
    let mut state: u32 = 12345;
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            let v = ((state >> 16) as i16) / 4;
            vec![v, v]
        })
        .collect()
}

#[test]
fn factorize_writes_loadable_deterministic_file() {
    let dir = TempDir::new().unwrap();
    let out = gccphat(&["factorize", "--out", "a.gphat"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("K_R=5 K_I=4"), "{stdout}");
    let f = load_factors(dir.path().join("a.gphat")).unwrap();
    assert_eq!((f.q(), f.n(), f.k_r, f.k_i), (181, 512, 5, 4));

    assert!(gccphat(&["factorize", "--out", "b.gphat"], dir.path())
        .status
        .success());
    let a = std::fs::read(dir.path().join("a.gphat")).unwrap();
    let b = std::fs::read(dir.path().join("b.gphat")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn factorize_rank_grows_as_delta_shrinks() {
    let dir = TempDir::new().unwrap();
    assert!(gccphat(
        &["factorize", "--delta", "1e-2", "--out", "coarse.gphat"],
        dir.path()
    )
    .status
    .success());
    assert!(gccphat(
        &["factorize", "--delta", "1e-12", "--out", "fine.gphat"],
        dir.path()
    )
    .status
    .success());
    let coarse = load_factors(dir.path().join("coarse.gphat")).unwrap();
    let fine = load_factors(dir.path().join("fine.gphat")).unwrap();
    assert!(fine.k_r > coarse.k_r && fine.k_i > coarse.k_i);
}

#[test]
fn estimate_broadside_wav_gives_zero_degrees() {
    let dir = TempDir::new().unwrap();
    write_wav(&dir.path().join("b.wav"), 2, 16000, &broadside_frames(8000));
    for method in ["mm", "fft02-qi", "fft", "svd"] {
        let mut args = vec!["estimate", "--wav", "b.wav", "--method", method];
        if method == "fft" {
            // integer lags tie across |tau| < 0.5 at factor 1
            args.extend(["--interp", "32"]);
        }
        if method == "svd" {
            assert!(gccphat(&["factorize", "--out", "f.gphat"], dir.path())
                .status
                .success());
            args.extend(["--factors", "f.gphat"]);
        }
        let out = gccphat(&args, dir.path());
        assert!(out.status.success(), "{method}: {}", stderr(&out));
        let text = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + (8000 - 512) / 160);
        assert!(
            lines[0].starts_with("{\"frame\":0,\"theta_deg\":"),
            "{}",
            lines[0]
        );
        for (i, line) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["frame"].as_u64(), Some(i as u64));
            assert!(
                v["theta_deg"].as_f64().unwrap().abs() < 1e-9,
                "{method}: {line}"
            );
            assert!(v["energy"].as_f64().unwrap() > 0.0);
        }
    }
}

#[test]
fn estimate_writes_to_file_when_requested() {
    let dir = TempDir::new().unwrap();
    write_wav(&dir.path().join("b.wav"), 2, 16000, &broadside_frames(2000));
    let out = gccphat(
        &["estimate", "--wav", "b.wav", "--out", "frames.ndjson"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("frames.ndjson")).unwrap();
    assert_eq!(text.lines().count(), 1 + (2000 - 512) / 160);
}

#[test]
fn estimate_rejects_mono_input() {
    let dir = TempDir::new().unwrap();
    let frames: Vec<Vec<i16>> = (0..4000).map(|i| vec![(i % 100) as i16]).collect();
    write_wav(&dir.path().join("m.wav"), 1, 16000, &frames);
    let out = gccphat(&["estimate", "--wav", "m.wav"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("expected 2 channels, found 1"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn estimate_rejects_wrong_sample_rate() {
    let dir = TempDir::new().unwrap();
    write_wav(&dir.path().join("b.wav"), 2, 8000, &broadside_frames(4000));
    let out = gccphat(&["estimate", "--wav", "b.wav"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("expected sample rate 16000 Hz, found 8000 Hz"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn svd_without_factor_file_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    write_wav(&dir.path().join("b.wav"), 2, 16000, &broadside_frames(2000));
    let out = gccphat(
        &["estimate", "--wav", "b.wav", "--method", "svd"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--factors"), "{}", stderr(&out));
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = gccphat(
        &["bench", "--methods", "mm,fft07", "--frames", "10"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fft07"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let res = gccphat(
            &["simulate", "--configs", "10", "--seed", "7", "--out", out],
            dir.path(),
        );
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let a = std::fs::read_to_string(dir.path().join("a/manifest.jsonl")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/manifest.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 10);
    let other = gccphat(
        &["simulate", "--configs", "10", "--seed", "8", "--out", "c"],
        dir.path(),
    );
    assert!(other.status.success());
    assert_ne!(
        a,
        std::fs::read_to_string(dir.path().join("c/manifest.jsonl")).unwrap()
    );
}

#[test]
fn simulate_renders_stereo_wavs_at_the_sample_rate() {
    let dir = TempDir::new().unwrap();
    let res = gccphat(
        &[
            "simulate",
            "--configs",
            "2",
            "--seed",
            "3",
            "--snr",
            "inf",
            "--wav",
            "--out",
            "c",
        ],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest = std::fs::read_to_string(dir.path().join("c/manifest.jsonl")).unwrap();
    assert!(manifest.contains("\"snr_db\":null"));
    for id in 0..2 {
        let mut r =
            hound::WavReader::open(dir.path().join(format!("c/scenario_{id:04}.wav"))).unwrap();
        let spec = r.spec();
        assert_eq!(
            (spec.channels, spec.sample_rate, spec.bits_per_sample),
            (2, 16000, 16)
        );
        let peak = r
            .samples::<i16>()
            .map(|s| s.unwrap().unsigned_abs())
            .max()
            .unwrap();
        assert!((peak as f64 / 32768.0 - 0.9).abs() < 1e-4, "peak {peak}");
    }
}

#[test]
fn simulated_wav_round_trips_through_estimate() {
    let dir = TempDir::new().unwrap();
    let res = gccphat(
        &[
            "simulate",
            "--configs",
            "1",
            "--seed",
            "11",
            "--snr",
            "40",
            "--min-distance",
            "1",
            "--wav",
            "--out",
            "c",
        ],
        dir.path(),
    );
    assert!(res.status.success(), "{}", stderr(&res));
    let manifest = std::fs::read_to_string(dir.path().join("c/manifest.jsonl")).unwrap();
    let scenario: serde_json::Value =
        serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let theta0 = scenario["theta0"].as_f64().unwrap().to_degrees();

    let out = gccphat(&["estimate", "--wav", "c/scenario_0000.wav"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let (mut weighted, mut total) = (0.0, 0.0);
    for line in String::from_utf8(out.stdout).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let e = v["energy"].as_f64().unwrap().max(0.0);
        weighted += e * v["theta_deg"].as_f64().unwrap();
        total += e;
    }
    assert!(
        (weighted / total - theta0).abs() < 5.0,
        "estimate {} vs {theta0}",
        weighted / total
    );
}

#[test]
fn evaluate_emits_one_row_per_method_and_cell() {
    let dir = TempDir::new().unwrap();
    let args = [
        "evaluate",
        "--methods",
        "mm,svd,fft02-qi",
        "--betas",
        "0,0.6",
        "--snrs",
        "40",
        "--configs",
        "3",
        "--seed",
        "5",
        "--out",
    ];
    let mut first = args.to_vec();
    first.push("a.csv");
    let res = gccphat(&first, dir.path());
    assert!(res.status.success(), "{}", stderr(&res));
    let reports = read_cell_reports(dir.path().join("a.csv")).unwrap();
    assert_eq!(reports.len(), 3 * 2);
    assert!(reports.iter().all(|r| r.configurations == 3));

    let mut second = args.to_vec();
    second.push("b.csv");
    assert!(gccphat(&second, dir.path()).status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn evaluate_check_reports_every_ordering() {
    let dir = TempDir::new().unwrap();
    let res = gccphat(
        &[
            "evaluate",
            "--methods",
            "mm,fft01",
            "--betas",
            "0",
            "--snrs",
            "10,40",
            "--configs",
            "4",
            "--check",
            "--out",
            "a.csv",
        ],
        dir.path(),
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    let verdicts = stdout
        .lines()
        .filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL "))
        .count();
    // two MM-vs-FFT01 cells and one SNR ordering
    assert_eq!(verdicts, 3, "{stdout}");
    assert_eq!(res.status.success(), !stdout.contains("FAIL "));
}

#[test]
fn bench_emits_one_row_per_method() {
    let dir = TempDir::new().unwrap();
    let res = gccphat(&["bench", "--frames", "2000", "--out", "t.csv"], dir.path());
    assert!(res.status.success(), "{}", stderr(&res));
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("method,mean_us_per_frame,median_us_per_frame,frames_timed,params")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 14);
    assert!(rows
        .iter()
        .all(|r| r.contains(",2000,Q181-N512-hop160-d0.05-c343-fs16000-delta1e-5")));
}
