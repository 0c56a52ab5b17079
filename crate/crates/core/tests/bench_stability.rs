//! Kept in its own binary so no other test competes for the CPU while the
//! benchmark runs.

use gccphat_core::evaluation::run_bench;
use gccphat_core::{GccParams, Method};

#[test]
fn benchmark_is_stable_between_runs() {
    let p = GccParams::default();
    let methods = Method::roster();
    let first = run_bench(&methods, 2000, &p, None, 1).unwrap();
    let second = run_bench(&methods, 2000, &p, None, 1).unwrap();
    for (a, b) in first.iter().zip(&second) {
        let rel = (a.mean_us_per_frame - b.mean_us_per_frame).abs()
            / a.mean_us_per_frame.min(b.mean_us_per_frame);
        assert!(
            rel < 0.2,
            "{}: {:.3} vs {:.3} us",
            a.method,
            a.mean_us_per_frame,
            b.mean_us_per_frame
        );
    }
}
