//! Offline low-rank factorization of the steering matrix.
//!
//! `W` is split into its real and imaginary parts, each part is decomposed
//! with a one-sided Jacobi SVD and truncated to the fewest singular values
//! whose energy reaches `(1 − δ)` of the part's squared Frobenius norm. The
//! retained factors are stored as `U` (`Q × K`) and `T = S·Vᵀ` (`K × (N/2+1)`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::steering::SteeringMatrix;

const MAGIC: &[u8; 10] = b"GPHAT-SVD\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = MAGIC.len() + 4 * 5 + 8;

const MAX_SWEEPS: usize = 80;
const JACOBI_TOL: f64 = 1e-15;

/// Real `rows × cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Splits `W` into `(W_R, W_I)` with `W = W_R + j·W_I`.
pub fn split_steering(w: &SteeringMatrix) -> (RealMatrix, RealMatrix) {
    let (rows, cols) = (w.rows(), w.cols());
    let re = w.entries().iter().map(|z| z.re).collect();
    let im = w.entries().iter().map(|z| z.im).collect();
    (
        RealMatrix {
            rows,
            cols,
            data: re,
        },
        RealMatrix {
            rows,
            cols,
            data: im,
        },
    )
}

/// Thin SVD of a real matrix, `A = U·diag(σ)·Vᵀ`, sorted by descending σ.
#[derive(Debug, Clone)]
pub struct RowSvd {
    pub singular: Vec<f64>,
    /// `rows × rows`, column `k` is the `k`-th left singular vector.
    pub left: RealMatrix,
    /// `rows × cols`, row `k` is `σ_k·v_kᵀ`.
    pub scaled_right: RealMatrix,
    pub sweeps: usize,
}

/// One-sided (Hestenes) Jacobi SVD applied to the rows of `a`.
///
/// Plane rotations are applied to pairs of rows until all rows are mutually
/// orthogonal. The rotated rows are then `σ_k·v_kᵀ` and the accumulated
/// rotation holds the left singular vectors.
pub fn jacobi_svd(a: &RealMatrix) -> Result<RowSvd> {
    let (m, n) = (a.rows, a.cols);
    if m == 0 || n == 0 {
        return Err(Error::dim("jacobi_svd", 1, 0));
    }
    let mut b = a.data.clone();
    let mut rot = vec![0.0; m * m];
    for i in 0..m {
        rot[i * m + i] = 1.0;
    }

    let mut sweeps = 0;
    loop {
        let mut residual: f64 = 0.0;
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let (alpha, beta, gamma) = {
                    let rp = &b[p * n..(p + 1) * n];
                    let rq = &b[q * n..(q + 1) * n];
                    let mut s = (0.0, 0.0, 0.0);
                    for (x, y) in rp.iter().zip(rq) {
                        s.0 += x * x;
                        s.1 += y * y;
                        s.2 += x * y;
                    }
                    s
                };
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut b, n, p, q, c, s);
                rotate_rows(&mut rot, m, p, q, c, s);
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Numerical { sweeps, residual });
        }
    }

    let norms: Vec<f64> = b
        .chunks_exact(n)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut left = vec![0.0; m * m];
    let mut scaled_right = Vec::with_capacity(m * n);
    for (k, &src) in order.iter().enumerate() {
        // rows of the accumulated rotation are the columns of U
        for r in 0..m {
            left[r * m + k] = rot[src * m + r];
        }
        scaled_right.extend_from_slice(&b[src * n..(src + 1) * n]);
    }
    Ok(RowSvd {
        singular: order.iter().map(|&i| norms[i]).collect(),
        left: RealMatrix {
            rows: m,
            cols: m,
            data: left,
        },
        scaled_right: RealMatrix {
            rows: m,
            cols: n,
            data: scaled_right,
        },
        sweeps,
    })
}

fn rotate_rows(data: &mut [f64], width: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = data.split_at_mut(q * width);
    let rp = &mut head[p * width..(p + 1) * width];
    let rq = &mut tail[..width];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Smallest `K ≥ 1` whose leading singular values hold at least
/// `(1 − δ)·‖W‖²_F` of the energy. `singular` must be the full spectrum,
/// sorted descending; the discarded tail is summed directly so tiny `δ`
/// is not lost to cancellation against the total.
pub fn select_rank(singular: &[f64], frobenius_sq: f64, delta: f64) -> Result<usize> {
    if singular.is_empty() {
        return Err(Error::dim("select_rank spectrum", 1, 0));
    }
    let budget = delta * frobenius_sq;
    let mut tail = 0.0;
    let mut k = singular.len();
    // walk up from the smallest value while the dropped energy fits
    while k > 1 {
        let next = tail + singular[k - 1] * singular[k - 1];
        if next > budget {
            break;
        }
        tail = next;
        k -= 1;
    }
    Ok(k)
}

/// Truncated factors of `W_R` and `W_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    q: usize,
    n: usize,
    /// `Q × K_R`, row-major.
    pub u_r: Vec<f64>,
    /// `K_R × (N/2+1)`, row-major.
    pub t_r: Vec<f64>,
    /// `Q × K_I`, row-major.
    pub u_i: Vec<f64>,
    /// `K_I × (N/2+1)`, row-major.
    pub t_i: Vec<f64>,
    pub k_r: usize,
    pub k_i: usize,
    pub delta: f64,
}

impl LowRankFactors {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// `‖U_α T_α − W_α‖²_F / ‖W_α‖²_F` for the real and imaginary parts.
    /// A zero part reports 0 when reconstructed exactly.
    pub fn reconstruction_ratios(&self, w: &SteeringMatrix) -> (f64, f64) {
        let (wr, wi) = split_steering(w);
        (
            reconstruction_ratio(&self.u_r, &self.t_r, self.k_r, &wr),
            reconstruction_ratio(&self.u_i, &self.t_i, self.k_i, &wi),
        )
    }
}

fn reconstruction_ratio(u: &[f64], t: &[f64], k: usize, w: &RealMatrix) -> f64 {
    let err = reconstruction_error_sq(u, t, k, w);
    let total = w.frobenius_sq();
    if total == 0.0 {
        err
    } else {
        err / total
    }
}

fn reconstruction_error_sq(u: &[f64], t: &[f64], k: usize, w: &RealMatrix) -> f64 {
    let mut err = 0.0;
    for r in 0..w.rows {
        let ur = &u[r * k..(r + 1) * k];
        for c in 0..w.cols {
            let approx: f64 = ur
                .iter()
                .enumerate()
                .map(|(j, uv)| uv * t[j * w.cols + c])
                .sum();
            let d = approx - w.data[r * w.cols + c];
            err += d * d;
        }
    }
    err
}

struct Truncated {
    u: Vec<f64>,
    t: Vec<f64>,
    k: usize,
}

fn truncate(part: &RealMatrix, delta: f64) -> Result<Truncated> {
    let svd = jacobi_svd(part)?;
    let total = part.frobenius_sq();
    let k = select_rank(&svd.singular, total, delta)?.min(part.cols);
    let m = part.rows;
    let u = (0..m)
        .flat_map(|r| svd.left.data[r * m..r * m + k].iter().copied())
        .collect();
    let t = svd.scaled_right.data[..k * part.cols].to_vec();
    let out = Truncated { u, t, k };
    let err = reconstruction_error_sq(&out.u, &out.t, k, part);
    if err > delta * total + 1e-9 {
        return Err(Error::Config(format!(
            "rank-{k} reconstruction error {err:e} exceeds tolerance {:e}",
            delta * total
        )));
    }
    Ok(out)
}

/// Factorizes both parts of `W` at tolerance `delta`.
pub fn factorize(w: &SteeringMatrix, delta: f64) -> Result<LowRankFactors> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let (wr, wi) = split_steering(w);
    let (re, im) = rayon::join(|| truncate(&wr, delta), || truncate(&wi, delta));
    let (re, im) = (re?, im?);
    Ok(LowRankFactors {
        q: w.rows(),
        n: w.frame_size(),
        u_r: re.u,
        t_r: re.t,
        u_i: im.u,
        t_i: im.t,
        k_r: re.k,
        k_i: im.k,
        delta,
    })
}

/// Serializes factors into the `GPHAT-SVD` little-endian layout.
pub fn encode_factors(f: &LowRankFactors) -> Vec<u8> {
    let floats = f.u_r.len() + f.t_r.len() + f.u_i.len() + f.t_i.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * floats);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, f.q as u32, f.n as u32, f.k_r as u32, f.k_i as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&f.delta.to_le_bytes());
    for m in [&f.u_r, &f.t_r, &f.u_i, &f.t_i] {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize, field: &'static str) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Format {
                field,
                reason: format!("file truncated at byte {} (need {end})", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        let b = self.take(8, field)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn matrix(&mut self, len: usize, field: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(8 * len, field)?;
        let v: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format {
                field,
                reason: "non-finite entry".into(),
            });
        }
        Ok(v)
    }
}

/// Parses a `GPHAT-SVD` buffer, validating every header field.
pub fn decode_factors(bytes: &[u8]) -> Result<LowRankFactors> {
    let bad = |field: &'static str, reason: String| Err(Error::Format { field, reason });
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return bad("magic", "not a GPHAT-SVD file".into());
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return bad("version", format!("unsupported version {version}"));
    }
    let q = r.u32("Q")?;
    if q == 0 {
        return bad("Q", "must be at least 1".into());
    }
    let n = r.u32("N")?;
    if n < 4 || n % 2 != 0 {
        return bad("N", format!("must be even and at least 4, got {n}"));
    }
    let bins = n / 2 + 1;
    let max_rank = q.min(bins);
    let k_r = r.u32("K_R")?;
    if k_r == 0 || k_r > max_rank {
        return bad("K_R", format!("{k_r} outside [1, {max_rank}]"));
    }
    let k_i = r.u32("K_I")?;
    if k_i == 0 || k_i > max_rank {
        return bad("K_I", format!("{k_i} outside [1, {max_rank}]"));
    }
    let delta = r.f64("delta")?;
    if !(delta > 0.0 && delta < 1.0) {
        return bad("delta", format!("{delta} outside (0, 1)"));
    }
    let u_r = r.matrix(q * k_r, "U_R")?;
    let t_r = r.matrix(k_r * bins, "T_R")?;
    let u_i = r.matrix(q * k_i, "U_I")?;
    let t_i = r.matrix(k_i * bins, "T_I")?;
    if r.pos != bytes.len() {
        return bad("T_I", format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(LowRankFactors {
        q,
        n,
        u_r,
        t_r,
        u_i,
        t_i,
        k_r,
        k_i,
        delta,
    })
}

pub fn save_factors(f: &LowRankFactors, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_factors(f)).map_err(|e| Error::io(path, e))
}

pub fn load_factors(path: impl AsRef<Path>) -> Result<LowRankFactors> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_factors(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GccParams;
    use crate::steering::{steering_matrix, theta_grid};
    use approx::assert_abs_diff_eq;

    fn reference_w() -> SteeringMatrix {
        let p = GccParams::default();
        steering_matrix(&p, &theta_grid(&p).unwrap()).unwrap()
    }

    #[test]
    fn split_rows_and_identity() {
        let w = reference_w();
        let (wr, wi) = split_steering(&w);
        for k in 0..w.cols() {
            assert_eq!(wr.row(90)[k], w.gains()[k]);
            assert_eq!(wi.row(90)[k], 0.0);
        }
        for q in (0..w.rows()).step_by(7) {
            for k in 0..w.cols() {
                let (a, b) = (wr.row(q)[k], wi.row(q)[k]);
                assert_abs_diff_eq!(a * a + b * b, w.gains()[k].powi(2), epsilon = 1e-15);
                assert_eq!(w.get(q, k).re, a);
                assert_eq!(w.get(q, k).im, b);
            }
        }
    }

    #[test]
    fn rank_selection_cases() {
        assert_eq!(select_rank(&[2.0, 0.0, 0.0], 4.0, 0.5).unwrap(), 1);
        assert_eq!(select_rank(&[2.0, 0.0, 0.0], 4.0, 1e-12).unwrap(), 1);
        let s = [3f64.sqrt(), 1.0];
        assert_eq!(select_rank(&s, 4.0, 0.3).unwrap(), 1);
        assert_eq!(select_rank(&s, 4.0, 0.2).unwrap(), 2);
        assert!(matches!(
            select_rank(&[], 1.0, 0.1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_row_matrix_has_rank_one() {
        let w = SteeringMatrix::from_taus(512, &[0.0]).unwrap();
        let f = factorize(&w, 1e-5).unwrap();
        assert_eq!((f.k_r, f.k_i), (1, 1));
        let w = SteeringMatrix::from_taus(512, &[1.3]).unwrap();
        let f = factorize(&w, 1e-5).unwrap();
        assert_eq!((f.k_r, f.k_i), (1, 1));
    }

    #[test]
    fn jacobi_on_known_matrix() {
        // [[3, 0], [4, 5]] has singular values √45 and √5
        let a = RealMatrix {
            rows: 2,
            cols: 2,
            data: vec![3.0, 0.0, 4.0, 5.0],
        };
        let svd = jacobi_svd(&a).unwrap();
        assert_abs_diff_eq!(svd.singular[0], 45f64.sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(svd.singular[1], 5f64.sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn reference_factors_meet_tolerance() {
        let w = reference_w();
        let f = factorize(&w, 1e-5).unwrap();
        let (rr, ri) = f.reconstruction_ratios(&w);
        assert!(rr <= 1e-5 && ri <= 1e-5, "{rr} {ri}");
        assert!(f.k_r + f.k_i < 181 / 2);
        // U columns orthonormal
        for (u, k) in [(&f.u_r, f.k_r), (&f.u_i, f.k_i)] {
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = (0..181).map(|r| u[r * k + a] * u[r * k + b]).sum();
                    assert_abs_diff_eq!(dot, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn rank_grows_as_tolerance_shrinks() {
        let w = reference_w();
        let mut last = (0, 0);
        for delta in [1e-1, 1e-2, 1e-3, 1e-5, 1e-8, 1e-12] {
            let f = factorize(&w, delta).unwrap();
            assert!(f.k_r >= last.0 && f.k_i >= last.1);
            last = (f.k_r, f.k_i);
        }
    }

    #[test]
    fn bad_delta_rejected() {
        let w = reference_w();
        assert!(factorize(&w, 0.0).is_err());
        assert!(factorize(&w, 1.0).is_err());
    }

    #[test]
    fn encode_decode_is_bit_exact() {
        let f = factorize(&reference_w(), 1e-5).unwrap();
        let bytes = encode_factors(&f);
        assert_eq!(&bytes[..10], b"GPHAT-SVD\0");
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 1);
        let g = decode_factors(&bytes).unwrap();
        assert_eq!(f, g);
        assert_eq!(encode_factors(&g), bytes);
    }

    #[test]
    fn malformed_files_name_the_field() {
        let f = factorize(&reference_w(), 1e-3).unwrap();
        let bytes = encode_factors(&f);
        let field = |b: &[u8]| match decode_factors(b) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(field(&bytes[..bytes.len() - 3]), "T_I");
        assert_eq!(field(&bytes[..12]), "version");
        assert_eq!(field(&bytes[..5]), "magic");

        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(field(&b), "magic");

        let mut b = bytes.clone();
        b[10..14].copy_from_slice(&7u32.to_le_bytes());
        assert_eq!(field(&b), "version");

        // K_R larger than Q
        let mut b = bytes.clone();
        b[22..26].copy_from_slice(&500u32.to_le_bytes());
        assert_eq!(field(&b), "K_R");

        let mut b = bytes.clone();
        b[30..38].copy_from_slice(&2.0f64.to_le_bytes());
        assert_eq!(field(&b), "delta");

        let mut b = bytes;
        b.push(0);
        assert_eq!(field(&b), "T_I");
    }
}
