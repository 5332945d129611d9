//! Pairwise Gaussian kernel sums in whitened coordinates.
//!
//! Every mesh quantity reduces to one of two sums over a point set `z_j`
//! (stored row-major, `dim` coordinates per point) against a single query `y`:
//!
//! * `ln Σ_j exp(-h·|z_j - y|²)`               ([`log_sum`])
//! * `Σ_j v_j · exp(-h·|z_j - y|² - b_j)`      ([`weighted_sum`])
//!
//! Points are processed in blocks: squared distances, exponents and
//! exponentials are computed by plain map loops over the block (these
//! vectorize), then added into eight lane accumulators, which avoids
//! reassociating floating-point sums. The summation order
//! is a fixed function of `j`, so every caller gets bit-identical results no
//! matter how queries are batched or which instruction set is selected.

const LANES: usize = 8;

const INV_LN2: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// 1.5 * 2^52: adding and subtracting rounds to the nearest integer.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const EXP_MIN: f64 = -746.0;
const EXP_MAX: f64 = 709.0;

// Taylor coefficients 1/k!, k = 0..=12, for |r| <= ln2 / 2.
const C: [f64; 13] = [
    1.0,
    1.0,
    0.5,
    1.666_666_666_666_666_6e-1,
    4.166_666_666_666_666_4e-2,
    8.333_333_333_333_333e-3,
    1.388_888_888_888_889e-3,
    1.984_126_984_126_984e-4,
    2.480_158_730_158_73e-5,
    2.755_731_922_398_589e-6,
    2.755_731_922_398_589_3e-7,
    2.505_210_838_544_172e-8,
    2.087_675_698_786_81e-9,
];

/// Branch-free `exp`, accurate to a couple of ulps, that the compiler can
/// vectorize. Underflows smoothly through the subnormal range to zero.
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    let x = x.clamp(EXP_MIN, EXP_MAX);
    let shifted = x * INV_LN2 + SHIFTER;
    let kf = shifted - SHIFTER;
    let k = (shifted.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Estrin scheme: short dependency chains keep the vector units busy.
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let p01 = C[0] + C[1] * r;
    let p23 = C[2] + C[3] * r;
    let p45 = C[4] + C[5] * r;
    let p67 = C[6] + C[7] * r;
    let p89 = C[8] + C[9] * r;
    let p1011 = C[10] + C[11] * r;
    let q0 = p01 + p23 * r2;
    let q1 = p45 + p67 * r2;
    let q2 = p89 + p1011 * r2;
    let s0 = q0 + q1 * r4;
    let s1 = q2 + C[12] * r4;
    let p = s0 + s1 * r8;
    // 2^k split in two halves so k down to -1077 stays representable. The
    // halving uses a logical shift on a biased value (no 64-bit arithmetic
    // shift in AVX2).
    // Wrapping ops: k is bounded by the clamp, and overflow checks would
    // block vectorization in checked builds.
    let k1 = ((k.wrapping_add(1078) as u64) >> 1).wrapping_sub(539) as i64;
    let k2 = k.wrapping_sub(k1);
    let s1 = f64::from_bits((k1.wrapping_add(1023) as u64) << 52);
    let s2 = f64::from_bits((k2.wrapping_add(1023) as u64) << 52);
    p * s1 * s2
}

// Points processed per block; exponents for one block live on the stack.
const BLOCK: usize = 256;

/// `out[j] = |z_j - y|²` for the rows of `points`.
#[inline(always)]
fn sq_dists_fixed<const D: usize>(points: &[f64], y: &[f64; D], out: &mut [f64]) {
    for (o, z) in out.iter_mut().zip(points.chunks_exact(D)) {
        let mut s = 0.0;
        for k in 0..D {
            let d = z[k] - y[k];
            s += d * d;
        }
        *o = s;
    }
}

#[inline(always)]
fn sq_dists_dyn(points: &[f64], dim: usize, y: &[f64], out: &mut [f64]) {
    for (o, z) in out.iter_mut().zip(points.chunks_exact(dim)) {
        let mut s = 0.0;
        for (a, b) in z.iter().zip(y) {
            let d = a - b;
            s += d * d;
        }
        *o = s;
    }
}

#[inline(always)]
fn sq_dists(points: &[f64], dim: usize, y: &[f64], out: &mut [f64]) {
    match dim {
        1 => sq_dists_fixed::<1>(points, &[y[0]], out),
        2 => sq_dists_fixed::<2>(points, &[y[0], y[1]], out),
        3 => sq_dists_fixed::<3>(points, &[y[0], y[1], y[2]], out),
        _ => sq_dists_dyn(points, dim, y, out),
    }
}

#[inline(always)]
fn exp_in_place(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = fast_exp(*x);
    }
}

/// Adds `terms[j]` into lane `j % LANES`; `terms.len()` is a multiple of
/// `LANES` except possibly for the final block.
#[inline(always)]
fn accumulate(acc: &mut [f64; LANES], tail: &mut f64, terms: &[f64]) {
    let mut chunks = terms.chunks_exact(LANES);
    for c in &mut chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    for t in chunks.remainder() {
        *tail += t;
    }
}

#[inline(always)]
fn fold_lanes(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline(always)]
fn log_sum_generic(points: &[f64], dim: usize, y: &[f64], h: f64) -> f64 {
    let mut buf = [0.0f64; BLOCK];
    let mut dmin = f64::INFINITY;
    for pts in points.chunks(BLOCK * dim) {
        let m = pts.len() / dim;
        sq_dists(pts, dim, y, &mut buf[..m]);
        let mut lo = [f64::INFINITY; LANES];
        let mut chunks = buf[..m].chunks_exact(LANES);
        for c in &mut chunks {
            for l in 0..LANES {
                lo[l] = lo[l].min(c[l]);
            }
        }
        for &v in chunks.remainder() {
            dmin = dmin.min(v);
        }
        for v in lo {
            dmin = dmin.min(v);
        }
    }
    let mut acc = [0.0; LANES];
    let mut tail = 0.0;
    for pts in points.chunks(BLOCK * dim) {
        let m = pts.len() / dim;
        let e = &mut buf[..m];
        sq_dists(pts, dim, y, e);
        for v in e.iter_mut() {
            *v = -(*v - dmin) * h;
        }
        exp_in_place(e);
        accumulate(&mut acc, &mut tail, e);
    }
    -dmin * h + (fold_lanes(acc) + tail).ln()
}

#[inline(always)]
fn weighted_sum_generic(
    points: &[f64],
    dim: usize,
    y: &[f64],
    h: f64,
    bias: &[f64],
    values: &[f64],
) -> f64 {
    let mut buf = [0.0f64; BLOCK];
    let mut acc = [0.0; LANES];
    let mut tail = 0.0;
    for ((pts, b), v) in points
        .chunks(BLOCK * dim)
        .zip(bias.chunks(BLOCK))
        .zip(values.chunks(BLOCK))
    {
        let m = b.len();
        let e = &mut buf[..m];
        sq_dists(pts, dim, y, e);
        for ((x, bj), vj) in e.iter_mut().zip(b).zip(v) {
            *x = fast_exp(-*x * h - bj) * vj;
        }
        accumulate(&mut acc, &mut tail, e);
    }
    fold_lanes(acc) + tail
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    // Same code compiled with wider vectors. No FMA: results stay identical
    // to the baseline build.
    #[target_feature(enable = "avx2")]
    pub unsafe fn log_sum(points: &[f64], dim: usize, y: &[f64], h: f64) -> f64 {
        super::log_sum_generic(points, dim, y, h)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn weighted_sum(
        points: &[f64],
        dim: usize,
        y: &[f64],
        h: f64,
        bias: &[f64],
        values: &[f64],
    ) -> f64 {
        super::weighted_sum_generic(points, dim, y, h, bias, values)
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::arch::is_x86_feature_detected!("avx2")
}

/// `ln Σ_j exp(-h·|z_j - y|²)` over the rows of `points`. Requires at least
/// one point.
pub fn log_sum(points: &[f64], dim: usize, y: &[f64], h: f64) -> f64 {
    debug_assert!(dim > 0 && points.len().is_multiple_of(dim) && !points.is_empty());
    debug_assert_eq!(y.len(), dim);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: avx2 support checked at runtime.
        return unsafe { avx2::log_sum(points, dim, y, h) };
    }
    log_sum_generic(points, dim, y, h)
}

/// `Σ_j v_j · exp(-h·|z_j - y|² - b_j)` over the rows of `points`.
pub fn weighted_sum(
    points: &[f64],
    dim: usize,
    y: &[f64],
    h: f64,
    bias: &[f64],
    values: &[f64],
) -> f64 {
    debug_assert!(dim > 0 && points.len() == bias.len() * dim);
    debug_assert_eq!(bias.len(), values.len());
    debug_assert_eq!(y.len(), dim);
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: avx2 support checked at runtime.
        return unsafe { avx2::weighted_sum(points, dim, y, h, bias, values) };
    }
    weighted_sum_generic(points, dim, y, h, bias, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    #[test]
    fn exp_matches_std_on_a_sweep() {
        let mut worst = 0.0f64;
        let mut x = -700.0;
        while x < 700.0 {
            worst = worst.max(rel(fast_exp(x), x.exp()));
            x += 0.0137;
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
    }

    #[test]
    fn exp_edges() {
        assert_eq!(fast_exp(0.0), 1.0);
        assert_eq!(fast_exp(-1e6), 0.0);
        assert_eq!(fast_exp(f64::NEG_INFINITY), 0.0);
        assert!(fast_exp(-720.0) > 0.0);
        assert!(rel(fast_exp(-720.0), (-720.0f64).exp()) < 1e-6);
        assert!(fast_exp(709.0).is_finite());
    }

    fn sq(z: &[f64], y: &[f64]) -> f64 {
        z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn naive_log_sum(points: &[f64], dim: usize, y: &[f64], h: f64) -> f64 {
        points
            .chunks(dim)
            .map(|z| (-h * sq(z, y)).exp())
            .sum::<f64>()
            .ln()
    }

    fn naive_weighted(points: &[f64], dim: usize, y: &[f64], h: f64, b: &[f64], v: &[f64]) -> f64 {
        points
            .chunks(dim)
            .enumerate()
            .map(|(j, z)| v[j] * (-h * sq(z, y) - b[j]).exp())
            .sum()
    }

    proptest! {
        #[test]
        fn sums_match_naive(dim in 1usize..5, n in 1usize..40, seed in 0u64..1000, h in 0.1f64..5.0) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0 };
            let pts: Vec<f64> = (0..n * dim).map(|_| next()).collect();
            let y: Vec<f64> = (0..dim).map(|_| next()).collect();
            let b: Vec<f64> = (0..n).map(|_| next()).collect();
            let v: Vec<f64> = (0..n).map(|_| next()).collect();
            let ls = log_sum(&pts, dim, &y, h);
            prop_assert!((ls - naive_log_sum(&pts, dim, &y, h)).abs() < 1e-12 * ls.abs().max(1.0));
            let ws = weighted_sum(&pts, dim, &y, h, &b, &v);
            let scale: f64 = pts.chunks(dim).enumerate().map(|(j, z)| (v[j] * (-h * sq(z, &y) - b[j]).exp()).abs()).sum();
            prop_assert!((ws - naive_weighted(&pts, dim, &y, h, &b, &v)).abs() <= 1e-13 * scale.max(1e-300));
        }
    }

    #[test]
    fn log_sum_survives_far_queries() {
        let pts = [0.0, 1.0, 2.0];
        let v = log_sum(&pts, 1, &[1e4], 0.5);
        assert!(v.is_finite());
        assert!((v - (-0.5 * (1e4f64 - 2.0).powi(2))).abs() / v.abs() < 1e-12);
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn baseline_and_avx2_agree_bitwise() {
        if !has_avx2() {
            return;
        }
        let pts: Vec<f64> = (0..203).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let b: Vec<f64> = (0..203).map(|i| (i % 7) as f64 * 0.1).collect();
        let v: Vec<f64> = (0..203).map(|i| (i % 5) as f64 - 2.0).collect();
        let y = [0.3];
        let a = weighted_sum_generic(&pts, 1, &y, 1.7, &b, &v);
        let c = unsafe { avx2::weighted_sum(&pts, 1, &y, 1.7, &b, &v) };
        assert_eq!(a.to_bits(), c.to_bits());
        let a = log_sum_generic(&pts, 1, &y, 1.7);
        let c = unsafe { avx2::log_sum(&pts, 1, &y, 1.7) };
        assert_eq!(a.to_bits(), c.to_bits());
    }
}
