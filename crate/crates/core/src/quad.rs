//! Quadrature and scalar root finding.
//!
//! Profiles in this problem have algebraic tails, so half-line integrals are
//! split at a finite point: adaptive Gauss-Kronrod on the inner piece and the
//! map `r = s/(1-s)` on the outer piece, which turns the tail into a finite
//! interval with an integrable endpoint singularity at `s = 1`.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the 7-point rule embedded at odd Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol: 1e-12,
            max_intervals: 4000,
        }
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod (7/15) on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            abs_error: 0.0,
            intervals: 0,
        };
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > opts.abs_tol.max(opts.rel_tol * total.abs()) && parts.len() < opts.max_intervals {
        let (k, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, pv, pe) = parts.swap_remove(k);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            parts.push((lo, hi, pv, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    let value: f64 = parts.iter().map(|t| t.2).sum();
    let abs_error: f64 = parts.iter().map(|t| t.3).sum();
    QuadResult {
        value,
        abs_error,
        intervals: parts.len(),
    }
}

/// `int_0^inf f(r) dr`, split at `split`: Gauss-Kronrod inside, the map
/// `r = split * s/(1-s)` over `s in [1/2, 1)` outside.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, split: f64, opts: QuadOptions) -> QuadResult {
    let inner = integrate(&f, 0.0, split, opts);
    let outer = integrate(
        |s: f64| {
            let one_minus = 1.0 - s;
            if one_minus <= 0.0 {
                return 0.0;
            }
            let r = split * s / one_minus;
            let v = f(r) * split / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.5,
        1.0,
        opts,
    );
    QuadResult {
        value: inner.value + outer.value,
        abs_error: inner.abs_error + outer.abs_error,
        intervals: inner.intervals + outer.intervals,
    }
}

/// `int_a^inf f(r) dr` for `a > 0` via `r = a/s`, `s in (0, 1]`.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, a: f64, opts: QuadOptions) -> QuadResult {
    integrate(
        |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let v = f(a / s) * a / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// `int_a^inf f(r) dr` for `f(r) ~ r^{-1-alpha}`, `alpha > 0`, via
/// `r = a s^{-1/alpha}`; the map makes the pulled-back integrand bounded
/// at `s = 0`, which matters when `alpha` is small.
pub fn integrate_algebraic_tail<F: Fn(f64) -> f64>(f: F, a: f64, alpha: f64, opts: QuadOptions) -> QuadResult {
    let e = -1.0 / alpha;
    integrate(
        |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let r = a * s.powf(e);
            let v = f(r) * r / (alpha * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Bisection on a sign change of `f` over `[lo, hi]`, stopping when the
/// bracket is below `rel_tol` relative to its midpoint.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Bracket(format!(
            "no sign change on [{lo:e}, {hi:e}]: f = {flo:e}, {fhi:e}"
        )));
    }
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo).abs() <= rel_tol * mid.abs() {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expand `[lo, hi]` geometrically around a positive guess until `f`
/// changes sign, then bisect.
pub fn bisect_positive<F: FnMut(f64) -> f64>(mut f: F, guess: f64, rel_tol: f64) -> Result<f64> {
    let mut lo = guess;
    let mut hi = guess;
    let s0 = f(guess);
    if s0 == 0.0 {
        return Ok(guess);
    }
    for _ in 0..200 {
        lo *= 0.5;
        hi *= 2.0;
        let (a, b) = (f(lo), f(hi));
        if a.signum() != s0.signum() {
            return bisect(&mut f, lo, lo * 2.0, rel_tol);
        }
        if b.signum() != s0.signum() {
            return bisect(&mut f, hi * 0.5, hi, rel_tol);
        }
    }
    Err(Error::Bracket(format!("no sign change found around {guess:e}")))
}

/// Integral of sampled data on strictly increasing abscissae by piecewise
/// quadratic interpolation (nonuniform Simpson). Exact for quadratics.
pub fn integrate_samples(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (x[1] - x[0]) * (y[0] + y[1]);
    }
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < n {
        total += quad_piece(&x[i..i + 3], &y[i..i + 3], x[i], x[i + 2]);
        i += 2;
    }
    if i + 1 < n {
        total += quad_piece(&x[n - 3..n], &y[n - 3..n], x[n - 2], x[n - 1]);
    }
    total
}

/// Cumulative version: `out[k] = int_{x_0}^{x_k}`.
pub fn cumulative_samples(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for k in 1..n {
        let piece = if n < 3 {
            0.5 * (x[k] - x[k - 1]) * (y[k] + y[k - 1])
        } else {
            let s = if k + 1 < n { k - 1 } else { n - 3 };
            quad_piece(&x[s..s + 3], &y[s..s + 3], x[k - 1], x[k])
        };
        out[k] = out[k - 1] + piece;
    }
    out
}

/// Integrates the quadratic through three points over `[lo, hi]` with the
/// three-point Gauss-Legendre rule (exact for quadratics).
fn quad_piece(x: &[f64], y: &[f64], lo: f64, hi: f64) -> f64 {
    const G: f64 = 0.774_596_669_241_483_4;
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let nodes = [c - G * h, c, c + G * h];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut s = 0.0;
    for (t, w) in nodes.iter().zip(weights) {
        let l0 = (t - x[1]) * (t - x[2]) / ((x[0] - x[1]) * (x[0] - x[2]));
        let l1 = (t - x[0]) * (t - x[2]) / ((x[1] - x[0]) * (x[1] - x[2]));
        let l2 = (t - x[0]) * (t - x[1]) / ((x[2] - x[0]) * (x[2] - x[1]));
        s += w * (l0 * y[0] + l1 * y[1] + l2 * y[2]);
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebraic_tail_small_decay() {
        // int_1^inf r^{-1.2} (1 + 1/r) dr = 1/0.2 + 1/1.2.
        let f = |r: f64| r.powf(-1.2) * (1.0 + 1.0 / r);
        let v = integrate_algebraic_tail(f, 1.0, 0.2, QuadOptions::default()).value;
        assert!((v - (5.0 + 1.0 / 1.2)).abs() < 1e-11);
    }

    #[test]
    fn polynomial_and_smooth_integrals() {
        let r = integrate(|x| x * x, 0.0, 3.0, QuadOptions::default());
        assert!((r.value - 9.0).abs() < 1e-13);
        let r = integrate(f64::sin, 0.0, std::f64::consts::PI, QuadOptions::default());
        assert!((r.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let r = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, QuadOptions::default());
        assert!((r.value - 2.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn algebraic_tail() {
        // int_0^inf r^2 (1 + r^2)^{-3} dr = pi/16
        let r = integrate_half_line(|r| r * r / (1.0 + r * r).powi(3), 1.0, QuadOptions::default());
        assert!((r.value - std::f64::consts::PI / 16.0).abs() < 1e-12);
        // slow tail r^{-1.5}
        let r = integrate_tail(|r: f64| r.powf(-1.5), 2.0, QuadOptions::default());
        assert!((r.value - 2.0 / 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn bisection_finds_root() {
        let x = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((x - 2f64.sqrt()).abs() < 1e-13);
        let x = bisect_positive(|x| (1.0 / x) - 1e-6, 3.0, 1e-12).unwrap();
        assert!((x - 1e6).abs() < 1e-5);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn samples_exact_on_quadratics() {
        let x: Vec<f64> = (0..11).map(|k| (k as f64 * 0.3).exp()).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t - t + 2.0).collect();
        let exact = |t: f64| t * t * t - 0.5 * t * t + 2.0 * t;
        let v = integrate_samples(&x, &y);
        assert!((v - (exact(x[10]) - exact(x[0]))).abs() < 1e-9 * v.abs());
        let c = cumulative_samples(&x, &y);
        for k in 0..11 {
            assert!((c[k] - (exact(x[k]) - exact(x[0]))).abs() < 1e-9 * v.abs());
        }
    }
}
