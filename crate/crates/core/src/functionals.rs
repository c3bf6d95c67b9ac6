//! Relative entropy, relative Fisher information, their linearized
//! versions and the inequalities that tie them together.
//!
//! All functionals are taken relative to a stationary profile `V_D` and
//! evaluated on radial samples: `omega_N int f(r) r^{N-1} dr`, either
//! with a power-law continuation beyond the last node or truncated there
//! (see [`Tail`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Params;
use crate::grid::{radial_derivative, RadialGridFunction};
use crate::profiles::{self, BarenblattSpec};
use crate::quad::{self, QuadOptions};

fn require_entropy(params: &Params) -> Result<()> {
    if params.entropy_defined() {
        Ok(())
    } else {
        Err(Error::EntropyUndefined)
    }
}

/// Relative size below which an integrand sample is rounding noise:
/// squared deviations under about `1e-11` relative.
const NOISE: f64 = 1e-22;

/// Zeroes samples of `g` below `NOISE` times the natural scale `scale`,
/// so that rounding noise in far tails is not mistaken for a
/// non-integrable power law.
fn denoise(g: &mut [f64], scale: impl Iterator<Item = f64>) {
    for (x, s) in g.iter_mut().zip(scale) {
        if x.abs() <= NOISE * s.abs() {
            *x = 0.0;
        }
    }
}

/// What lies beyond the last grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Tail {
    /// Continue the integrand by the power law fitted to its last decade.
    #[default]
    PowerLaw,
    /// The sample equals the reference beyond the grid, so the integrand
    /// vanishes there. Right for evolutions that pin the far-field value.
    Truncate,
}

/// `omega_N int g r^{N-1} dr` over the grid plus the continued tail.
pub fn radial_integral(r: &[f64], g: &[f64], dim: u32) -> Result<f64> {
    radial_integral_with(r, g, dim, Tail::PowerLaw)
}

pub fn radial_integral_with(r: &[f64], g: &[f64], dim: u32, tail: Tail) -> Result<f64> {
    let q = dim as f64 - 1.0;
    let y: Vec<f64> = r.iter().zip(g).map(|(&x, &v)| v * x.powf(q)).collect();
    let body = quad::integrate_samples(r, &y);
    let rest = match tail {
        Tail::PowerLaw => profiles::tail_integral(r, g, q)?,
        Tail::Truncate => 0.0,
    };
    Ok(profiles::omega(dim) * (body + rest))
}

/// `((1+x)^gamma - 1 - gamma x) / (gamma (gamma - 1))`, without
/// cancellation for small `x`. Requires `gamma != 0, 1`.
pub fn entropy_kernel(x: f64, gamma: f64) -> f64 {
    if x.abs() < 0.05 {
        // Coefficients (gamma-2)(gamma-3)...(gamma-k+1)/k! of x^k, k >= 2.
        let mut c = 0.5;
        let mut pow = x * x;
        let mut sum = c * pow;
        for k in 3..16 {
            c *= (gamma - (k - 1) as f64) / k as f64;
            pow *= x;
            let term = c * pow;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else if x <= -1.0 {
        // v = 0: finite iff gamma > 0.
        if gamma > 0.0 {
            1.0 / gamma
        } else {
            f64::INFINITY
        }
    } else {
        ((1.0 + x).powf(gamma) - 1.0 - gamma * x) / (gamma * (gamma - 1.0))
    }
}

/// Stationary profile values and exact `d/dr V_D^{gamma-1}` on `r`.
fn reference(params: &Params, d: f64, r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gamma = params.gamma();
    let big_v = r.iter().map(|&x| profiles::eval_vd(d, x, params).0).collect();
    let dw = r
        .iter()
        .map(|&x| (1.0 - gamma) * x.powf(1.0 / (params.p - 1.0)))
        .collect();
    (big_v, dw)
}

/// `d/dr (v^{gamma-1} - V_D^{gamma-1})`, differenced as one function so
/// that `v = V_D` gives zero up to rounding.
fn gradient_gap(v: &RadialGridFunction, d: f64) -> Result<Vec<f64>> {
    let params = &v.params;
    let e = params.gamma() - 1.0;
    let b = profiles::profile_coefficient(params);
    let pp = params.p_prime();
    if v.values.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain(
            "gradient of v^(gamma-1) needs strictly positive samples".into(),
        ));
    }
    let gap: Vec<f64> = v
        .r()
        .iter()
        .zip(&v.values)
        .map(|(&r, &x)| x.powf(e) - (d + b * r.powf(pp)))
        .collect();
    Ok(radial_derivative(v.r(), &gap))
}

/// `E[v | V_D] = 1/(gamma(gamma-1)) int v^gamma - V^gamma - gamma V^{gamma-1}(v - V)`.
pub fn entropy(v: &RadialGridFunction, d: f64) -> Result<f64> {
    entropy_with(v, d, Tail::PowerLaw)
}

pub fn entropy_with(v: &RadialGridFunction, d: f64, tail: Tail) -> Result<f64> {
    let params = &v.params;
    require_entropy(params)?;
    let gamma = params.gamma();
    let (big_v, _) = reference(params, d, v.r());
    let mut g: Vec<f64> = v
        .values
        .iter()
        .zip(&big_v)
        .map(|(&x, &w)| w.powf(gamma) * entropy_kernel(x / w - 1.0, gamma))
        .collect();
    if g.iter().any(|x| !x.is_finite()) {
        return Ok(f64::INFINITY);
    }
    denoise(&mut g, big_v.iter().map(|w| w.powf(gamma)));
    Ok(radial_integral_with(v.r(), &g, params.dim, tail)?.max(0.0))
}

fn phi(s: f64, p: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.abs().powf(p - 2.0) * s
    }
}

/// `I[v | V_D] = |gamma-1|^{-p} int v (xi - eta)(Phi(xi) - Phi(eta))` with
/// `xi = d/dr v^{gamma-1}`, `eta = d/dr V_D^{gamma-1}`.
pub fn fisher(v: &RadialGridFunction, d: f64) -> Result<f64> {
    fisher_with(v, d, Tail::PowerLaw)
}

pub fn fisher_with(v: &RadialGridFunction, d: f64, tail: Tail) -> Result<f64> {
    let params = &v.params;
    require_entropy(params)?;
    let p = params.p;
    let gap = gradient_gap(v, d)?;
    let (_, dw) = reference(params, d, v.r());
    let scale = (params.gamma() - 1.0).abs().powf(-p);
    let mut g: Vec<f64> = v
        .values
        .iter()
        .zip(&gap)
        .zip(&dw)
        .map(|((&x, &dg), &eta)| x * dg * (phi(eta + dg, p) - phi(eta, p)) * scale)
        .collect();
    denoise(&mut g, v.values.iter().zip(&dw).map(|(x, eta)| x * eta.powf(p) * scale));
    Ok(radial_integral_with(v.r(), &g, params.dim, tail)?.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctionals {
    pub lin_entropy: f64,
    pub lin_fisher_gamma: f64,
    pub lin_fisher: f64,
}

/// Linearized entropy `1/2 int |v - V|^2 V^{gamma-2}` and the two
/// linearized Fisher informations with weight `V (eta + |d V^{gamma-1}|)^{p-2}`.
pub fn lin_functionals(v: &RadialGridFunction, d: f64, eta: f64) -> Result<LinearFunctionals> {
    lin_functionals_with(v, d, eta, Tail::PowerLaw)
}

pub fn lin_functionals_with(
    v: &RadialGridFunction,
    d: f64,
    eta: f64,
    tail: Tail,
) -> Result<LinearFunctionals> {
    let params = &v.params;
    require_entropy(params)?;
    if !(eta >= 0.0) {
        return Err(Error::InvalidParams(format!("eta must be >= 0, got {eta}")));
    }
    let p = params.p;
    let gamma = params.gamma();
    let r = v.r();
    let (big_v, dw) = reference(params, d, r);
    let diff: Vec<f64> = v
        .values
        .iter()
        .zip(r)
        .map(|(&x, &rr)| x - profiles::eval_vd(d, rr, params).0)
        .collect();
    let mut e: Vec<f64> = diff
        .iter()
        .zip(&big_v)
        .map(|(&dv, &w)| 0.5 * dv * dv * w.powf(gamma - 2.0))
        .collect();
    denoise(&mut e, big_v.iter().map(|w| w.powf(gamma)));
    let scale = (gamma - 1.0).abs().powf(-p);
    let weight: Vec<f64> = big_v
        .iter()
        .zip(&dw)
        .map(|(&w, &g)| {
            let base = eta + g;
            // At the origin with eta = 0 the weight blows up but the
            // squared gradient vanishes faster.
            if base == 0.0 {
                0.0
            } else {
                w * base.powf(p - 2.0) * scale
            }
        })
        .collect();
    let gap = gradient_gap(v, d)?;
    let natural: Vec<f64> = weight.iter().zip(&dw).map(|(w, g)| w * g * g).collect();
    let mut ig: Vec<f64> = gap.iter().zip(&weight).map(|(g, w)| g * g * w).collect();
    denoise(&mut ig, natural.iter().cloned());
    let h: Vec<f64> = diff
        .iter()
        .zip(&big_v)
        .map(|(&dv, &w)| w.powf(gamma - 2.0) * dv)
        .collect();
    let dh = radial_derivative(r, &h);
    let mut ih: Vec<f64> = dh.iter().zip(&weight).map(|(g, w)| g * g * w).collect();
    denoise(&mut ih, natural.iter().cloned());
    Ok(LinearFunctionals {
        lin_entropy: radial_integral_with(r, &e, params.dim, tail)?,
        lin_fisher_gamma: radial_integral_with(r, &ig, params.dim, tail)?,
        lin_fisher: radial_integral_with(r, &ih, params.dim, tail)?,
    })
}

/// Every functional of `v` relative to `V_D`; failures become `NaN` with
/// the matching flag cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub lin_entropy: f64,
    pub fisher: f64,
    pub lin_fisher_gamma: f64,
    pub lin_fisher: f64,
    pub eta: f64,
    /// Finiteness of the five values above, in order.
    pub finite: [bool; 5],
}

pub fn entropy_report(v: &RadialGridFunction, d: f64, eta: f64, tail: Tail) -> Result<EntropyReport> {
    require_entropy(&v.params)?;
    let or_nan = |x: Result<f64>| x.unwrap_or(f64::NAN);
    let lin = lin_functionals_with(v, d, eta, tail).unwrap_or(LinearFunctionals {
        lin_entropy: f64::NAN,
        lin_fisher_gamma: f64::NAN,
        lin_fisher: f64::NAN,
    });
    let vals = [
        or_nan(entropy_with(v, d, tail)),
        lin.lin_entropy,
        or_nan(fisher_with(v, d, tail)),
        lin.lin_fisher_gamma,
        lin.lin_fisher,
    ];
    Ok(EntropyReport {
        entropy: vals[0],
        lin_entropy: vals[1],
        fisher: vals[2],
        lin_fisher_gamma: vals[3],
        lin_fisher: vals[4],
        eta,
        finite: vals.map(f64::is_finite),
    })
}

/// Smallest `eps` with `1 - eps <= v / V_D <= 1 + eps` on the grid.
pub fn relative_sandwich(v: &RadialGridFunction, d: f64) -> f64 {
    v.r()
        .iter()
        .zip(&v.values)
        .map(|(&r, &x)| (x / profiles::eval_vd(d, r, &v.params).0 - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Smallest `eps` with `1 - eps <= v' / V_D' <= 1 + eps` away from the origin.
pub fn derivative_sandwich(v: &RadialGridFunction, d: f64) -> f64 {
    let dv = v.derivative();
    v.r()
        .iter()
        .zip(&dv)
        .skip(1)
        .map(|(&r, &g)| (g / profiles::eval_vd(d, r, &v.params).1 - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Exponent `1 + (1-gamma)(2-p)` of the Fisher comparison.
pub fn fisher_comparison_exponent(params: &Params) -> f64 {
    1.0 + (1.0 - params.gamma()) * (2.0 - params.p)
}

/// `(c_lower, c_upper)` with `c_lower I_gamma^(0) <= I <= c_upper I_gamma^(0)`
/// under the value and derivative sandwiches with parameter `eps`.
pub fn fisher_comparison_constants(params: &Params, eps: f64) -> (f64, f64) {
    let a = fisher_comparison_exponent(params);
    let p = params.p;
    (
        (1.0 - eps).powf(a) * (p - 1.0) / (1.0 + eps).powf(2.0 - p),
        (1.0 + eps).powf(a) * (p - 1.0) / (1.0 - eps).powf(2.0 - p),
    )
}

/// `C_{p,N} = (N + p - gamma - 1) / (1-gamma)^{2-p}`.
pub fn c_pn(params: &Params) -> f64 {
    let gamma = params.gamma();
    (params.n() + params.p - gamma - 1.0) / (1.0 - gamma).powf(2.0 - params.p)
}

/// `(kappa_1, kappa_2)` of `I^(eta) <= kappa_1 I_gamma^(eta) + kappa_2 E_lin`.
pub fn kappas(params: &Params, eps: f64) -> (f64, f64) {
    let gamma = params.gamma();
    let up = (1.0 + eps).powf(2.0 * (2.0 - gamma));
    let down = (1.0 - eps).powf(2.0 * (2.0 - gamma));
    (
        up / (1.0 - gamma).powi(2),
        c_pn(params) / (1.0 - gamma).powf(params.p - 1.0) * (up / down - 1.0),
    )
}

/// `D` with `int (v - V_D) = 0`.
pub fn matching_d(v: &RadialGridFunction) -> Result<f64> {
    profiles::d_of_mass(&v.params, profiles::mass(v, 0.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsiszarKullback {
    /// `||v - V_D||_1^2`.
    pub lhs: f64,
    /// `8 ||V_D^{2-gamma}||_1 E[v | V_D]`.
    pub rhs: f64,
    pub holds: bool,
}

/// `||V_D^{2-gamma}||_1 = int V_D^{1/(p-1)}`.
pub fn profile_power_norm(params: &Params, d: f64) -> Result<f64> {
    if !params.diff_profiles_integrable() {
        return Err(Error::NonIntegrableTail {
            power: -params.p / ((2.0 - params.p) * (params.p - 1.0)),
            threshold: -params.n(),
        });
    }
    let q = params.n() - 1.0;
    let f = |r: f64| profiles::eval_vd(d, r, params).0.powf(1.0 / (params.p - 1.0)) * r.powf(q);
    let split = (d / profiles::profile_coefficient(params)).powf(1.0 / params.p_prime());
    let alpha = params.p / ((2.0 - params.p) * (params.p - 1.0)) - params.n();
    let opts = QuadOptions::default();
    let body = quad::integrate(f, 0.0, split, opts).value;
    let tail = quad::integrate_algebraic_tail(f, split, alpha, opts).value;
    Ok(profiles::omega(params.dim) * (body + tail))
}

/// Both sides of `||v - V_D||_1^2 <= 8 ||V_D^{2-gamma}||_1 E[v | V_D]`.
pub fn csiszar_kullback_check(v: &RadialGridFunction, d: f64) -> Result<CsiszarKullback> {
    let params = &v.params;
    require_entropy(params)?;
    let r = v.r();
    let diff: Vec<f64> = v
        .values
        .iter()
        .zip(r)
        .map(|(&x, &rr)| x - profiles::eval_vd(d, rr, params).0)
        .collect();
    let abs: Vec<f64> = diff.iter().map(|x| x.abs()).collect();
    let rel_mass = radial_integral(r, &diff, params.dim)?;
    let mass = profiles::vd_mass(params, d)?;
    if rel_mass.abs() > 1e-6 * mass {
        return Err(Error::Domain(format!(
            "relative mass {rel_mass:e} exceeds 1e-6 of the mass {mass:e}"
        )));
    }
    let l1 = radial_integral(r, &abs, params.dim)?;
    let lhs = l1 * l1;
    let rhs = 8.0 * profile_power_norm(params, d)? * entropy(v, d)?;
    Ok(CsiszarKullback {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-8),
    })
}

/// `||(v - B)/B||_{L^q}` against the reference at the frame time of `v`;
/// `q = inf` gives the supremum over the grid.
pub fn relative_error(v: &RadialGridFunction, reference: &BarenblattSpec, q: f64) -> Result<f64> {
    let params = &v.params;
    let threshold = params.n() * (params.p - 1.0) / params.p;
    if !(q > threshold) {
        return Err(Error::InvalidParams(format!(
            "relative error needs q > N(p-1)/p = {threshold}, got {q}"
        )));
    }
    let t = v.frame.time();
    let rel = v
        .r()
        .iter()
        .zip(&v.values)
        .map(|(&r, &x)| reference.eval(t, r).map(|b| (x / b - 1.0).abs()))
        .collect::<Result<Vec<f64>>>()?;
    if q.is_infinite() {
        return Ok(rel.iter().cloned().fold(0.0, f64::max));
    }
    let g: Vec<f64> = rel.iter().map(|x| x.powf(q)).collect();
    Ok(radial_integral(v.r(), &g, params.dim)?.powf(1.0 / q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    /// `||f||_inf`.
    pub lhs: f64,
    /// `||f'||_inf^{N/(N+1)} ||f||_1^{1/(N+1)}`, without the constant.
    pub rhs: f64,
    /// `lhs / rhs`, a lower bound for the constant `C_N`.
    pub ratio: f64,
}

/// Sup-norm interpolation between the gradient sup and the `L^1` norm.
pub fn gn_interpolation_check(f: &RadialGridFunction) -> Result<InterpolationCheck> {
    let n = f.params.n();
    let lhs = f.values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let grad = f.derivative().iter().map(|x| x.abs()).fold(0.0, f64::max);
    let abs: Vec<f64> = f.values.iter().map(|x| x.abs()).collect();
    let l1 = radial_integral(f.r(), &abs, f.params.dim)?;
    let rhs = grad.powf(n / (n + 1.0)) * l1.powf(1.0 / (n + 1.0));
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(InterpolationCheck { lhs, rhs, ratio })
}

/// `min{1, 2(p-1)}`.
pub fn monotone_constant(p: f64) -> f64 {
    1f64.min(2.0 * (p - 1.0))
}

/// `(<Phi(xi) - Phi(eta), xi - eta>, c_1 |xi - eta|^2 / (|xi|^{2-p} + |eta|^{2-p}))`
/// for vectors, with `Phi(z) = |z|^{p-2} z`.
pub fn monotone_operator_sides(xi: &[f64], eta: &[f64], p: f64) -> (f64, f64) {
    let norm = |z: &[f64]| z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (nx, ne) = (norm(xi), norm(eta));
    let pow = |n: f64| if n == 0.0 { 0.0 } else { n.powf(p - 2.0) };
    let (sx, se) = (pow(nx), pow(ne));
    let mut inner = 0.0;
    let mut dist2 = 0.0;
    for (a, b) in xi.iter().zip(eta) {
        inner += (sx * a - se * b) * (a - b);
        dist2 += (a - b) * (a - b);
    }
    let denom = nx.powf(2.0 - p) + ne.powf(2.0 - p);
    (inner, monotone_constant(p) * dist2 / denom)
}

/// `(max^{p-2} (xi-eta)^2, F / (p-1), min^{p-2} (xi-eta)^2)` with
/// `F = (xi^{p-1} - eta^{p-1})(xi - eta) = xi^p - xi^{p-1} eta - eta^{p-1} xi + eta^p`.
pub fn scalar_chain(xi: f64, eta: f64, p: f64) -> (f64, f64, f64) {
    let d2 = (xi - eta) * (xi - eta);
    let f = (xi.powf(p - 1.0) - eta.powf(p - 1.0)) * (xi - eta);
    (
        xi.max(eta).powf(p - 2.0) * d2,
        f / (p - 1.0),
        xi.min(eta).powf(p - 2.0) * d2,
    )
}

/// The field `y |y|^{1-gamma} (eta + (1-gamma)|y|^{2-gamma})^{p-2}`.
pub fn weight_field(params: &Params, eta: f64, y: &[f64]) -> Vec<f64> {
    let gamma = params.gamma();
    let r = y.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = r.powf(1.0 - gamma) * (eta + (1.0 - gamma) * r.powf(2.0 - gamma)).powf(params.p - 2.0);
    y.iter().map(|x| x * s).collect()
}

/// Closed-form divergence of [`weight_field`] at radius `r`:
/// `r^{1-gamma} g^{p-3} [(N+1-gamma) eta + N (1-gamma) r^{2-gamma}]`,
/// `g = eta + (1-gamma) r^{2-gamma}`.
pub fn weight_divergence(params: &Params, eta: f64, r: f64) -> f64 {
    let gamma = params.gamma();
    let g = eta + (1.0 - gamma) * r.powf(2.0 - gamma);
    r.powf(1.0 - gamma)
        * g.powf(params.p - 3.0)
        * ((params.n() + 1.0 - gamma) * eta + params.n() * (1.0 - gamma) * r.powf(2.0 - gamma))
}
