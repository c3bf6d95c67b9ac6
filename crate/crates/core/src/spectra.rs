//! Radial Hardy-Poincare constants as constrained generalized eigenvalues.
//!
//! The optimal linearized constant is the smallest `lambda` with
//! `lambda int g^2 w_M <= int g'^2 w_K` for all `g` with `int g w_M = 0`,
//! where in the variable `s^2 = (2-p) r^{p'} / (p D)`
//!
//! `w_K(s) = s^{2N(p-1)/p - 1} (1+s^2)^{-(p-1)/(2-p)}`,
//! `w_M(s) = s^{2N(p-1)/p - 1} (1+s^2)^{-1/(2-p)}`.
//!
//! Piecewise-linear elements with natural boundary conditions make
//! constants the kernel, so the constrained minimum is the second
//! eigenvalue of the pencil `(K, M)`. It is located by bisection on the
//! inertia of `K - sigma M` (Sylvester), which is exact in exact arithmetic
//! for symmetric tridiagonal pencils; the eigenvector follows by
//! shift-invert iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{self, Params};
use crate::functionals::{self, Tail};
use crate::grid::{RadialGrid, RadialGridFunction};
use crate::profiles;
use crate::quad::{self, QuadOptions};
use crate::solver::solve_tridiagonal;

pub const DEFAULT_S_MIN: f64 = 1e-4;
pub const DEFAULT_DOMAIN: f64 = 1e4;
pub const DEFAULT_NODES: usize = 4096;

/// Which weighted inequality the pencil discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HpKind {
    /// The optimal linearized inequality in the variable `s`.
    Optimal,
    /// `int |phi - mean|^2 w <= C int |phi'|^2 r^2 w` with
    /// `w = (1 + r^{p'})^{-1/(2-p)}`, in the variable `r`.
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProblem {
    pub params: Params,
    pub kind: HpKind,
    /// `0 = s_0 < s_1 < ... < s_K = L`.
    pub grid: Vec<f64>,
}

impl SpectralProblem {
    pub fn new(params: Params, kind: HpKind, nodes: usize, domain: f64) -> Result<Self> {
        Self::with_s_min(params, kind, nodes, domain, DEFAULT_S_MIN)
    }

    pub fn with_s_min(params: Params, kind: HpKind, nodes: usize, domain: f64, s_min: f64) -> Result<Self> {
        if nodes < 64 {
            return Err(Error::InvalidParams(format!("spectral grid needs at least 64 nodes, got {nodes}")));
        }
        if !mass_weight_integrable(&params) {
            return Err(Error::NonIntegrableTail {
                power: mass_tail_power(&params, kind),
                threshold: -1.0,
            });
        }
        if kind == HpKind::Optimal && !params.in_good_range() {
            return Err(Error::Regime {
                op: "optimal Hardy-Poincare constant",
                needed: "p_c < p < 2",
                p: params.p,
                dim: params.dim,
            });
        }
        let grid = RadialGrid::log_spaced(s_min, domain, nodes)?.r;
        Ok(Self { params, kind, grid })
    }

    /// `(w_K(s), w_M(s))`.
    pub fn weights(&self, s: f64) -> (f64, f64) {
        weights(&self.params, self.kind, s)
    }

    /// Exponent `a` of the origin behaviour `w ~ s^{a-1}` of both weights.
    fn origin_power(&self) -> f64 {
        match self.kind {
            HpKind::Optimal => 2.0 * self.params.n() * (self.params.p - 1.0) / self.params.p,
            HpKind::General => self.params.n(),
        }
    }

    pub fn assemble(&self) -> Pencil {
        let s = &self.grid;
        let n = s.len();
        let mut k_diag = vec![0.0; n];
        let mut k_off = vec![0.0; n - 1];
        let mut m_diag = vec![0.0; n];
        let mut m_off = vec![0.0; n - 1];
        let opts = QuadOptions {
            rel_tol: 1e-13,
            ..Default::default()
        };
        let a = self.origin_power();
        for c in 0..n - 1 {
            let (lo, hi) = (s[c], s[c + 1]);
            let h = hi - lo;
            let cell = |f: &dyn Fn(f64) -> f64| -> f64 {
                if lo == 0.0 {
                    // s = h t^{1/a} absorbs the s^{a-1} singularity.
                    let g = |t: f64| f(h * t.powf(1.0 / a)) * (h * t.powf(1.0 / a)).powf(1.0 - a);
                    h.powf(a) / a * quad::integrate(g, 0.0, 1.0, opts).value
                } else {
                    quad::integrate(f, lo, hi, opts).value
                }
            };
            let wk = cell(&|x| self.weights(x).0) / (h * h);
            let left = |x: f64| (hi - x) / h;
            let right = |x: f64| (x - lo) / h;
            let mll = cell(&|x| self.weights(x).1 * left(x) * left(x));
            let mlr = cell(&|x| self.weights(x).1 * left(x) * right(x));
            let mrr = cell(&|x| self.weights(x).1 * right(x) * right(x));
            k_diag[c] += wk;
            k_diag[c + 1] += wk;
            k_off[c] -= wk;
            m_diag[c] += mll;
            m_diag[c + 1] += mrr;
            m_off[c] += mlr;
        }
        Pencil {
            k_diag,
            k_off,
            m_diag,
            m_off,
        }
    }
}

fn weights(params: &Params, kind: HpKind, s: f64) -> (f64, f64) {
    let p = params.p;
    match kind {
        HpKind::Optimal => {
            let base = s.powf(2.0 * params.n() * (p - 1.0) / p - 1.0);
            let q = 1.0 + s * s;
            (base * q.powf(-(p - 1.0) / (2.0 - p)), base * q.powf(-1.0 / (2.0 - p)))
        }
        HpKind::General => {
            let w = (1.0 + s.powf(params.p_prime())).powf(-1.0 / (2.0 - p));
            let n = params.n();
            (s.powf(n + 1.0) * w, s.powf(n - 1.0) * w)
        }
    }
}

/// `N (p-1)(2-p) < p`: the mass weight has a finite integral.
pub fn mass_weight_integrable(params: &Params) -> bool {
    params.diff_profiles_integrable()
}

fn mass_tail_power(params: &Params, kind: HpKind) -> f64 {
    let p = params.p;
    match kind {
        HpKind::Optimal => 2.0 * params.n() * (p - 1.0) / p - 1.0 - 2.0 / (2.0 - p),
        HpKind::General => params.n() - 1.0 - params.p_prime() / (2.0 - p),
    }
}

/// Symmetric tridiagonal stiffness and mass matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Pencil {
    pub k_diag: Vec<f64>,
    pub k_off: Vec<f64>,
    pub m_diag: Vec<f64>,
    pub m_off: Vec<f64>,
}

impl Pencil {
    pub fn len(&self) -> usize {
        self.k_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_diag.is_empty()
    }

    /// Number of eigenvalues below `sigma`: negative pivots of the
    /// `L D L^T` factorization of `K - sigma M`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.len();
        let mut count = 0;
        let mut d = self.k_diag[0] - sigma * self.m_diag[0];
        for i in 0..n {
            if i > 0 {
                let off = self.k_off[i - 1] - sigma * self.m_off[i - 1];
                // A zero pivot is perturbed to the next representable value.
                let prev = if d == 0.0 { f64::MIN_POSITIVE } else { d };
                d = self.k_diag[i] - sigma * self.m_diag[i] - off * off / prev;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `index`-th eigenvalue (from zero) by bisection on the inertia.
    pub fn eigenvalue(&self, index: usize) -> Result<f64> {
        if index >= self.len() {
            return Err(Error::Eigen(format!("index {index} beyond pencil size {}", self.len())));
        }
        let mut hi = 1.0;
        let mut guard = 0;
        while self.count_below(hi) <= index {
            hi *= 4.0;
            guard += 1;
            if guard > 600 {
                return Err(Error::Eigen("no upper bracket for the eigenvalue".into()));
            }
        }
        let mut lo = if index == 0 { -1.0 } else { 0.0 };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn apply_k(&self, x: &[f64]) -> Vec<f64> {
        tri_apply(&self.k_diag, &self.k_off, x)
    }

    pub fn apply_m(&self, x: &[f64]) -> Vec<f64> {
        tri_apply(&self.m_diag, &self.m_off, x)
    }

    /// Removes the `M`-weighted mean: `x - (1^T M x / 1^T M 1) 1`.
    pub fn deflate_constants(&self, x: &mut [f64]) {
        let ones = vec![1.0; self.len()];
        let m1 = self.apply_m(&ones);
        let num: f64 = m1.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        let den: f64 = m1.iter().sum();
        let c = num / den;
        for v in x.iter_mut() {
            *v -= c;
        }
    }

    /// Eigenvector for an eigenvalue `lambda` by shift-invert iteration
    /// just below it, with constants projected out.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let sigma = lambda * (1.0 - 1e-8);
        let lower: Vec<f64> = std::iter::once(0.0)
            .chain(self.k_off.iter().zip(&self.m_off).map(|(k, m)| k - sigma * m))
            .collect();
        let upper: Vec<f64> = lower[1..].iter().cloned().chain(std::iter::once(0.0)).collect();
        let diag: Vec<f64> = self.k_diag.iter().zip(&self.m_diag).map(|(k, m)| k - sigma * m).collect();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 / n as f64)).collect();
        self.deflate_constants(&mut x);
        for _ in 0..4 {
            let rhs = self.apply_m(&x);
            x = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
            self.deflate_constants(&mut x);
            let norm = self.m_norm(&x);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::Eigen("shift-invert iteration lost the eigenvector".into()));
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(x)
    }

    pub fn m_norm(&self, x: &[f64]) -> f64 {
        let mx = self.apply_m(x);
        mx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().sqrt()
    }

    pub fn rayleigh(&self, x: &[f64]) -> f64 {
        let kx = self.apply_k(x);
        let mx = self.apply_m(x);
        let num: f64 = kx.iter().zip(x).map(|(a, b)| a * b).sum();
        let den: f64 = mx.iter().zip(x).map(|(a, b)| a * b).sum();
        num / den
    }

    /// `|K x - lambda M x| / |K x|`.
    pub fn residual(&self, x: &[f64], lambda: f64) -> f64 {
        let kx = self.apply_k(x);
        let mx = self.apply_m(x);
        let r: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - lambda * b).powi(2)).sum();
        let k: f64 = kx.iter().map(|a| a * a).sum();
        (r / k).sqrt()
    }
}

fn tri_apply(diag: &[f64], off: &[f64], x: &[f64]) -> Vec<f64> {
    let n = diag.len();
    (0..n)
        .map(|i| {
            let mut v = diag[i] * x[i];
            if i > 0 {
                v += off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += off[i] * x[i + 1];
            }
            v
        })
        .collect()
}

/// Constrained ground state of one discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpEstimate {
    pub value: f64,
    pub residual: f64,
    pub grid: Vec<f64>,
    pub eigenvector: Vec<f64>,
    /// Share of the eigenvector's `M`-norm squared on the outer tenth of
    /// the grid in `ln s`; large values mean mass escaping to infinity.
    pub outer_share: f64,
}

pub fn solve(problem: &SpectralProblem) -> Result<HpEstimate> {
    let pencil = problem.assemble();
    let value = pencil.eigenvalue(1)?;
    let eigenvector = pencil.eigenvector(value)?;
    let residual = pencil.residual(&eigenvector, value);
    let s = &problem.grid;
    let cut = (s[1].ln() + 0.9 * (s[s.len() - 1].ln() - s[1].ln())).exp();
    let masked: Vec<f64> = eigenvector.iter().zip(s).map(|(v, &x)| if x >= cut { *v } else { 0.0 }).collect();
    let outer = pencil.m_norm(&masked).powi(2).min(1.0);
    Ok(HpEstimate {
        value,
        residual,
        grid: s.clone(),
        eigenvector,
        outer_share: outer,
    })
}

/// Spectral constant on the default domain.
pub fn hp_optimal_constant(params: &Params, grid_size: usize) -> Result<f64> {
    Ok(solve(&SpectralProblem::new(*params, HpKind::Optimal, grid_size, DEFAULT_DOMAIN)?)?.value)
}

/// `Lambda = p Lambda_opt / (2(2-p))`: the same inequality written for the
/// linearized entropy and Fisher information.
pub fn lambda_from_opt(params: &Params, lambda_opt: f64) -> f64 {
    params.p * lambda_opt / (2.0 * (2.0 - params.p))
}

/// `Lambda_opt` implied by the closed-form linearized constant.
pub fn lambda_opt_closed_form(params: &Params) -> Result<f64> {
    Ok(2.0 * (2.0 - params.p) * exponents::lambda_hp(params)? / params.p)
}

/// Bottom of the essential spectrum of the optimal pencil on the half
/// line: `(a - 2)^2 / 4` from the power solutions `s^mu` at infinity, with
/// `a = 2N(p-1)/p - 2(p-1)/(2-p)`.
pub fn lambda_opt_essential(params: &Params) -> f64 {
    let p = params.p;
    let a = 2.0 * params.n() * (p - 1.0) / p - 2.0 * (p - 1.0) / (2.0 - p);
    (a - 2.0).powi(2) / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyLabel {
    /// The truncated eigenvalues settle as the domain grows.
    Converged,
    /// No eigenvalue below the essential spectrum; the value is the
    /// extrapolation of the truncated eigenvalues in `1/ln^2 L`.
    EssentialSpectrumEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStudy {
    pub domains: Vec<f64>,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub outer_shares: Vec<f64>,
    pub estimate: f64,
    pub label: StudyLabel,
}

/// Truncated eigenvalues for each domain size. At or below the moment
/// threshold the bottom of the spectrum is essential and the truncated
/// values approach it like `c / ln^2 L`, the spacing of the lowest
/// oscillatory power solution on `[1, L]`.
pub fn domain_study(params: &Params, nodes: usize, domains: &[f64]) -> Result<DomainStudy> {
    if domains.len() < 2 {
        return Err(Error::InvalidParams("domain study needs at least two domain sizes".into()));
    }
    let mut values = Vec::with_capacity(domains.len());
    let mut residuals = Vec::with_capacity(domains.len());
    let mut shares = Vec::with_capacity(domains.len());
    for &l in domains {
        let est = solve(&SpectralProblem::new(*params, HpKind::Optimal, nodes, l)?)?;
        values.push(est.value);
        residuals.push(est.residual);
        shares.push(est.outer_share);
    }
    let essential = params.p <= params.exponents().p_m;
    let (estimate, label) = if essential {
        // Least squares of value against x = 1/ln^2 L; the intercept.
        let xs: Vec<f64> = domains.iter().map(|l| 1.0 / l.ln().powi(2)).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, values.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&values).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        (my - sxy / sxx * mx, StudyLabel::EssentialSpectrumEstimate)
    } else {
        (values[values.len() - 1], StudyLabel::Converged)
    };
    Ok(DomainStudy {
        domains: domains.to_vec(),
        values,
        residuals,
        outer_shares: shares,
        estimate,
        label,
    })
}

/// Radial test function `phi(r)` for the general inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// `amplitude (1 - ((r - center)/width)^2)^3` on `|r - center| < width`.
    Bump { center: f64, width: f64, amplitude: f64 },
    /// Piecewise-linear interpolant of samples, constant past the last node.
    Samples { r: Vec<f64>, values: Vec<f64> },
}

impl TestFunction {
    fn eval(&self, r: f64) -> (f64, f64) {
        match self {
            TestFunction::Bump { center, width, amplitude } => {
                let x = (r - center) / width;
                if x.abs() >= 1.0 {
                    (0.0, 0.0)
                } else {
                    let q = 1.0 - x * x;
                    (amplitude * q.powi(3), amplitude * 3.0 * q * q * (-2.0 * x / width))
                }
            }
            TestFunction::Samples { r: nodes, values } => {
                let n = nodes.len();
                if r >= nodes[n - 1] {
                    return (values[n - 1], 0.0);
                }
                let k = nodes.partition_point(|&v| v <= r).clamp(1, n - 1) - 1;
                let h = nodes[k + 1] - nodes[k];
                let slope = (values[k + 1] - values[k]) / h;
                (values[k] + slope * (r - nodes[k]), slope)
            }
        }
    }

    /// Break points where the integrand is not smooth.
    fn breaks(&self) -> Vec<f64> {
        match self {
            TestFunction::Bump { center, width, .. } => vec![(center - width).max(0.0), center + width],
            TestFunction::Samples { r, .. } => r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralHpReport {
    /// `lhs / rhs` per test function; `0` when both sides vanish.
    pub ratios: Vec<f64>,
    /// Lower bound on the optimal constant.
    pub max_ratio: f64,
}

/// Ratios of `int |phi - mean|^2 w` to `int |phi'|^2 r^2 w` over radial
/// test functions, `w = (1 + r^{p'})^{-1/(2-p)}`.
pub fn hp_general_check(params: &Params, tests: &[TestFunction]) -> Result<GeneralHpReport> {
    if !params.diff_profiles_integrable() {
        return Err(Error::Regime {
            op: "general Hardy-Poincare check",
            needed: "N (2-p)(p-1) < p",
            p: params.p,
            dim: params.dim,
        });
    }
    let opts = QuadOptions {
        rel_tol: 1e-11,
        ..Default::default()
    };
    let w = |r: f64| weights(params, HpKind::General, r);
    let mut ratios = Vec::with_capacity(tests.len());
    for t in tests {
        // Split points: function breaks plus a geometric ladder to the tail.
        let mut cuts: Vec<f64> = t.breaks().into_iter().filter(|&x| x > 0.0).collect();
        cuts.extend([1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]);
        cuts.push(0.0);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let last = *cuts.last().unwrap();
        let integral = |f: &dyn Fn(f64) -> f64| -> f64 {
            let mut total = 0.0;
            for c in cuts.windows(2) {
                total += quad::integrate(f, c[0], c[1], opts).value;
            }
            total + quad::integrate_tail(f, last, opts).value
        };
        let mass = integral(&|r| w(r).1);
        let mean = integral(&|r| t.eval(r).0 * w(r).1) / mass;
        let lhs = integral(&|r| (t.eval(r).0 - mean).powi(2) * w(r).1);
        let rhs = integral(&|r| t.eval(r).1.powi(2) * w(r).0);
        ratios.push(if lhs == 0.0 { 0.0 } else { lhs / rhs });
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(GeneralHpReport { ratios, max_ratio })
}

/// Fisher information over entropy, both relative to `V_D`.
pub fn rayleigh_quotient(v: &RadialGridFunction, d: f64) -> Result<f64> {
    rayleigh_quotient_with(v, d, Tail::PowerLaw)
}

pub fn rayleigh_quotient_with(v: &RadialGridFunction, d: f64, tail: Tail) -> Result<f64> {
    let e = functionals::entropy_with(v, d, tail)?;
    if !(e > 0.0) {
        return Err(Error::Domain("zero relative entropy: the quotient is 0/0".into()));
    }
    Ok(functionals::fisher_with(v, d, tail)? / e)
}

/// `s(r) = sqrt((2-p)/(p D)) r^{p'/2}`.
pub fn s_of_r(params: &Params, d: f64, r: f64) -> f64 {
    (profiles::profile_coefficient(params) / d).sqrt() * r.powf(0.5 * params.p_prime())
}

/// `V_D + delta g(s(r)) V_D^{2-gamma}` for a nodal function `g` on the
/// spectral grid (linear interpolation, constant past its last node).
pub fn perturbation(
    params: &Params,
    d: f64,
    s_grid: &[f64],
    g: &[f64],
    delta: f64,
    grid: &RadialGrid,
) -> Result<RadialGridFunction> {
    let f = TestFunction::Samples {
        r: s_grid.to_vec(),
        values: g.to_vec(),
    };
    let gamma = params.gamma();
    let values: Vec<f64> = grid
        .r
        .iter()
        .map(|&r| {
            let big_v = profiles::eval_vd(d, r, params).0;
            big_v + delta * f.eval(s_of_r(params, d, r)).0 * big_v.powf(2.0 - gamma)
        })
        .collect();
    RadialGridFunction::new(grid.clone(), values, crate::grid::Frame::SelfSimilar { tau: 0.0 }, *params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, n: u32) -> Params {
        Params::new(p, n).unwrap()
    }

    /// Rayleigh quotient of `g = N + (N - p/(2-p)) s^2`, the image of the
    /// mass-preserving dilation of `V_D`, by adaptive quadrature.
    fn dilation_quotient(pr: &Params) -> f64 {
        let p = pr.p;
        let n = pr.n();
        let c = n - p / (2.0 - p);
        let w = |s: f64| weights(pr, HpKind::Optimal, s);
        let opts = QuadOptions::default();
        let mass = quad::integrate_half_line(|s| w(s).1, 1.0, opts).value;
        let mean = quad::integrate_half_line(|s| (n + c * s * s) * w(s).1, 1.0, opts).value / mass;
        let num = quad::integrate_half_line(|s| (2.0 * c * s).powi(2) * w(s).0, 1.0, opts).value;
        let den = quad::integrate_half_line(|s| (n + c * s * s - mean).powi(2) * w(s).1, 1.0, opts).value;
        assert!(mean.abs() < 1e-6 * n, "dilation is mean-zero, got {mean}");
        num / den
    }

    #[test]
    fn inertia_counts_simple_pencil() {
        // K = tridiag(-1, 2, -1) with M = I: eigenvalues 2 - 2 cos(k pi/(n+1)).
        let n = 20;
        let pencil = Pencil {
            k_diag: vec![2.0; n],
            k_off: vec![-1.0; n - 1],
            m_diag: vec![1.0; n],
            m_off: vec![0.0; n - 1],
        };
        for k in 0..n {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((pencil.eigenvalue(k).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_are_the_kernel() {
        let pr = params(1.75, 3);
        let pencil = SpectralProblem::new(pr, HpKind::Optimal, 128, 1e3).unwrap().assemble();
        let lam0 = pencil.eigenvalue(0).unwrap();
        assert!(lam0.abs() < 1e-10, "{lam0}");
        let k1 = pencil.apply_k(&vec![1.0; pencil.len()]);
        assert!(k1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dilation_mode_is_the_ground_state_above_moment_threshold() {
        for (p, n) in [(1.75, 3), (1.8, 4)] {
            let pr = params(p, n);
            let exact = dilation_quotient(&pr);
            // The quotient of the dilation mode, in closed form.
            let closed = 4.0 * (p - 1.0) / (p * (2.0 - p) * pr.beta());
            assert!((exact / closed - 1.0).abs() < 1e-8, "{exact} vs {closed}");
            let est = solve(&SpectralProblem::new(pr, HpKind::Optimal, 2048, 1e4).unwrap()).unwrap();
            assert!((est.value / exact - 1.0).abs() < 1e-3, "({p},{n}): {} vs {exact}", est.value);
            assert!(est.residual < 1e-6, "{}", est.residual);
        }
    }

    #[test]
    fn refinement_lowers_estimates() {
        let pr = params(1.75, 3);
        let mut last = f64::INFINITY;
        for nodes in [128, 255, 509, 1017] {
            let v = hp_optimal_constant(&pr, nodes).unwrap();
            assert!(v <= last + 1e-10, "{v} after {last}");
            last = v;
        }
    }

    #[test]
    fn common_weight_scaling_is_invisible() {
        let pr = params(1.7, 4);
        let pencil = SpectralProblem::new(pr, HpKind::Optimal, 256, 1e3).unwrap().assemble();
        let scaled = Pencil {
            k_diag: pencil.k_diag.iter().map(|v| 3.5 * v).collect(),
            k_off: pencil.k_off.iter().map(|v| 3.5 * v).collect(),
            m_diag: pencil.m_diag.iter().map(|v| 3.5 * v).collect(),
            m_off: pencil.m_off.iter().map(|v| 3.5 * v).collect(),
        };
        let (a, b) = (pencil.eigenvalue(1).unwrap(), scaled.eigenvalue(1).unwrap());
        assert!((a / b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn essential_spectrum_is_approached_from_above() {
        let pr = params(1.6, 3);
        let ess = lambda_opt_essential(&pr);
        let study = domain_study(&pr, 1024, &[1e2, 1e3, 1e4]).unwrap();
        assert_eq!(study.label, StudyLabel::EssentialSpectrumEstimate);
        assert!(study.values.windows(2).all(|w| w[1] < w[0]));
        assert!(study.values.iter().all(|&v| v > ess));
        assert!((study.estimate / ess - 1.0).abs() < 0.1, "{} vs {ess}", study.estimate);
    }

    #[test]
    fn general_check_on_constants_and_bumps() {
        let pr = params(1.75, 3);
        let tests = vec![
            TestFunction::Samples { r: vec![0.0, 1.0], values: vec![2.0, 2.0] },
            TestFunction::Bump { center: 1.0, width: 0.5, amplitude: 1.0 },
            TestFunction::Bump { center: 0.2, width: 0.2, amplitude: -3.0 },
        ];
        let rep = hp_general_check(&pr, &tests).unwrap();
        assert_eq!(rep.ratios[0], 0.0);
        assert!(rep.ratios[1..].iter().all(|r| r.is_finite() && *r > 0.0));
        assert!(hp_general_check(&params(1.5, 8), &tests).is_err());
    }

    #[test]
    fn general_ground_state_reinserted() {
        let pr = params(1.75, 3);
        let est = solve(&SpectralProblem::with_s_min(pr, HpKind::General, 2048, 1e3, 1e-3).unwrap()).unwrap();
        let t = TestFunction::Samples { r: est.grid.clone(), values: est.eigenvector.clone() };
        let rep = hp_general_check(&pr, &[t]).unwrap();
        assert!((rep.ratios[0] * est.value - 1.0).abs() < 1e-2, "{} vs {}", rep.ratios[0], 1.0 / est.value);
    }

    #[test]
    fn quotient_rejects_the_profile_itself() {
        let pr = params(1.75, 3);
        let g = RadialGrid::log_spaced(1e-3, 1e2, 256).unwrap();
        let v = RadialGridFunction::from_fn(g, crate::grid::Frame::SelfSimilar { tau: 0.0 }, pr, |r| {
            profiles::eval_vd(1.0, r, &pr).0
        })
        .unwrap();
        assert!(rayleigh_quotient(&v, 1.0).is_err());
    }
}
