//! Conservative radial finite-volume solvers for
//!
//! * the p-Laplace evolution `u_t = r^{1-N} (r^{N-1} |u_r|^{p-2} u_r)_r`,
//! * its self-similar form `v_tau = r^{1-N} (r^{N-1} (|v_r|^{p-2} v_r + r v))_r`,
//! * the weighted fast diffusion `phi_t = rho^{1-n} (rho^{n-1} (phi^m)_rho)_rho`
//!   and its rescaled form with the extra drift `+ rho phi` inside the flux.
//!
//! Unknowns live at the grid nodes. Node `i` owns the shell between the
//! face midpoints `r_{i-1/2}` and `r_{i+1/2}`; the outermost face sits
//! halfway to a ghost node `r_{K+1} = r_K^2 / r_{K-1}`. The discrete mass
//! `sum_i vol_i u_i` changes only through the outer face.
//!
//! Time stepping is implicit: variable-step BDF2 (backward Euler for the
//! first step), each step solved by Newton's method with a tridiagonal
//! Jacobian in relative (column-scaled) form, so tails many decades below
//! the peak are resolved to the same relative accuracy as the core.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Params;
use crate::grid::{Frame, RadialGridFunction};
use crate::profiles::{self, BarenblattSpec, FdeBarenblatt};

/// Smallest regularization ever used; keeps the flux derivative finite
/// where the gradient vanishes identically.
const EPS_FLOOR: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    SemiImplicit,
    /// Forward Euler on the same operator; for cross-checks at tiny steps.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Zero flux at the origin; at the far end a ghost node continues the
    /// solution with the shape of the reference profile.
    NeumannOriginFarFieldProfileMatch,
    /// Zero flux at the origin; the ghost node takes the reference value.
    /// Pins the tail amplitude, which the shape match leaves free.
    NeumannOriginFarFieldProfileValue,
    NeumannOriginZeroFlux,
}

impl Boundary {
    /// How functionals of a snapshot should treat the region past the grid.
    pub fn tail(&self) -> crate::functionals::Tail {
        match self {
            Boundary::NeumannOriginFarFieldProfileValue => crate::functionals::Tail::Truncate,
            _ => crate::functionals::Tail::PowerLaw,
        }
    }
}

/// Ghost value `u_{K+1} = ratio u_K + value`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ghost {
    ratio: f64,
    value: f64,
}

impl Ghost {
    fn scaled(ratio: f64) -> Self {
        Self { ratio, value: 0.0 }
    }

    fn at(&self, uk: f64) -> f64 {
        self.ratio * uk + self.value
    }
}

/// Discretization of the self-similar flux `Phi(v_r) + r v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FluxForm {
    /// Differences of `v` inside `Phi`, face averages for the drift.
    Standard,
    /// The same flux written as `v (Phi((v^{gamma-1})_r) - Phi((1-gamma) r^{1/(p-1)})) / Phi(gamma-1)`
    /// and differenced in `w = v^{gamma-1}`. Every `V_D` is then an exact
    /// discrete steady state, so long runs relax to a sampled `V_D`
    /// instead of to an `O(h^2)` neighbour of it. Needs positive data.
    WellBalanced,
}

/// Regularization of `Phi(s) = |s|^{p-2} s` as
/// `Phi_eps(s) = (s^2 + eps^2)^{(p-2)/2} s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    /// One `eps` on every face.
    Absolute(f64),
    /// `eps = eta |s_prev|` per face, with `s_prev` the face gradient at the
    /// start of the step. The flux is then perturbed by a relative
    /// `O(eta^2)` uniformly, including in tails where gradients are tiny.
    RelativeGradient(f64),
}

impl Regularization {
    /// `1e-8 (sup |u0'| + 1)`, an absolute regularization scaled to the datum.
    pub fn absolute_for(u0: &RadialGridFunction) -> Self {
        let g = u0.derivative().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        Regularization::Absolute(1e-8 * (g + 1.0))
    }
}

/// Closed-form profile evaluated at the solver's own time stamp: used for
/// the far-field shape and for the relative-error diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reference {
    /// `B(t + t_offset, r)` for a Barenblatt-type spec (original variables).
    Barenblatt { spec: BarenblattSpec, t_offset: f64 },
    /// `V_D(r)` (self-similar variables).
    Stationary { params: Params, d: f64 },
    /// Weighted Barenblatt of mass `mass` at `t + t_offset`.
    Fde { m: f64, n: f64, dim: u32, mass: f64, t_offset: f64 },
    /// `U_D(rho)` for the rescaled weighted equation.
    FdeStationary { m: f64, d: f64 },
    /// Extinguishing weighted profile.
    FdePseudo { m: f64, n: f64, d: f64, t_ext: f64 },
}

impl Reference {
    /// Returns a closure `r -> value` at time `t`.
    fn at(&self, t: f64) -> Result<Box<dyn Fn(f64) -> f64>> {
        Ok(match *self {
            Reference::Barenblatt { spec, t_offset } => {
                let s = spec.scale(t + t_offset)?;
                let n = spec.params.n();
                let d = spec.d();
                let params = spec.params;
                Box::new(move |r| profiles::eval_vd(d, r / s, &params).0 * s.powf(-n))
            }
            Reference::Stationary { params, d } => Box::new(move |r| profiles::eval_vd(d, r, &params).0),
            Reference::Fde { m, n, dim, mass, t_offset } => {
                let b = FdeBarenblatt::new(m, n, dim, mass)?;
                let tt = t + t_offset;
                Box::new(move |r| b.eval(tt, r))
            }
            Reference::FdeStationary { m, d } => Box::new(move |r| profiles::fde_stationary(m, d, r)),
            Reference::FdePseudo { m, n, d, t_ext } => {
                profiles::fde_pseudo_barenblatt(m, n, d, t_ext, t, 0.0)?;
                Box::new(move |r| profiles::fde_pseudo_barenblatt(m, n, d, t_ext, t, r).unwrap_or(0.0))
            }
        })
    }

    /// Extinction time carried by the reference, if any.
    pub fn extinction_time(&self) -> Option<f64> {
        match *self {
            Reference::Barenblatt { spec, t_offset } => match spec.kind {
                profiles::BarenblattKind::FreeParam { t_ext, .. } if spec.params.in_very_fast_range() => {
                    Some(t_ext - t_offset)
                }
                _ => None,
            },
            Reference::FdePseudo { t_ext, .. } => Some(t_ext),
            _ => None,
        }
    }

    /// `D` of the stationary profile, which the entropy diagnostics need.
    pub fn stationary_d(&self) -> Option<f64> {
        match *self {
            Reference::Stationary { d, .. } => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Time-step cap.
    pub dt: f64,
    pub regularization: Regularization,
    /// Only the self-similar p-Laplace flow has a well-balanced form.
    pub flux_form: FluxForm,
    pub tol_newton: f64,
    pub max_newton: usize,
    pub boundary: Boundary,
    /// Snapshot cadence in the frame's own time variable.
    pub snapshot_every: f64,
    /// Shape for the far field and target of the relative-error diagnostic.
    pub reference: Option<Reference>,
    /// Multiplies the flux nonlinearity (the `1/ell` of the critical case).
    pub diffusion_factor: f64,
    /// Compute entropy and Fisher information in the diagnostics.
    pub entropy_diagnostics: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::SemiImplicit,
            dt: 1e-2,
            regularization: Regularization::RelativeGradient(1e-3),
            flux_form: FluxForm::Standard,
            tol_newton: 1e-10,
            max_newton: 30,
            boundary: Boundary::NeumannOriginFarFieldProfileMatch,
            snapshot_every: 0.1,
            reference: None,
            diffusion_factor: 1.0,
            entropy_diagnostics: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.tol_newton > 0.0) {
            return bad("tol_newton must be positive");
        }
        if self.max_newton == 0 {
            return bad("max_newton must be at least 1");
        }
        if !(self.snapshot_every > 0.0) {
            return bad("snapshot_every must be positive");
        }
        if !(self.diffusion_factor > 0.0) {
            return bad("diffusion_factor must be positive");
        }
        match self.regularization {
            Regularization::Absolute(e) | Regularization::RelativeGradient(e) if !(e >= 0.0) => {
                bad("regularization must be nonnegative")
            }
            _ => Ok(()),
        }
    }
}

/// Per-snapshot diagnostics. Entropy and Fisher information are present
/// only when requested and defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub time: f64,
    /// `NaN` when the tail is not integrable.
    pub mass: f64,
    pub sup: f64,
    pub sup_derivative: f64,
    pub entropy: Option<f64>,
    pub fisher: Option<f64>,
    pub sup_rel_err: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub rejected_steps: usize,
    pub clipped_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<RadialGridFunction>,
    pub diagnostics: Vec<Diagnostics>,
    pub stats: SolverStats,
    /// Set when the run stopped early; the snapshots up to that point are kept.
    pub error: Option<Error>,
    /// Mass measure exponent `w` in `r^{N-1-w} dr`.
    pub weight_power: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.frame.time()).collect()
    }

    pub fn last(&self) -> &RadialGridFunction {
        self.snapshots.last().expect("trajectory holds the initial datum")
    }

    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Which flux the operator discretizes.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Flux {
    PLaplace { p: f64, kappa: f64 },
    /// `c` holds `Phi_eps` of the exact face difference of `V^{gamma-1}`.
    Balanced { p: f64, gamma: f64 },
    Porous { m: f64 },
}

struct Operator {
    flux: Flux,
    /// Drift coefficient: `1` in self-similar variables, else `0`.
    drift: f64,
    /// Nodes `0..=K` plus the ghost node.
    r: Vec<f64>,
    /// Face `j` sits between nodes `j` and `j+1` (`j = 0..=K`).
    face_r: Vec<f64>,
    face_area: Vec<f64>,
    vol: Vec<f64>,
    balance: Vec<f64>,
    zero_flux_far: bool,
}

/// `(Phi_eps(g), Phi_eps'(g))`.
fn phi_eps(g: f64, e: f64, p: f64) -> (f64, f64) {
    let s = g * g + e * e;
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let base = s.powf(0.5 * (p - 2.0));
    (base * g, base * ((p - 1.0) * g * g + e * e) / s)
}

impl Operator {
    fn new(r_nodes: &[f64], dim: f64, flux: Flux, drift: f64, boundary: Boundary) -> Self {
        let k = r_nodes.len() - 1;
        let mut r = r_nodes.to_vec();
        r.push(r[k] * r[k] / r[k - 1]);
        let face_r: Vec<f64> = (0..=k).map(|j| 0.5 * (r[j] + r[j + 1])).collect();
        let face_area: Vec<f64> = face_r.iter().map(|f| f.powf(dim - 1.0)).collect();
        let vol: Vec<f64> = (0..=k)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { face_r[i - 1] };
                (face_r[i].powf(dim) - lo.powf(dim)) / dim
            })
            .collect();
        // Exact face differences of `V^{gamma-1} = D + b r^{p'}`; independent of `D`.
        let balance = match flux {
            Flux::Balanced { p, .. } => {
                let b = (2.0 - p) / p;
                let pp = p / (p - 1.0);
                (0..=k).map(|j| b * (r[j + 1].powf(pp) - r[j].powf(pp)) / (r[j + 1] - r[j])).collect()
            }
            _ => Vec::new(),
        };
        Self {
            flux,
            drift,
            r,
            face_r,
            face_area,
            vol,
            balance,
            zero_flux_far: boundary == Boundary::NeumannOriginZeroFlux,
        }
    }

    fn len(&self) -> usize {
        self.vol.len()
    }

    /// Smallest face gradient that rounding in the differenced variable can
    /// represent. Below it a relative regularization would let `Phi'` blow
    /// up on differences that are pure rounding.
    fn resolution_floor(&self, u: &[f64], ghost: Ghost) -> Vec<f64> {
        let k = self.len() - 1;
        let scale = |x: f64| match self.flux {
            Flux::Balanced { gamma, .. } => x.powf(gamma - 1.0),
            _ => x,
        };
        (0..=k)
            .map(|j| {
                let right = if j == k { ghost.at(u[k]) } else { u[j + 1] };
                let big = scale(u[j]).abs().max(scale(right).abs());
                let f = 8.0 * f64::EPSILON * big / (self.r[j + 1] - self.r[j]);
                if f.is_finite() { f } else { 0.0 }
            })
            .collect()
    }

    /// Face gradients used to scale a relative regularization.
    fn regularization_gradients(&self, u: &[f64], ghost: Ghost) -> Vec<f64> {
        match self.flux {
            Flux::Balanced { .. } => self.balance.clone(),
            _ => self.gradients(u, ghost),
        }
    }

    /// Face gradients of `u` (the last one uses the ghost value `ratio u_K`).
    fn gradients(&self, u: &[f64], ghost: Ghost) -> Vec<f64> {
        let k = self.len() - 1;
        (0..=k)
            .map(|j| {
                let right = if j == k { ghost.at(u[k]) } else { u[j + 1] };
                (right - u[j]) / (self.r[j + 1] - self.r[j])
            })
            .collect()
    }

    /// `L(u)` and, when requested, its tridiagonal Jacobian
    /// `(lower, diag, upper)` with `lower[i] = dL_i/du_{i-1}`.
    fn apply(&self, u: &[f64], eps: &[f64], ghost: Ghost, jac: bool) -> (Vec<f64>, Option<[Vec<f64>; 3]>) {
        let k = self.len() - 1;
        // Face flux F_j and its partials a_j = dF_j/du_j, b_j = dF_j/du_{j+1}.
        let mut f = vec![0.0; k + 1];
        let mut a = vec![0.0; k + 1];
        let mut b = vec![0.0; k + 1];
        for j in 0..=k {
            if j == k && self.zero_flux_far {
                continue;
            }
            let h = self.r[j + 1] - self.r[j];
            let (ul, ur, dur_dul) = if j == k {
                (u[k], ghost.at(u[k]), ghost.ratio)
            } else {
                (u[j], u[j + 1], 0.0)
            };
            let (fj, dfl, dfr) = match self.flux {
                Flux::PLaplace { p, kappa } => {
                    let g = (ur - ul) / h;
                    let (phi, dphi) = phi_eps(g, eps[j], p);
                    let drift = self.drift * self.face_r[j];
                    (
                        kappa * phi + drift * 0.5 * (ul + ur),
                        -kappa * dphi / h + drift * 0.5,
                        kappa * dphi / h + drift * 0.5,
                    )
                }
                Flux::Balanced { p, gamma } => {
                    let e = gamma - 1.0;
                    let (wl, wr) = (ul.powf(e), ur.powf(e));
                    let (dwl, dwr) = (e * wl / ul, e * wr / ur);
                    let (phi, dphi) = phi_eps((wr - wl) / h, eps[j], p);
                    let c = phi_eps(self.balance[j], eps[j], p).0;
                    let scale = (1.0 - gamma).powf(p - 1.0);
                    let vbar = 0.5 * (ul + ur);
                    (
                        vbar * (c - phi) / scale,
                        (0.5 * (c - phi) + vbar * dphi * dwl / h) / scale,
                        (0.5 * (c - phi) - vbar * dphi * dwr / h) / scale,
                    )
                }
                Flux::Porous { m } => {
                    let w = |x: f64| if x > 0.0 { x.powf(m) } else { 0.0 };
                    let dw = |x: f64| if x > 0.0 { m * x.powf(m - 1.0) } else { 0.0 };
                    // Keep the derivative finite at vanishing values.
                    let cap = |d: f64| if d.is_finite() { d } else { 0.0 };
                    let drift = self.drift * self.face_r[j];
                    (
                        (w(ur) - w(ul)) / h + drift * 0.5 * (ul + ur),
                        -cap(dw(ul)) / h + drift * 0.5,
                        cap(dw(ur)) / h + drift * 0.5,
                    )
                }
            };
            f[j] = fj;
            if j == k {
                a[j] = dfl + dfr * dur_dul;
            } else {
                a[j] = dfl;
                b[j] = dfr;
            }
        }
        let mut l = vec![0.0; k + 1];
        for i in 0..=k {
            let out = self.face_area[i] * f[i];
            let inn = if i == 0 { 0.0 } else { self.face_area[i - 1] * f[i - 1] };
            l[i] = (out - inn) / self.vol[i];
        }
        if !jac {
            return (l, None);
        }
        let mut lower = vec![0.0; k + 1];
        let mut diag = vec![0.0; k + 1];
        let mut upper = vec![0.0; k + 1];
        for i in 0..=k {
            let v = self.vol[i];
            diag[i] = self.face_area[i] * a[i] / v;
            if i < k {
                upper[i] = self.face_area[i] * b[i] / v;
            }
            if i > 0 {
                lower[i] = -self.face_area[i - 1] * a[i - 1] / v;
                diag[i] -= self.face_area[i - 1] * b[i - 1] / v;
            }
        }
        (l, Some([lower, diag, upper]))
    }

    /// `sum_i vol_i u_i`, the quantity the scheme conserves.
    #[cfg(test)]
    fn discrete_mass(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.vol).map(|(a, b)| a * b).sum()
    }
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Domain("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Domain("singular tridiagonal system".into()));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Equation selector for the shared time stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Equation {
    Cple,
    Rcple,
    Wfde { m: f64, n: f64, rescaled: bool },
}

/// `u_t = div(|grad u|^{p-2} grad u)`, original variables, from the datum's
/// time stamp to `t_end`.
pub fn evolve_cple(u0: &RadialGridFunction, config: &SolverConfig, t_end: f64) -> Result<Trajectory> {
    if !matches!(u0.frame, Frame::Original { .. }) {
        return Err(Error::Frame("evolve_cple needs a datum in original variables".into()));
    }
    evolve(u0, Equation::Cple, config, t_end)
}

/// `v_tau = div(|grad v|^{p-2} grad v + y v)`, self-similar variables.
pub fn evolve_rcple(v0: &RadialGridFunction, config: &SolverConfig, tau_end: f64) -> Result<Trajectory> {
    if !matches!(v0.frame, Frame::SelfSimilar { .. }) {
        return Err(Error::Frame("evolve_rcple needs a datum in self-similar variables".into()));
    }
    evolve(v0, Equation::Rcple, config, tau_end)
}

/// Weighted fast diffusion in the measure `rho^{n-1} d rho`, optionally
/// rescaled (drift `+ rho phi`). `n` may be any real number above 2.
pub fn evolve_wfde(
    phi0: &RadialGridFunction,
    m: f64,
    n: f64,
    config: &SolverConfig,
    t_end: f64,
    rescaled: bool,
) -> Result<Trajectory> {
    if !(m > 0.0 && m < 1.0 && n > 2.0) {
        return Err(Error::InvalidParams(format!(
            "weighted fast diffusion needs 0 < m < 1 and n > 2, got m = {m}, n = {n}"
        )));
    }
    let want_ss = rescaled;
    if matches!(phi0.frame, Frame::SelfSimilar { .. }) != want_ss {
        return Err(Error::Frame(
            "rescaled runs need self-similar data; plain runs need original variables".into(),
        ));
    }
    evolve(phi0, Equation::Wfde { m, n, rescaled }, config, t_end)
}

fn evolve(u0: &RadialGridFunction, eq: Equation, config: &SolverConfig, t_end: f64) -> Result<Trajectory> {
    config.validate()?;
    let params = u0.params;
    let t0 = u0.frame.time();
    if !(t_end > t0) {
        return Err(Error::InvalidParams(format!(
            "end time {t_end} must exceed the datum's time stamp {t0}"
        )));
    }
    let (flux, drift, dim, weight_power) = match eq {
        Equation::Cple => (
            Flux::PLaplace { p: params.p, kappa: config.diffusion_factor },
            0.0,
            params.n(),
            0.0,
        ),
        Equation::Rcple => match config.flux_form {
            FluxForm::Standard => (
                Flux::PLaplace { p: params.p, kappa: config.diffusion_factor },
                1.0,
                params.n(),
                0.0,
            ),
            FluxForm::WellBalanced => {
                if config.diffusion_factor != 1.0 {
                    return Err(Error::Config(
                        "the well-balanced flux needs diffusion_factor = 1".into(),
                    ));
                }
                if u0.values.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidParams(
                        "the well-balanced flux needs strictly positive data".into(),
                    ));
                }
                (Flux::Balanced { p: params.p, gamma: params.gamma() }, 1.0, params.n(), 0.0)
            }
        },
        Equation::Wfde { m, n, rescaled } => {
            (Flux::Porous { m }, if rescaled { 1.0 } else { 0.0 }, n, params.n() - n)
        }
    };
    let op = Operator::new(u0.r(), dim, flux, drift, config.boundary);
    let t_ext = config.reference.and_then(|r| r.extinction_time());
    if let Some(te) = t_ext {
        if t_end >= te {
            return Err(Error::Domain(format!(
                "end time {t_end} is not before the extinction time {te}"
            )));
        }
    }
    let make = |values: Vec<f64>, t: f64| -> Result<RadialGridFunction> {
        let frame = match u0.frame {
            Frame::Original { .. } => Frame::Original { t },
            Frame::SelfSimilar { .. } => Frame::SelfSimilar { tau: t },
        };
        RadialGridFunction::new(u0.grid.clone(), values, frame, params)
    };

    let mut traj = Trajectory {
        snapshots: vec![u0.clone()],
        diagnostics: vec![diagnostics(u0, config, weight_power)],
        stats: SolverStats::default(),
        error: None,
        weight_power,
    };

    let sup0 = u0.sup();
    let mut u = u0.values.clone();
    let mut u_prev: Option<Vec<f64>> = None;
    let mut dt_prev = 0.0;
    let mut t = t0;
    let mut dt;
    let mut next_snap = t0 + config.snapshot_every;
    let span = t_end - t0;
    let tiny = 1e-12 * span.max(1.0);

    while t < t_end - tiny {
        let target = next_snap.min(t_end);
        // Step cap: config, growth limit, and extinction resolution.
        let mut dt_try = config.dt.min(if dt_prev > 0.0 { 2.0 * dt_prev } else { config.dt });
        if let Some(te) = t_ext {
            dt_try = dt_try.min(0.02 * (te - t));
        }
        let remaining = target - t;
        if remaining <= dt_try * (1.0 + 1e-9) {
            dt_try = remaining;
        } else if remaining < 2.0 * dt_try {
            dt_try = 0.5 * remaining;
        }
        dt = dt_try;

        let mut attempt = 0;
        let new_u = loop {
            let outcome = match config.scheme {
                Scheme::Explicit => explicit_step(&op, &u, t, dt, config),
                Scheme::SemiImplicit => {
                    implicit_step(&op, &u, u_prev.as_deref(), dt, dt_prev, t, config, &mut traj.stats)
                }
            };
            match outcome {
                Ok(v) => break Ok(v),
                Err(e) => {
                    attempt += 1;
                    traj.stats.rejected_steps += 1;
                    if attempt > 12 || config.scheme == Scheme::Explicit {
                        break Err(e);
                    }
                    dt *= 0.5;
                }
            }
        };
        let mut new_u = match new_u {
            Ok(v) => v,
            Err(e) => {
                traj.error = Some(e);
                return Ok(traj);
            }
        };
        // Undershoots below rounding level are clipped to zero; anything
        // larger is a scheme failure.
        let sup_now = new_u.iter().cloned().fold(0.0, f64::max).max(sup0 * 1e-300);
        let mut min_val: f64 = 0.0;
        for x in new_u.iter_mut() {
            if *x < 0.0 {
                min_val = min_val.min(*x);
                if *x >= -1e-12 * sup_now {
                    *x = 0.0;
                    traj.stats.clipped_nodes += 1;
                }
            }
        }
        if min_val < -1e-12 * sup_now {
            traj.error = Some(Error::Negativity { time: t + dt, min: min_val });
            return Ok(traj);
        }
        traj.stats.steps += 1;
        u_prev = Some(std::mem::replace(&mut u, new_u));
        dt_prev = dt;
        t += dt;
        if (t - target).abs() <= tiny || t >= target {
            t = target;
            let snap = make(u.clone(), t)?;
            traj.diagnostics.push(diagnostics(&snap, config, weight_power));
            traj.snapshots.push(snap);
            next_snap += config.snapshot_every;
        }
    }
    Ok(traj)
}

/// Ghost node for the far field at time `t`: the reference shape ratio
/// `S(r_{K+1}) / S(r_K)`, or the reference value itself when the boundary
/// pins it.
fn ghost_node(op: &Operator, config: &SolverConfig, t: f64, u: &[f64]) -> Result<Ghost> {
    let k = op.len() - 1;
    if let Some(reference) = &config.reference {
        let s = reference.at(t)?;
        let (a, b) = (s(op.r[k]), s(op.r[k + 1]));
        if config.boundary == Boundary::NeumannOriginFarFieldProfileValue && b.is_finite() {
            return Ok(Ghost { ratio: 0.0, value: b });
        }
        if a > 0.0 && b.is_finite() {
            return Ok(Ghost::scaled(b / a));
        }
    }
    // No reference: continue the last two nodes as a power law.
    if u[k] > 0.0 && u[k - 1] > 0.0 {
        let slope = (u[k] / u[k - 1]).ln() / (op.r[k] / op.r[k - 1]).ln();
        return Ok(Ghost::scaled((op.r[k + 1] / op.r[k]).powf(slope)));
    }
    Ok(Ghost::scaled(0.0))
}

fn face_eps(op: &Operator, u: &[f64], ghost: Ghost, config: &SolverConfig) -> Vec<f64> {
    match config.regularization {
        Regularization::Absolute(e) => vec![e.max(EPS_FLOOR); op.len()],
        Regularization::RelativeGradient(eta) => {
            let grads = op.regularization_gradients(u, ghost);
            let floor = op.resolution_floor(u, ghost);
            grads
                .iter()
                .zip(&floor)
                .map(|(g, f)| (eta * g.abs()).max(*f).max(EPS_FLOOR))
                .collect()
        }
    }
}

fn explicit_step(op: &Operator, u: &[f64], t: f64, dt: f64, config: &SolverConfig) -> Result<Vec<f64>> {
    let ghost = ghost_node(op, config, t, u)?;
    let eps = face_eps(op, u, ghost, config);
    let (l, _) = op.apply(u, &eps, ghost, false);
    Ok(u.iter().zip(&l).map(|(a, b)| a + dt * b).collect())
}

#[allow(clippy::too_many_arguments)]
fn implicit_step(
    op: &Operator,
    u: &[f64],
    u_prev: Option<&[f64]>,
    dt: f64,
    dt_prev: f64,
    t: f64,
    config: &SolverConfig,
    stats: &mut SolverStats,
) -> Result<Vec<f64>> {
    let t_new = t + dt;
    let n = u.len();
    // BDF2 with step ratio w: c0 u^{n+1} - c1 u^n + c2 u^{n-1} = dt L(u^{n+1}).
    let (c0, c1, c2) = match u_prev {
        Some(_) if dt_prev > 0.0 => {
            let w = dt / dt_prev;
            ((1.0 + 2.0 * w) / (1.0 + w), 1.0 + w, w * w / (1.0 + w))
        }
        _ => (1.0, 1.0, 0.0),
    };
    let known: Vec<f64> = match u_prev {
        Some(up) if c2 != 0.0 => u.iter().zip(up).map(|(a, b)| c1 * a - c2 * b).collect(),
        _ => u.to_vec(),
    };
    let ghost = ghost_node(op, config, t_new, u)?;
    let eps = face_eps(op, u, ghost, config);
    let sup = u.iter().cloned().fold(0.0, f64::max);
    let floor = (sup * 1e-280).max(1e-300);

    let mut x = u.to_vec();
    let mut last = f64::INFINITY;
    for _ in 0..config.max_newton {
        stats.newton_iterations += 1;
        let (l, jac) = op.apply(&x, &eps, ghost, true);
        let [lower, diag, upper] = jac.expect("jacobian requested");
        // Column scaling by the node values gives relative updates.
        let s: Vec<f64> = x.iter().map(|v| v.abs().max(floor)).collect();
        let mut jl = vec![0.0; n];
        let mut jd = vec![0.0; n];
        let mut ju = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = -(c0 * x[i] - known[i] - dt * l[i]);
            jd[i] = (c0 - dt * diag[i]) * s[i];
            if i > 0 {
                jl[i] = -dt * lower[i] * s[i - 1];
            }
            if i + 1 < n {
                ju[i] = -dt * upper[i] * s[i + 1];
            }
        }
        let eta = solve_tridiagonal(&jl, &jd, &ju, &rhs)?;
        let mut change: f64 = 0.0;
        for i in 0..n {
            // Per-node limiter: at most halve a value in one iteration.
            let step = eta[i].max(-0.5) * s[i];
            x[i] += step;
            change = change.max((step / s[i]).abs());
        }
        if !change.is_finite() {
            break;
        }
        if change <= config.tol_newton {
            return Ok(x);
        }
        last = change;
    }
    Err(Error::Newton {
        time: t_new,
        residual: last,
    })
}

/// Diagnostics of one snapshot.
pub fn diagnostics(f: &RadialGridFunction, config: &SolverConfig, weight_power: f64) -> Diagnostics {
    let time = f.frame.time();
    let mass = profiles::mass(f, weight_power).unwrap_or(f64::NAN);
    let sup = f.sup();
    let sup_derivative = f.derivative().iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let sup_rel_err = config.reference.and_then(|r| {
        let s = r.at(time).ok()?;
        Some(sup_relative_error(f.r(), &f.values, &*s))
    });
    let (mut entropy, mut fisher) = (None, None);
    if config.entropy_diagnostics && f.params.entropy_defined() && weight_power == 0.0 {
        if let Some(d) = config.reference.and_then(|r| r.stationary_d()) {
            let tail = config.boundary.tail();
            entropy = crate::functionals::entropy_with(f, d, tail).ok();
            fisher = crate::functionals::fisher_with(f, d, tail).ok();
        }
    }
    Diagnostics {
        time,
        mass,
        sup,
        sup_derivative,
        entropy,
        fisher,
        sup_rel_err,
    }
}

/// `max_i |f_i - s(r_i)| / s(r_i)` over nodes where the reference is positive.
pub fn sup_relative_error(r: &[f64], f: &[f64], s: &dyn Fn(f64) -> f64) -> f64 {
    r.iter()
        .zip(f)
        .filter_map(|(&x, &v)| {
            let w = s(x);
            (w > 0.0).then(|| ((v - w) / w).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// `max_t max_r (low - high)_+`.
    pub max_violation: f64,
    /// The same, divided by `sup high` at that time.
    pub max_relative_violation: f64,
    pub snapshots: usize,
}

/// Evolves two ordered data with the same equation (chosen by the data's
/// frame: original variables run the p-Laplace flow, self-similar ones the
/// rescaled flow) and reports the worst ordering violation.
pub fn comparison_probe(
    low: &RadialGridFunction,
    high: &RadialGridFunction,
    config: &SolverConfig,
    t_end: f64,
) -> Result<ComparisonReport> {
    if low.grid != high.grid || low.frame != high.frame {
        return Err(Error::Frame("comparison data must share grid and frame".into()));
    }
    if low.values.iter().zip(&high.values).any(|(a, b)| a > b) {
        return Err(Error::InvalidParams("comparison data must be ordered nodewise".into()));
    }
    let run = |u: &RadialGridFunction| match u.frame {
        Frame::Original { .. } => evolve_cple(u, config, t_end),
        Frame::SelfSimilar { .. } => evolve_rcple(u, config, t_end),
    };
    let a = run(low)?.into_result()?;
    let b = run(high)?.into_result()?;
    let mut worst: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        let v = x.values.iter().zip(&y.values).map(|(p, q)| (p - q).max(0.0)).fold(0.0, f64::max);
        worst = worst.max(v);
        let s = y.sup();
        if s > 0.0 {
            worst_rel = worst_rel.max(v / s);
        }
    }
    Ok(ComparisonReport {
        max_violation: worst,
        max_relative_violation: worst_rel,
        snapshots: a.snapshots.len().min(b.snapshots.len()),
    })
}
