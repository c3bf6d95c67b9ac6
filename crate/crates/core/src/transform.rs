//! Radial correspondence between decreasing p-Laplace solutions and
//! weighted fast-diffusion solutions:
//!
//! `-u_r(t, r) = D rho^{2/p} Phi(t, rho)`, `r = rho^{2m/p}`, `m = p - 1`,
//!
//! where `Phi` solves `Phi_t = rho^{1-n} (rho^{n-1} (Phi^m)')'` in the
//! artificial dimension `n = 2 + 2N(p-1)/p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Params;
use crate::grid::{interpolate_log, RadialGrid, RadialGridFunction};
use crate::profiles::{self, BarenblattKind, BarenblattSpec};
use crate::quad;
use crate::solver::{self, Boundary, Reference, SolverConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConstants {
    pub m: f64,
    pub n: f64,
    pub frak_a: f64,
    /// `(2m/(m+1))^{2/(m-1)}`.
    pub d_const: f64,
    /// Mass factor of the fundamental-solution correspondence, `pN/(2(p-1) D)`.
    pub frak_c: f64,
    /// `D`-factor of the extinguishing correspondence, `((m+1)/(2m))^{2 theta + 1}`;
    /// `NaN` at the critical exponent where `theta` is infinite.
    pub frak_c_bar: f64,
}

impl TransformConstants {
    pub fn new(params: &Params) -> Self {
        let m = params.fde_m();
        let n = params.fde_n();
        let d_const = (2.0 * m / (m + 1.0)).powf(2.0 / (m - 1.0));
        let theta = params.theta();
        let frak_c_bar = if theta.is_finite() {
            ((m + 1.0) / (2.0 * m)).powf(2.0 * theta + 1.0)
        } else {
            f64::NAN
        };
        Self {
            m,
            n,
            frak_a: params.frak_a(),
            d_const,
            frak_c: params.p * params.n() / (2.0 * (params.p - 1.0) * d_const),
            frak_c_bar,
        }
    }

    /// Exponent `(m+1)/(2m)` of the induced grid `rho = r^{(m+1)/(2m)}`.
    pub fn rho_power(&self) -> f64 {
        (self.m + 1.0) / (2.0 * self.m)
    }
}

/// Inverse of the parameter map: `(m, n) -> (p, N)`, with `N` real.
pub fn params_from_fde(m: f64, n: f64) -> (f64, f64) {
    (m + 1.0, (n - 2.0) * (m + 1.0) / (2.0 * m))
}

/// Which hypothesis set of the correspondence covers `(p, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coverage {
    /// `p_c < p < 2`, data with a Barenblatt-type derivative tail.
    GoodRange,
    /// Very fast range with the derivative sandwiched between two
    /// extinguishing profiles.
    DerivativeSandwich,
    /// As above, and the data must also differ from one extinguishing
    /// profile by an integrable amount (`N > 6`, `p_Y <= p <= p_2`).
    DerivativeSandwichIntegrableDifference,
    Unsupported,
}

impl Coverage {
    pub fn of(params: &Params) -> Self {
        let e = params.exponents();
        let p = params.p;
        let dim = params.dim;
        if params.in_good_range() {
            return Coverage::GoodRange;
        }
        // p = p_c belongs to the sandwich case; p_Y is the lower end.
        let above_y = p >= e.p_y - 1e-15 && p > 1.0;
        match (dim, e.p_2) {
            (2, _) => Coverage::DerivativeSandwich,
            (3..=6, _) if above_y => Coverage::DerivativeSandwich,
            (d, Some(p2)) if d > 6 && p > p2 => Coverage::DerivativeSandwich,
            (d, Some(_)) if d > 6 && above_y => Coverage::DerivativeSandwichIntegrableDifference,
            _ => Coverage::Unsupported,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Coverage::GoodRange => "covered: good range",
            Coverage::DerivativeSandwich => "covered: derivative sandwich",
            Coverage::DerivativeSandwichIntegrableDifference => {
                "covered: derivative sandwich with integrable difference"
            }
            Coverage::Unsupported => "unsupported by the correspondence theorem",
        }
    }
}

/// `Phi(rho) = -u_r(rho^{2m/(m+1)}) / (D rho^{2/(m+1)})` on the induced
/// grid.
///
/// Near the origin `u - u(0)` is tiny and differencing it loses most
/// digits. Nodes there whose estimated rounding error exceeds `1e-7`
/// relative, and the origin itself, take the even quadratic fit through
/// the first three well-conditioned nodes.
pub fn u_to_phi(u: &RadialGridFunction) -> Result<RadialGridFunction> {
    let c = TransformConstants::new(&u.params);
    let mut du = u.derivative();
    let r = u.r();
    let n = r.len();
    // Rounding error of the five-point stencil at each node.
    let noise: Vec<f64> = (0..n)
        .map(|k| {
            if k == 0 {
                return f64::INFINITY;
            }
            let (lo, hi) = (k.saturating_sub(2), (k + 3).min(n));
            let local = u.values[lo..hi].iter().fold(0.0f64, |a, b| a.max(b.abs()));
            64.0 * f64::EPSILON * local / (r[(k + 1).min(n - 1)] - r[k - 1])
        })
        .collect();
    for (g, e) in du.iter_mut().zip(&noise).skip(1) {
        if g.abs() <= *e {
            *g = 0.0;
        }
    }
    let scale = du.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some((k, g)) = du.iter().enumerate().find(|(_, g)| **g > 1e-9 * scale) {
        return Err(Error::Domain(format!(
            "input is not radially nonincreasing: u_r = {g:e} at r = {}",
            r[k]
        )));
    }
    let grid = u.grid.powered(c.rho_power());
    let rho = &grid.r;
    let q = 2.0 / (c.m + 1.0);
    let mut phi: Vec<f64> = du.iter().zip(rho).map(|(&g, &x)| (-g).max(0.0) / (c.d_const * x.powf(q))).collect();
    let first = (1..n)
        .find(|&k| du[k] != 0.0 && noise[k] <= 1e-7 * du[k].abs())
        .unwrap_or(1)
        .min(n - 3);
    let (a, b) = even_quadratic(&rho[first..first + 3], &phi[first..first + 3]);
    for k in 0..first {
        phi[k] = (a + b * rho[k] * rho[k]).max(0.0);
    }
    RadialGridFunction::new(grid, phi, u.frame, u.params)
}

/// Least-squares `(a, b)` of `a + b x^2`.
fn even_quadratic(x: &[f64], y: &[f64]) -> (f64, f64) {
    let s: Vec<f64> = x.iter().map(|v| v * v).collect();
    let n = s.len() as f64;
    let (ms, my) = (s.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = s.iter().zip(y).map(|(a, b)| (a - ms) * (b - my)).sum();
    let sxx: f64 = s.iter().map(|a| (a - ms) * (a - ms)).sum();
    let b = sxy / sxx;
    (my - b * ms, b)
}

/// `u(r) = D (2m/p) int_rho^inf Phi(s) s ds` on the grid `r = rho^{2m/p}`:
/// the inverse of [`u_to_phi`], with the beyond-grid tail completed by the
/// majorant `Phi ~ rho^{-2/(2-p)}`.
pub fn phi_to_u(phi: &RadialGridFunction) -> Result<RadialGridFunction> {
    let c = TransformConstants::new(&phi.params);
    let p = phi.params.p;
    let rho = phi.r();
    let k = rho.len();
    if phi.values.iter().all(|&x| x == 0.0) {
        let grid = phi.grid.powered(1.0 / c.rho_power());
        return RadialGridFunction::new(grid, vec![0.0; k], phi.frame, phi.params);
    }
    // int Phi s ds needs Phi to decay faster than s^{-2}.
    if let Some(power) = profiles::tail_power(rho, &phi.values) {
        if power >= -2.0 {
            return Err(Error::NonIntegrableTail {
                power,
                threshold: -2.0,
            });
        }
    }
    let decay = 2.0 / (2.0 - p);
    // Integrate in ln(rho): int Phi s^2 d(ln s).
    let x: Vec<f64> = rho[1..].iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = rho[1..].iter().zip(&phi.values[1..]).map(|(s, v)| v * s * s).collect();
    let cum = quad::cumulative_samples(&x, &y);
    let total = cum[cum.len() - 1];
    let tail = phi.values[k - 1] * rho[k - 1] * rho[k - 1] / (decay - 2.0);
    let factor = c.d_const * 2.0 * c.m / p;
    let mut u = vec![0.0; k];
    for j in 1..k {
        u[j] = factor * (total - cum[j - 1] + tail);
    }
    // Origin: add int_0^{rho_1} Phi s ds with Phi ~ Phi(0).
    let first = 0.25 * (phi.values[0] + phi.values[1]) * rho[1] * rho[1];
    u[0] = u[1] + factor * first;
    let grid = phi.grid.powered(1.0 / c.rho_power());
    RadialGridFunction::new(grid, u, phi.frame, phi.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub times: Vec<f64>,
    /// Sup relative gap between the transformed p-Laplace snapshot and the
    /// weighted solution, over nodes where the latter is positive.
    pub discrepancy: Vec<f64>,
    pub coverage: Coverage,
    pub label: String,
}

impl EquivalenceReport {
    pub fn max(&self) -> f64 {
        self.discrepancy.iter().cloned().fold(0.0, f64::max)
    }
}

/// Per-snapshot discrepancy between `u_to_phi(u(t))` and `Phi(t)`. The
/// weighted snapshot is interpolated onto the induced grid where the two
/// grids differ; only the overlap of the two grids is compared.
pub fn equivalence_residual(u_traj: &Trajectory, phi_traj: &Trajectory) -> Result<EquivalenceReport> {
    let (tu, tp) = (u_traj.times(), phi_traj.times());
    if tu.len() != tp.len() || tu.iter().zip(&tp).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0)) {
        return Err(Error::Domain(format!(
            "trajectories do not share time stamps ({} vs {} snapshots)",
            tu.len(),
            tp.len()
        )));
    }
    let params = u_traj.snapshots[0].params;
    let mut discrepancy = Vec::with_capacity(tu.len());
    for (u, phi) in u_traj.snapshots.iter().zip(&phi_traj.snapshots) {
        let mapped = u_to_phi(u)?;
        let same_grid = mapped.grid.r.len() == phi.grid.r.len()
            && mapped.grid.r.iter().zip(&phi.grid.r).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs());
        let hi = phi.grid.r_max().min(mapped.grid.r_max());
        let mut worst: f64 = 0.0;
        for (j, (&x, &a)) in mapped.grid.r.iter().zip(&mapped.values).enumerate() {
            if x > hi {
                break;
            }
            let b = if same_grid { phi.values[j] } else { interpolate_log(phi.r(), &phi.values, x) };
            if b > 0.0 {
                worst = worst.max(((a - b) / b).abs());
            } else if a != 0.0 {
                worst = f64::INFINITY;
            }
        }
        discrepancy.push(worst);
    }
    let coverage = Coverage::of(&params);
    Ok(EquivalenceReport {
        times: tu,
        discrepancy,
        coverage,
        label: coverage.label().to_string(),
    })
}

/// Max relative gap of the closed-form correspondence between the
/// fundamental solutions on a `(t, r)` sample: `-d_r B_M(t, r)` against
/// `D rho^{2/p} B^w_{cM}(t, rho)`.
pub fn barenblatt_correspondence_gap(params: &Params, mass: f64, times: &[f64], radii: &[f64]) -> Result<f64> {
    let c = TransformConstants::new(params);
    let spec = BarenblattSpec::new(*params, BarenblattKind::MassParam { mass })?;
    let weighted = profiles::FdeBarenblatt::new(c.m, c.n, params.dim, c.frak_c * mass)?;
    let mut worst: f64 = 0.0;
    for &t in times {
        for &r in radii {
            let lhs = -spec.eval_with_derivative(t, r)?.1;
            let rho = r.powf(c.rho_power());
            let rhs = c.d_const * rho.powf(2.0 / params.p) * weighted.eval(t, rho);
            worst = worst.max((lhs / rhs - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Same for the extinguishing profiles below `p_c`, with `D -> c_bar D`.
pub fn pseudo_correspondence_gap(params: &Params, d: f64, t_ext: f64, times: &[f64], radii: &[f64]) -> Result<f64> {
    let c = TransformConstants::new(params);
    let spec = BarenblattSpec::new(*params, BarenblattKind::FreeParam { d, t_ext })?;
    let mut worst: f64 = 0.0;
    for &t in times {
        for &r in radii {
            let lhs = -spec.eval_with_derivative(t, r)?.1;
            let rho = r.powf(c.rho_power());
            let w = profiles::fde_pseudo_barenblatt(c.m, c.n, c.frak_c_bar * d, t_ext, t, rho)?;
            worst = worst.max((lhs / (c.d_const * rho.powf(2.0 / params.p) * w) - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Initial datum of a dual-solver run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DualDatum {
    /// Closed-form profile on both sides: the fundamental solution started
    /// at `t = 1` in the good range, the extinguishing one (`D = 1`,
    /// `T = 2`) otherwise.
    Barenblatt,
    /// `u_0` whose derivative is the average of the derivatives of two
    /// closed-form profiles (`D = 0.8` and `D = 1.25`, same time scale).
    Sandwich,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSetup {
    pub r_min: f64,
    pub r_max: f64,
    pub nodes: usize,
    pub dt: f64,
    /// Length of the run.
    pub duration: f64,
    pub snapshots: usize,
}

impl Default for DualSetup {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: 1e2,
            nodes: 256,
            dt: 4e-3,
            duration: 0.5,
            snapshots: 5,
        }
    }
}

impl DualSetup {
    /// Halved log spacing and time step.
    pub fn halved(&self) -> Self {
        Self {
            nodes: 2 * self.nodes - 1,
            dt: 0.5 * self.dt,
            ..*self
        }
    }

    /// Logarithmic spacing of the `r` grid.
    pub fn h(&self) -> f64 {
        (self.r_max / self.r_min).ln() / (self.nodes - 1) as f64
    }
}

/// The two closed-form references (p-Laplace side, weighted side) and the
/// start time, for a pair of profile parameters.
fn references(params: &Params, d_or_mass: f64) -> Result<(Reference, Reference, f64)> {
    let c = TransformConstants::new(params);
    if params.in_good_range() {
        let t0 = 1.0;
        let spec = BarenblattSpec::new(*params, BarenblattKind::MassParam { mass: d_or_mass })?;
        Ok((
            Reference::Barenblatt { spec, t_offset: 0.0 },
            Reference::Fde { m: c.m, n: c.n, dim: params.dim, mass: c.frak_c * d_or_mass, t_offset: 0.0 },
            t0,
        ))
    } else if params.is_critical() {
        Err(Error::Regime {
            op: "dual-solver run",
            needed: "p != p_c",
            p: params.p,
            dim: params.dim,
        })
    } else {
        let t_ext = 2.0;
        let spec = BarenblattSpec::new(*params, BarenblattKind::FreeParam { d: d_or_mass, t_ext })?;
        Ok((
            Reference::Barenblatt { spec, t_offset: 0.0 },
            Reference::FdePseudo { m: c.m, n: c.n, d: c.frak_c_bar * d_or_mass, t_ext },
            0.0,
        ))
    }
}

/// Runs the p-Laplace flow and the weighted flow from corresponding data
/// and returns their discrepancy report.
pub fn dual_run(params: &Params, datum: DualDatum, setup: &DualSetup) -> Result<EquivalenceReport> {
    let c = TransformConstants::new(params);
    let grid = RadialGrid::log_spaced(setup.r_min, setup.r_max, setup.nodes)?;
    let (u_ref, phi_ref, t0) = references(params, 1.0)?;
    let u0 = match datum {
        DualDatum::Barenblatt => match u_ref {
            Reference::Barenblatt { spec, .. } => spec.sample(&grid, t0)?,
            _ => unreachable!("p-Laplace reference is a Barenblatt spec"),
        },
        DualDatum::Sandwich => sandwich_datum(params, &grid, t0, 0.8, 1.25)?,
    };
    let phi0 = u_to_phi(&u0)?;
    let every = setup.duration / setup.snapshots as f64;
    let base_cfg = SolverConfig {
        dt: setup.dt,
        boundary: Boundary::NeumannOriginFarFieldProfileValue,
        snapshot_every: every,
        ..Default::default()
    };
    let u_cfg = SolverConfig { reference: Some(u_ref), ..base_cfg.clone() };
    let phi_cfg = SolverConfig { reference: Some(phi_ref), ..base_cfg };
    let t_end = t0 + setup.duration;
    let u_traj = solver::evolve_cple(&u0, &u_cfg, t_end)?.into_result()?;
    let phi_traj = solver::evolve_wfde(&phi0, c.m, c.n, &phi_cfg, t_end, false)?.into_result()?;
    equivalence_residual(&u_traj, &phi_traj)
}

/// `u_0(r) = int_r^inf` of the averaged derivative of two closed-form
/// profiles, which for these profiles is the average of the profiles.
fn sandwich_datum(params: &Params, grid: &RadialGrid, t0: f64, d1: f64, d2: f64) -> Result<RadialGridFunction> {
    let pick = |d: f64| -> Result<RadialGridFunction> {
        if params.in_good_range() {
            // Use D directly through the mass it carries.
            let mass = profiles::vd_mass(params, d)?;
            BarenblattSpec::new(*params, BarenblattKind::MassParam { mass })?.sample(grid, t0)
        } else {
            BarenblattSpec::new(*params, BarenblattKind::FreeParam { d, t_ext: 2.0 })?.sample(grid, t0)
        }
    };
    let (a, b) = (pick(d1)?, pick(d2)?);
    let values = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    RadialGridFunction::new(grid.clone(), values, a.frame, *params)
}

/// One row of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub dt: f64,
    pub nodes: usize,
    pub discrepancy: f64,
}

/// Dual runs on successively halved `(h, dt)`.
pub fn refinement_study(
    params: &Params,
    datum: DualDatum,
    setup: &DualSetup,
    refinements: usize,
) -> Result<Vec<RefinementRow>> {
    let mut rows = Vec::with_capacity(refinements + 1);
    let mut s = *setup;
    for _ in 0..=refinements {
        let report = dual_run(params, datum, &s)?;
        rows.push(RefinementRow {
            h: s.h(),
            dt: s.dt,
            nodes: s.nodes,
            discrepancy: report.max(),
        });
        s = s.halved();
    }
    Ok(rows)
}
