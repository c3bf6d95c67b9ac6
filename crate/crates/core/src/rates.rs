//! Decay-rate extraction: least-squares fits of time series, the outer
//! cylinder thresholds of the relative-error argument, closed-form
//! shifted-Barenblatt families and rescaled runs that track the distance
//! to the selected stationary profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Params;
use crate::functionals::{self, Tail};
use crate::grid::{Frame, RadialGrid, RadialGridFunction};
use crate::profiles::{self, BarenblattKind, BarenblattSpec};
use crate::quad;
use crate::solver::{self, Boundary, FluxForm, Reference, SolverConfig, Trajectory};

/// Fits in `tau` skip the initial layer `tau < 1` unless told otherwise.
pub const INITIAL_LAYER: f64 = 1.0;

pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    /// `ln value` against time; the rate is minus the slope.
    ExpInTau,
    /// `ln value` against `ln time`; the rate is the slope itself.
    PowerInT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Points inside the window, the ones the fit used.
    pub series: Vec<(f64, f64)>,
    pub mode: FitMode,
    pub fitted_rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

/// Least-squares line through the series in the coordinates of `mode`.
///
/// Without a window, `ExpInTau` fits use `[INITIAL_LAYER, inf)` and
/// `PowerInT` fits use every point.
pub fn fit_rate(series: &[(f64, f64)], mode: FitMode, window: Option<(f64, f64)>) -> Result<RateFit> {
    let window = window.unwrap_or(match mode {
        FitMode::ExpInTau => (INITIAL_LAYER, f64::INFINITY),
        FitMode::PowerInT => (f64::NEG_INFINITY, f64::INFINITY),
    });
    if !(window.0 < window.1) {
        return Err(Error::Fit(format!("empty window [{}, {}]", window.0, window.1)));
    }
    let kept: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect();
    if kept.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points in window, need at least {MIN_FIT_POINTS}",
            kept.len()
        )));
    }
    if let Some(&(t, v)) = kept.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Fit(format!("value {v:e} at time {t} is not positive")));
    }
    if mode == FitMode::PowerInT {
        if let Some(&(t, _)) = kept.iter().find(|&&(t, _)| !(t > 0.0)) {
            return Err(Error::Fit(format!("power-law fit needs positive times, got {t}")));
        }
    }
    let xs: Vec<f64> = kept
        .iter()
        .map(|&(t, _)| if mode == FitMode::PowerInT { t.ln() } else { t })
        .collect();
    let ys: Vec<f64> = kept.iter().map(|&(_, v)| v.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    let fitted_rate = match mode {
        FitMode::ExpInTau => -slope,
        FitMode::PowerInT => slope,
    };
    Ok(RateFit {
        series: kept,
        mode,
        fitted_rate,
        intercept,
        r_squared,
        window,
    })
}

/// `(slope, intercept, r^2)`; an exactly flat response has `r^2 = 1`.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2)
}

// ---------------------------------------------------------------------------
// Outer cylinders.

/// Barenblatt brackets `B_{M1}(t - tau1) <= u(t) <= B_{M2}(t + tau2)` for
/// `t >= 1`, read off the data that bound a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhpBrackets {
    pub m1: f64,
    pub tau1: f64,
    pub m2: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderThresholds {
    pub eps: f64,
    /// `u >= (1 - eps) B_M` for `|x| >= rho_under t^beta`, `t > t_under`.
    pub rho_under: f64,
    /// `u <= (1 + eps) B_M` for `|x| >= rho_over t^beta`, `t >= t_over`.
    pub rho_over: f64,
    pub t_under: f64,
    pub t_over: f64,
    /// `(b_2/b_1) M^{(2-p) beta p'}`.
    pub c: f64,
    /// `1 - (M1/M)^beta`, the bound on `eps` from below.
    pub eps_lower_bracket: f64,
    /// `(M2/M)^beta - 1`, the bound on `eps` from above.
    pub eps_upper_bracket: f64,
}

/// First time from which the brackets are assumed.
const BRACKET_START: f64 = 1.0;

pub fn cylinder_thresholds(
    eps: f64,
    mass: f64,
    brackets: &GhpBrackets,
    params: &Params,
) -> Result<CylinderThresholds> {
    if !params.in_good_range() {
        return Err(Error::Regime {
            op: "cylinder thresholds",
            needed: "p_c < p < 2",
            p: params.p,
            dim: params.dim,
        });
    }
    let GhpBrackets { m1, tau1, m2, tau2 } = *brackets;
    if !(mass > 0.0 && m1 > 0.0 && m1 < mass && m2 > mass) {
        return Err(Error::Domain(format!(
            "brackets need 0 < M1 < M < M2, got M1 = {m1}, M = {mass}, M2 = {m2}"
        )));
    }
    if !(tau1 >= 0.0 && tau2 >= 0.0) {
        return Err(Error::Domain(format!(
            "bracket shifts must be nonnegative, got {tau1}, {tau2}"
        )));
    }
    let p = params.p;
    let beta = params.beta();
    let pp = params.p_prime();
    let eps_lo = 1.0 - (m1 / mass).powf(beta);
    let eps_hi = (m2 / mass).powf(beta) - 1.0;
    let cap = eps_lo.min(eps_hi).min(1.0);
    if !(eps > 0.0 && eps < cap) {
        return Err(Error::Domain(format!("eps must lie in (0, {cap}), got {eps}")));
    }
    let c = profiles::b2(params)? / profiles::b1(params)? * mass.powf((2.0 - p) * beta * pp);
    let q = (2.0 - p) / (p - 1.0);
    let a = (1.0 - eps).powf(q);
    let b = (1.0 + eps).powf(q);

    let rho_under_pp = a * (1.0 + a) / (c * (1.0 - eps_lo).powf(q) * (1.0 - a));
    let rho_over_pp = (1.0 + b) / (c * (b - 1.0));

    // `t/(t - tau1) = (2/(1+a))^{p-1}` and `t/(t + tau2) = (2/(1+b))^{p-1}`.
    let k1 = (2.0 / (1.0 + a)).powf(p - 1.0);
    let k2 = (2.0 / (1.0 + b)).powf(p - 1.0);
    let t1 = k1 * tau1 / (k1 - 1.0);
    let t2 = k2 * tau2 / (1.0 - k2);
    let t_under = (tau1 / (1.0 - (1.0 - eps).powf(2.0 - p))).max(t1).max(BRACKET_START);
    let t_over = (tau2 / ((1.0 + eps).powf(2.0 - p) - 1.0)).max(t2).max(BRACKET_START);

    Ok(CylinderThresholds {
        eps,
        rho_under: rho_under_pp.powf(1.0 / pp),
        rho_over: rho_over_pp.powf(1.0 / pp),
        t_under,
        t_over,
        c,
        eps_lower_bracket: eps_lo,
        eps_upper_bracket: eps_hi,
    })
}

// ---------------------------------------------------------------------------
// Shifted Barenblatt families.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRates {
    /// Exponent of `sup |B(t+T)/B(t) - 1|`.
    pub time_shift: RateFit,
    /// Exponent of `sup |B(t, .+x0)/B(t, .) - 1|`.
    pub space_shift: RateFit,
    /// Exponent of `||B(t+T) - B(t)||_1`.
    pub time_shift_l1: RateFit,
}

const SHIFT_TIMES: usize = 32;
/// Samples of `|x| / t^beta` per decade.
const SHIFT_DENSITY: usize = 100;

/// Power-law exponents of the time- and space-shift errors of the
/// Barenblatt of mass `M`, on times where the shifts are small against
/// the self-similar scale.
pub fn shifted_barenblatt_rates(params: &Params, mass: f64, shift_t: f64, shift_x: f64) -> Result<ShiftRates> {
    if !(shift_t > 0.0 && shift_x > 0.0) {
        return Err(Error::Domain(format!(
            "zero shift gives identically zero error: T = {shift_t}, x0 = {shift_x}"
        )));
    }
    let spec = BarenblattSpec::new(*params, BarenblattKind::MassParam { mass })?;
    let beta = params.beta();
    let t_lo = 100.0 * shift_t.max(shift_x.powf(1.0 / beta)).max(1.0);
    let times: Vec<f64> = (0..SHIFT_TIMES)
        .map(|i| t_lo * 1e4f64.powf(i as f64 / (SHIFT_TIMES - 1) as f64))
        .collect();
    let sigma = log_samples(1e-4, 1e6);

    let mut rel_t = Vec::with_capacity(times.len());
    let mut rel_x = Vec::with_capacity(times.len());
    let mut l1 = Vec::with_capacity(times.len());
    for &t in &times {
        let scale = t.powf(beta);
        let mut worst_t: f64 = 0.0;
        let mut worst_x: f64 = 0.0;
        let mut r = Vec::with_capacity(sigma.len());
        let mut gap = Vec::with_capacity(sigma.len());
        for &s in &sigma {
            let x = s * scale;
            let b = spec.eval(t, x)?;
            let later = spec.eval(t + shift_t, x)?;
            worst_t = worst_t.max((later / b - 1.0).abs());
            // Points on the line through the shift direction, on both sides.
            let ahead = spec.eval(t, x + shift_x)?;
            let behind = spec.eval(t, (x - shift_x).abs())?;
            worst_x = worst_x.max((ahead / b - 1.0).abs()).max((behind / b - 1.0).abs());
            r.push(x);
            gap.push((later - b).abs());
        }
        rel_t.push((t, worst_t));
        rel_x.push((t, worst_x));
        l1.push((t, functionals::radial_integral(&r, &gap, params.dim)?));
    }
    let window = Some((f64::NEG_INFINITY, f64::INFINITY));
    Ok(ShiftRates {
        time_shift: fit_rate(&rel_t, FitMode::PowerInT, window)?,
        space_shift: fit_rate(&rel_x, FitMode::PowerInT, window)?,
        time_shift_l1: fit_rate(&l1, FitMode::PowerInT, window)?,
    })
}

fn log_samples(lo: f64, hi: f64) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * SHIFT_DENSITY as f64).ceil() as usize;
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect()
}

// ---------------------------------------------------------------------------
// Rescaled runs.

/// `(V_{d_lo} + V_{d_hi}) / 2` in self-similar variables. It sits between
/// both profiles, and so does its derivative.
pub fn sandwich_profile(params: &Params, grid: &RadialGrid, d_lo: f64, d_hi: f64) -> Result<RadialGridFunction> {
    if !(d_lo > 0.0 && d_hi > 0.0) {
        return Err(Error::InvalidParams(format!(
            "profile parameters must be positive, got {d_lo}, {d_hi}"
        )));
    }
    RadialGridFunction::from_fn(grid.clone(), Frame::SelfSimilar { tau: 0.0 }, *params, |r| {
        0.5 * (profiles::eval_vd(d_lo, r, params).0 + profiles::eval_vd(d_hi, r, params).0)
    })
}

/// `D` with `int_grid (v - V_D) dx = 0`, the profile a flow that pins its
/// far field to `V_D` relaxes to. Needs integrable profile differences.
pub fn relative_mass_d(v: &RadialGridFunction) -> Result<f64> {
    let params = v.params;
    if !params.diff_profiles_integrable() {
        return Err(Error::Regime {
            op: "relative mass selection",
            needed: "N(2-p)(p-1) < p",
            p: params.p,
            dim: params.dim,
        });
    }
    let r = v.r();
    let excess = |d: f64| {
        let g: Vec<f64> = r
            .iter()
            .zip(&v.values)
            .map(|(&x, &y)| y - profiles::eval_vd(d, x, &params).0)
            .collect();
        functionals::radial_integral_with(r, &g, params.dim, Tail::Truncate).unwrap_or(f64::NAN)
    };
    // `V_D` decreases in `D`, so the excess increases.
    quad::bisect_positive(excess, 1.0, 1e-13)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledRunConfig {
    /// Reference and entropy flag are overwritten per run.
    pub solver: SolverConfig,
    pub tau_end: f64,
    pub window: Option<(f64, f64)>,
}

impl RescaledRunConfig {
    /// Well-balanced flux with the far field pinned to `V_D`.
    pub fn tracking(dt: f64, snapshot_every: f64, tau_end: f64) -> Self {
        Self {
            solver: SolverConfig {
                dt,
                flux_form: FluxForm::WellBalanced,
                boundary: Boundary::NeumannOriginFarFieldProfileValue,
                snapshot_every,
                entropy_diagnostics: true,
                ..Default::default()
            },
            tau_end,
            window: None,
        }
    }
}

impl Default for RescaledRunConfig {
    fn default() -> Self {
        Self::tracking(1e-2, 0.05, 8.0)
    }
}

/// Distances of a rescaled trajectory to `V_D`, one entry per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledRun {
    pub d: f64,
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    pub rel_sup: Vec<f64>,
    pub entropy: Vec<Option<f64>>,
    pub fisher: Vec<Option<f64>>,
    pub trajectory: Trajectory,
}

impl RescaledRun {
    pub fn l1_series(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.l1.iter().copied()).collect()
    }

    pub fn rel_sup_series(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.rel_sup.iter().copied()).collect()
    }

    /// Snapshots where the entropy is defined.
    pub fn entropy_series(&self) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.entropy)
            .filter_map(|(&t, e)| e.map(|e| (t, e)))
            .collect()
    }

    pub fn fisher_series(&self) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.fisher)
            .filter_map(|(&t, e)| e.map(|e| (t, e)))
            .collect()
    }
}

/// Evolves `v0` in self-similar variables towards `V_d`.
pub fn rescaled_run(v0: &RadialGridFunction, d: f64, config: &RescaledRunConfig) -> Result<RescaledRun> {
    let params = v0.params;
    let cfg = SolverConfig {
        reference: Some(Reference::Stationary { params, d }),
        entropy_diagnostics: params.entropy_defined(),
        ..config.solver.clone()
    };
    let trajectory = solver::evolve_rcple(v0, &cfg, config.tau_end)?.into_result()?;
    let tail = cfg.boundary.tail();
    let mut l1 = Vec::with_capacity(trajectory.snapshots.len());
    for snap in &trajectory.snapshots {
        let gap: Vec<f64> = snap
            .r()
            .iter()
            .zip(&snap.values)
            .map(|(&r, &x)| (x - profiles::eval_vd(d, r, &params).0).abs())
            .collect();
        l1.push(functionals::radial_integral_with(snap.r(), &gap, params.dim, tail)?);
    }
    let diag = &trajectory.diagnostics;
    Ok(RescaledRun {
        d,
        times: trajectory.times(),
        l1,
        rel_sup: diag.iter().map(|x| x.sup_rel_err.unwrap_or(f64::NAN)).collect(),
        entropy: diag.iter().map(|x| x.entropy).collect(),
        fisher: diag.iter().map(|x| x.fisher).collect(),
        trajectory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentLabel {
    /// Every distance stayed at the scheme's rounding floor.
    Stationary,
    Converging,
    /// Some fitted rate is not positive.
    NotConverging,
}

/// Largest sup relative error still counted as rounding.
const STATIONARY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RateExperimentReport {
    pub params: Params,
    pub run: RescaledRun,
    pub l1_fit: Option<RateFit>,
    pub rel_sup_fit: Option<RateFit>,
    pub entropy_fit: Option<RateFit>,
    /// `(2-p)/(N+1)`.
    pub transfer_factor: f64,
    /// `rate_inf >= 0.8 rate_1 (2-p)/(N+1)`; absent without both fits.
    pub transfer_holds: Option<bool>,
    pub label: ExperimentLabel,
}

/// Relative slack on the transfer from the `L^1` rate to the uniform
/// relative-error rate.
pub const TRANSFER_SLACK: f64 = 0.2;

/// Rescaled run from `v0`, with `L^1`, sup-relative and entropy decay
/// rates fitted in `tau`.
pub fn relative_error_rate_experiment(
    v0: &RadialGridFunction,
    params: &Params,
    config: &RescaledRunConfig,
) -> Result<RateExperimentReport> {
    if !params.in_good_range() {
        return Err(Error::Regime {
            op: "relative error rate experiment",
            needed: "p_c < p < 2",
            p: params.p,
            dim: params.dim,
        });
    }
    if v0.params != *params {
        return Err(Error::InvalidParams("datum was sampled for other parameters".into()));
    }
    let xp = profiles::xp_norm(v0)?;
    if !xp.is_finite() {
        return Err(Error::Domain("datum tail is outside the class with finite tail norm".into()));
    }
    let d = relative_mass_d(v0)?;
    if params.p <= params.exponents().p_m {
        let eps = functionals::relative_sandwich(v0, d);
        if !(eps < 1.0) {
            return Err(Error::Domain(format!(
                "datum is not sandwiched between two profiles: relative gap {eps}"
            )));
        }
    }
    let run = rescaled_run(v0, d, config)?;
    let floor = run.rel_sup.iter().cloned().fold(0.0, f64::max);
    let transfer_factor = (2.0 - params.p) / (params.dim as f64 + 1.0);
    if floor <= STATIONARY_FLOOR {
        return Ok(RateExperimentReport {
            params: *params,
            run,
            l1_fit: None,
            rel_sup_fit: None,
            entropy_fit: None,
            transfer_factor,
            transfer_holds: None,
            label: ExperimentLabel::Stationary,
        });
    }
    let l1_fit = fit_rate(&run.l1_series(), FitMode::ExpInTau, config.window).ok();
    let rel_sup_fit = fit_rate(&run.rel_sup_series(), FitMode::ExpInTau, config.window).ok();
    let entropy_fit = fit_rate(&run.entropy_series(), FitMode::ExpInTau, config.window).ok();
    let transfer_holds = match (&l1_fit, &rel_sup_fit) {
        (Some(a), Some(b)) => Some(b.fitted_rate >= a.fitted_rate * transfer_factor * (1.0 - TRANSFER_SLACK)),
        _ => None,
    };
    let positive = [&l1_fit, &rel_sup_fit]
        .iter()
        .all(|f| f.as_ref().is_some_and(|f| f.fitted_rate > 0.0));
    Ok(RateExperimentReport {
        params: *params,
        run,
        l1_fit,
        rel_sup_fit,
        entropy_fit,
        transfer_factor,
        transfer_holds,
        label: if positive {
            ExperimentLabel::Converging
        } else {
            ExperimentLabel::NotConverging
        },
    })
}

// ---------------------------------------------------------------------------
// Weak Gronwall.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallCheck {
    /// Start of the longest suffix on which `s int_t^inf u <= u(t)` holds
    /// at every sample; absent when it fails at the last sample.
    pub hypothesis_from: Option<f64>,
    /// Samples at least one time unit past `hypothesis_from`, where the
    /// bound `u(t) <= (e^s/s) u(t0) e^{-s (t - t0)}` was tested.
    pub checked: usize,
    /// `max u(t) / bound(t)` over the checked samples.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// Relative slack on the discrete hypothesis, which the trapezoidal tail
/// integrals only meet up to their own error.
const GRONWALL_SLACK: f64 = 1e-3;

/// Tests the weak Gronwall implication on a sampled nonincreasing series.
/// `int_t^inf` is the trapezoid sum plus an exponential continuation
/// fitted on the last quarter (at least eight points); a non-decaying
/// continuation makes every tail integral infinite.
pub fn weak_gronwall_check(series: &[(f64, f64)], s: f64) -> Result<GronwallCheck> {
    if !(s > 0.0) {
        return Err(Error::InvalidParams(format!("rate must be positive, got {s}")));
    }
    let n = series.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("{n} points, need at least {MIN_FIT_POINTS}")));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Fit("times must increase".into()));
    }
    if series.iter().any(|&(_, u)| !(u >= 0.0)) {
        return Err(Error::Fit("series must be nonnegative".into()));
    }
    let u_last = series[n - 1].1;
    let tail = if u_last == 0.0 {
        0.0
    } else {
        let last = &series[n - (n / 4).max(MIN_FIT_POINTS)..];
        let window = Some((f64::NEG_INFINITY, f64::INFINITY));
        match fit_rate(last, FitMode::ExpInTau, window) {
            Ok(f) if f.fitted_rate > 0.0 => u_last / f.fitted_rate,
            _ => f64::INFINITY,
        }
    };
    let mut integral = vec![0.0; n];
    integral[n - 1] = tail;
    for i in (0..n - 1).rev() {
        let (t0, u0) = series[i];
        let (t1, u1) = series[i + 1];
        integral[i] = integral[i + 1] + 0.5 * (t1 - t0) * (u0 + u1);
    }
    let mut start = None;
    for i in (0..n).rev() {
        if s * integral[i] <= series[i].1 * (1.0 + GRONWALL_SLACK) {
            start = Some(i);
        } else {
            break;
        }
    }
    let Some(i0) = start else {
        return Ok(GronwallCheck {
            hypothesis_from: None,
            checked: 0,
            worst_ratio: 0.0,
            holds: true,
        });
    };
    let (t0, u0) = series[i0];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for &(t, u) in &series[i0..] {
        if t - t0 < 1.0 {
            continue;
        }
        let bound = s.exp() / s * u0 * (-s * (t - t0)).exp();
        checked += 1;
        worst = worst.max(if bound > 0.0 { u / bound } else if u > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(GronwallCheck {
        hypothesis_from: Some(t0),
        checked,
        worst_ratio: worst,
        holds: worst <= 1.0 + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64, dim: u32) -> Params {
        Params::new(p, dim).unwrap()
    }

    fn exp_series(rate: f64, t_end: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = t_end * i as f64 / (n - 1) as f64;
                (t, (-rate * t).exp())
            })
            .collect()
    }

    #[test]
    fn exact_exponential() {
        let f = fit_rate(&exp_series(2.0, 6.0, 61), FitMode::ExpInTau, None).unwrap();
        assert!((f.fitted_rate - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(f.window.0, INITIAL_LAYER);
        assert!(f.series.iter().all(|&(t, _)| t >= 1.0));
    }

    #[test]
    fn exact_power_law() {
        let s: Vec<(f64, f64)> = (1..=20).map(|i| (i as f64, 1.0 / i as f64)).collect();
        let f = fit_rate(&s, FitMode::PowerInT, None).unwrap();
        assert!((f.fitted_rate + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let mut s = exp_series(1.0, 5.0, 20);
        assert!(matches!(
            fit_rate(&s[..5], FitMode::ExpInTau, Some((0.0, 5.0))),
            Err(Error::Fit(_))
        ));
        s[15].1 = 0.0;
        assert!(matches!(fit_rate(&s, FitMode::ExpInTau, None), Err(Error::Fit(_))));
        s[15].1 = -1.0;
        assert!(fit_rate(&s, FitMode::ExpInTau, None).is_err());
        let s = exp_series(1.0, 5.0, 20);
        assert!(fit_rate(&s, FitMode::PowerInT, Some((0.0, 5.0))).is_err());
        assert!(fit_rate(&s, FitMode::ExpInTau, Some((3.0, 2.0))).is_err());
    }

    #[test]
    fn noisy_exponential_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for rate in [0.1, 1.0, 10.0] {
            // Three e-foldings past the initial layer.
            let t_end = 1.0 + 3.0 / rate;
            let s: Vec<(f64, f64)> = (0..200)
                .map(|i| {
                    let t = t_end * i as f64 / 199.0;
                    (t, (-rate * t).exp() * (1.0 + 0.01 * rng.random_range(-1.0..1.0)))
                })
                .collect();
            let window = Some((0.0, t_end));
            let f = fit_rate(&s, FitMode::ExpInTau, window).unwrap();
            assert!((f.fitted_rate / rate - 1.0).abs() < 0.02, "rate {rate}: {}", f.fitted_rate);
        }
    }

    proptest! {
        #[test]
        fn monotone_series_nonnegative_rate(steps in proptest::collection::vec(0.0f64..0.5, 8..40)) {
            let mut v = 1.0;
            let s: Vec<(f64, f64)> = steps
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    v *= (-d).exp();
                    (i as f64, v)
                })
                .collect();
            let f = fit_rate(&s, FitMode::ExpInTau, Some((0.0, f64::INFINITY))).unwrap();
            prop_assert!(f.fitted_rate >= -1e-12);
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }
    }

    fn brackets() -> GhpBrackets {
        GhpBrackets { m1: 0.7, tau1: 0.5, m2: 1.4, tau2: 0.5 }
    }

    #[test]
    fn thresholds_positive_and_monotone() {
        for (p, dim) in [(1.75, 3), (1.6, 3), (1.9, 2)] {
            let pr = params(p, dim);
            let mut prev: Option<CylinderThresholds> = None;
            for i in 1..40 {
                let eps = 0.005 * i as f64;
                let Ok(c) = cylinder_thresholds(eps, 1.0, &brackets(), &pr) else { break };
                for v in [c.rho_under, c.rho_over, c.t_under, c.t_over, c.c] {
                    assert!(v > 0.0 && v.is_finite(), "{p} {eps} {c:?}");
                }
                if let Some(q) = prev {
                    assert!(c.rho_under <= q.rho_under && c.rho_over <= q.rho_over);
                    assert!(c.t_under <= q.t_under && c.t_over <= q.t_over);
                }
                prev = Some(c);
            }
            assert!(prev.is_some());
        }
    }

    #[test]
    fn thresholds_reject_bad_eps() {
        let pr = params(1.75, 3);
        // eps_lower = 1 - 0.7 = 0.3 at beta = 1.
        assert!(cylinder_thresholds(0.31, 1.0, &brackets(), &pr).is_err());
        assert!(cylinder_thresholds(0.0, 1.0, &brackets(), &pr).is_err());
        assert!(cylinder_thresholds(0.29, 1.0, &brackets(), &pr).is_ok());
        let flat = GhpBrackets { m1: 1.0, ..brackets() };
        assert!(cylinder_thresholds(0.1, 1.0, &flat, &pr).is_err());
        assert!(cylinder_thresholds(0.1, 1.0, &brackets(), &params(1.4, 3)).is_err());
    }

    #[test]
    fn outer_radius_growth_exponent() {
        for (p, dim) in [(1.75, 3), (1.6, 3)] {
            let pr = params(p, dim);
            let s: Vec<(f64, f64)> = (0..20)
                .map(|i| {
                    let eps = 1e-6 * 10f64.powf(i as f64 * 3.0 / 19.0);
                    (eps, cylinder_thresholds(eps, 1.0, &brackets(), &pr).unwrap().rho_over)
                })
                .collect();
            let f = fit_rate(&s, FitMode::PowerInT, None).unwrap();
            let target = (1.0 - p) / p;
            assert!((f.fitted_rate / target - 1.0).abs() < 0.05, "{p}: {}", f.fitted_rate);
        }
    }

    /// Closed-form check of both outer bounds on the brackets themselves.
    #[test]
    fn outer_region_bounds_hold() {
        for (p, dim) in [(1.75, 3), (1.6, 3), (1.8, 4)] {
            let pr = params(p, dim);
            let g = brackets();
            let beta = pr.beta();
            let spec = |m: f64| BarenblattSpec::new(pr, BarenblattKind::MassParam { mass: m }).unwrap();
            let (b, b1, b2) = (spec(1.0), spec(g.m1), spec(g.m2));
            let cap = (1.0 - (g.m1).powf(beta)).min((g.m2).powf(beta) - 1.0);
            for frac in [0.1, 0.5, 0.9] {
                let eps = frac * cap;
                let c = cylinder_thresholds(eps, 1.0, &g, &pr).unwrap();
                for tf in [1.01, 2.0, 10.0] {
                    for k in 0..30 {
                        let s = 100f64.powf(k as f64 / 29.0);
                        let t = tf * c.t_under;
                        let x = c.rho_under * s * t.powf(beta);
                        let lower = b1.eval(t - g.tau1, x).unwrap() / b.eval(t, x).unwrap();
                        assert!(lower >= 1.0 - eps - 1e-12, "{p} eps {eps} t {t} x {x}: {lower}");
                        let t = tf * c.t_over;
                        let x = c.rho_over * s * t.powf(beta);
                        let upper = b2.eval(t + g.tau2, x).unwrap() / b.eval(t, x).unwrap();
                        assert!(upper <= 1.0 + eps + 1e-12, "{p} eps {eps} t {t} x {x}: {upper}");
                    }
                }
            }
        }
    }

    #[test]
    fn shift_exponents() {
        let pr = params(1.75, 3);
        let r = shifted_barenblatt_rates(&pr, 1.0, 1.0, 1.0).unwrap();
        assert!((r.time_shift.fitted_rate + 1.0).abs() < 0.05, "{}", r.time_shift.fitted_rate);
        let beta = pr.beta();
        assert!((r.space_shift.fitted_rate / -beta - 1.0).abs() < 0.05, "{}", r.space_shift.fitted_rate);
    }

    #[test]
    fn shift_transfer_factor() {
        for (p, dim) in [(1.75, 3), (1.8, 4), (1.9, 2)] {
            let pr = params(p, dim);
            let r = shifted_barenblatt_rates(&pr, 1.0, 0.5, 0.5).unwrap();
            let ratio = r.time_shift.fitted_rate / r.time_shift_l1.fitted_rate;
            assert!(ratio >= (2.0 - p) / (dim as f64 + 1.0), "{p} {dim}: {ratio}");
        }
    }

    #[test]
    fn zero_shift_rejected() {
        let pr = params(1.75, 3);
        assert!(shifted_barenblatt_rates(&pr, 1.0, 0.0, 1.0).is_err());
        assert!(shifted_barenblatt_rates(&pr, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn gronwall_exponential() {
        for s in [0.5, 2.0] {
            let series: Vec<(f64, f64)> = (0..401)
                .map(|i| {
                    let t = i as f64 * 0.02;
                    (t, (-s * t).exp())
                })
                .collect();
            let c = weak_gronwall_check(&series, s).unwrap();
            assert_eq!(c.hypothesis_from, Some(0.0));
            assert!(c.checked > 0 && c.holds, "{c:?}");
        }
    }

    #[test]
    fn gronwall_constant_fails_hypothesis() {
        let series: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.1, 1.0)).collect();
        let c = weak_gronwall_check(&series, 1.0).unwrap();
        assert_eq!(c.hypothesis_from, None);
        assert_eq!(c.checked, 0);
    }

    #[test]
    fn gronwall_rejects_bad_input() {
        let s = exp_series(1.0, 5.0, 20);
        assert!(weak_gronwall_check(&s, 0.0).is_err());
        assert!(weak_gronwall_check(&s[..4], 1.0).is_err());
        let mut bad = s.clone();
        bad[3].1 = -1.0;
        assert!(weak_gronwall_check(&bad, 1.0).is_err());
    }

    #[test]
    fn relative_mass_of_a_profile_is_its_parameter() {
        for (p, dim) in [(1.4, 3), (1.75, 3)] {
            let pr = params(p, dim);
            let grid = RadialGrid::log_spaced(1e-4, 1e3, 512).unwrap();
            let v = RadialGridFunction::from_fn(grid, Frame::SelfSimilar { tau: 0.0 }, pr, |r| {
                profiles::eval_vd(1.3, r, &pr).0
            })
            .unwrap();
            let d = relative_mass_d(&v).unwrap();
            assert!((d / 1.3 - 1.0).abs() < 1e-10, "{p}: {d}");
        }
    }

    #[test]
    fn sandwich_profile_between_profiles() {
        let pr = params(1.6, 3);
        let grid = RadialGrid::log_spaced(1e-3, 1e2, 200).unwrap();
        let v = sandwich_profile(&pr, &grid, 0.8, 1.25).unwrap();
        for (&r, &x) in v.r().iter().zip(&v.values) {
            let hi = profiles::eval_vd(0.8, r, &pr).0;
            let lo = profiles::eval_vd(1.25, r, &pr).0;
            assert!(lo <= x && x <= hi);
        }
        let d = relative_mass_d(&v).unwrap();
        assert!(d > 0.8 && d < 1.25);
    }

    #[test]
    fn stationary_datum_is_reported_stationary() {
        let pr = params(1.75, 3);
        let grid = RadialGrid::log_spaced(1e-3, 1e2, 256).unwrap();
        let d = 1.0;
        let v0 = RadialGridFunction::from_fn(grid, Frame::SelfSimilar { tau: 0.0 }, pr, |r| {
            profiles::eval_vd(d, r, &pr).0
        })
        .unwrap();
        let cfg = RescaledRunConfig::tracking(1e-2, 0.01, 0.1);
        let rep = relative_error_rate_experiment(&v0, &pr, &cfg).unwrap();
        assert_eq!(rep.label, ExperimentLabel::Stationary);
        assert_eq!(rep.run.times.len(), 11);
        assert!(rep.run.l1.iter().all(|&x| x < 1e-8), "{:?}", rep.run.l1);
    }

    #[test]
    fn experiment_rejects_very_fast_range() {
        let pr = params(1.4, 3);
        let grid = RadialGrid::log_spaced(1e-3, 1e2, 64).unwrap();
        let v0 = sandwich_profile(&pr, &grid, 0.8, 1.25).unwrap();
        let cfg = RescaledRunConfig::default();
        assert!(matches!(
            relative_error_rate_experiment(&v0, &pr, &cfg),
            Err(Error::Regime { .. })
        ));
    }
}
