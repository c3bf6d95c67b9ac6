//! Command line front end and the experiment runner behind it.
//!
//! Exit codes: `0` when every checked invariant holds, `2` when one
//! fails, `1` on errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exponents::{self, ExponentTable, Params};
use crate::grid::{Frame, RadialGrid, RadialGridFunction};
use crate::profiles::{self, BarenblattKind, BarenblattSpec};
use crate::rates::{self, FitMode, RateFit};
use crate::solver::{self, Boundary, Diagnostics, FluxForm, Reference, SolverConfig, Trajectory};
use crate::spectra::{self, HpKind, SpectralProblem};
use crate::transform::{self, DualDatum, DualSetup};

/// Default output root when a spec names no directory.
pub const OUTPUT_ENV: &str = "FASTPLAP_OUTPUT";

#[derive(Debug, Parser)]
#[command(name = "fastplap", version, about = "Fast p-Laplace evolution laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical exponents, constants and the regime of (p, N).
    Exponents(ExponentsArgs),
    /// Closed-form profile samples as CSV.
    Profile(ProfileArgs),
    /// One evolution with snapshot and diagnostics output.
    Evolve(EvolveArgs),
    /// Rescaled run from a sandwiched datum with the entropy decay fitted.
    EntropyTrack(EntropyTrackArgs),
    /// Dual-solver refinement study of the radial correspondence.
    TransformCheck(TransformArgs),
    /// Discrete Hardy-Poincare constant and its domain study.
    HpSpectrum(SpectrumArgs),
    /// Fits a decay rate to one column of a diagnostics file.
    RateFit(RateFitArgs),
    /// Runs experiment spec files.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long = "N", alias = "dim")]
    pub dim: u32,
}

impl ParamArgs {
    fn params(&self) -> Result<Params> {
        Params::new(self.p, self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExponentsArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub out: Format,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = crate::grid::DEFAULT_R_MIN)]
    pub r_min: f64,
    #[arg(long, default_value_t = crate::grid::DEFAULT_R_MAX)]
    pub r_max: f64,
    #[arg(long, default_value_t = crate::grid::DEFAULT_NODES)]
    pub nodes: usize,
}

impl GridArgs {
    fn spec(&self) -> GridSpec {
        GridSpec {
            r_min: self.r_min,
            r_max: self.r_max,
            nodes: self.nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileKind {
    Stationary,
    Barenblatt,
    Pseudo,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = ProfileKind::Stationary)]
    pub kind: ProfileKind,
    #[arg(long, default_value_t = 1.0)]
    pub d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    /// Evaluation time (ignored for stationary profiles).
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 2.0)]
    pub t_ext: f64,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = Equation::Rcple)]
    pub equation: Equation,
    /// Datum as `kind:key=value,...`, e.g. `sandwich:d_lo=0.8,d_hi=1.25`.
    #[arg(long, default_value = "sandwich:d_lo=0.8,d_hi=1.25")]
    pub datum: String,
    #[arg(long, default_value_t = 1.0)]
    pub end: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.1)]
    pub snapshot_every: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EntropyTrackArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 0.8)]
    pub d_lo: f64,
    #[arg(long, default_value_t = 1.25)]
    pub d_hi: f64,
    #[arg(long, default_value_t = 8.0)]
    pub end: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.05)]
    pub snapshot_every: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatumChoice {
    Barenblatt,
    Sandwich,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = DatumChoice::Barenblatt)]
    pub datum: DatumChoice,
    #[arg(long, default_value_t = 2)]
    pub refinements: usize,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = spectra::DEFAULT_NODES)]
    pub nodes: usize,
    /// Largest domain of the study; the two smaller ones are a decade apart.
    #[arg(long, default_value_t = spectra::DEFAULT_DOMAIN)]
    pub domain: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub out: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Column {
    Entropy,
    L1,
    RelSup,
}

impl Column {
    fn header(self) -> &'static str {
        match self {
            Column::Entropy => "entropy",
            Column::L1 => "l1",
            Column::RelSup => "rel_sup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exp,
    Power,
}

#[derive(Debug, Args)]
pub struct RateFitArgs {
    #[arg(long)]
    pub diagnostics: PathBuf,
    #[arg(long, value_enum)]
    pub column: Column,
    #[arg(long, value_enum, default_value_t = ModeArg::Exp)]
    pub mode: ModeArg,
    /// `a,b`; defaults to the initial-layer cut for exponential fits.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<(f64, f64)>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("window must be `a,b`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("window start: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("window end: {e}"))?;
    if !(a < b) {
        return Err(format!("window start {a} must be below end {b}"));
    }
    Ok((a, b))
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long = "spec", required = true)]
    pub specs: Vec<PathBuf>,
    /// Experiments run at the same time.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides every spec's output directory with `<dir>/<name>`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Experiment specs.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    /// Original variables.
    Cple,
    /// Self-similar variables.
    Rcple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub p: f64,
    pub dim: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumSpec {
    /// `V_D`.
    Stationary { d: f64 },
    /// `(V_{d_lo} + V_{d_hi}) / 2`.
    Sandwich { d_lo: f64, d_hi: f64 },
    /// `factor^N V_D(factor y)`, same mass as `V_D`.
    Dilated { d: f64, factor: f64 },
    /// `V_D (1 + amplitude xi)` with `|xi| <= 1` a seeded sum of bumps in `ln r`.
    Perturbed { d: f64, amplitude: f64, modes: usize },
    /// Fundamental solution of mass `mass` at time `t0`.
    Barenblatt { mass: f64, t0: f64 },
    /// Extinguishing profile with parameters `d`, `t_ext` at time `t0`.
    Pseudo { d: f64, t_ext: f64, t0: f64 },
    /// CSV with columns `r,value`; `r` must start at `0`.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            r_min: crate::grid::DEFAULT_R_MIN,
            r_max: crate::grid::DEFAULT_R_MAX,
            nodes: crate::grid::DEFAULT_NODES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub dt: f64,
    pub snapshot_every: f64,
    /// Final time in the frame's own variable.
    pub end: f64,
    /// Well-balanced by default in self-similar variables.
    pub flux_form: Option<FluxForm>,
    pub boundary: Option<Boundary>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            snapshot_every: 0.1,
            end: 1.0,
            flux_form: None,
            boundary: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub entropy: bool,
    pub snapshots: bool,
    pub fit_window: Option<(f64, f64)>,
    /// Expected entropy decay rate; checked when present.
    pub rate_target: Option<f64>,
    pub rate_tolerance: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            entropy: true,
            snapshots: true,
            fit_window: None,
            rate_target: None,
            rate_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub equation: Equation,
    pub params: ParamSpec,
    pub datum: DatumSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    /// TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("spec: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("spec: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Field-level checks that need no solver run.
    pub fn validate(&self) -> Result<Params> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("name: must be a nonempty file name".into()));
        }
        let params = Params::new(self.params.p, self.params.dim).map_err(|e| field("params", e))?;
        RadialGrid::log_spaced(self.grid.r_min, self.grid.r_max, self.grid.nodes).map_err(|e| field("grid", e))?;
        let s = &self.solver;
        if !(s.dt > 0.0 && s.snapshot_every > 0.0 && s.end > 0.0) {
            return Err(Error::Config("solver: dt, snapshot_every and end must be positive".into()));
        }
        let ss_only = matches!(
            self.datum,
            DatumSpec::Stationary { .. } | DatumSpec::Sandwich { .. } | DatumSpec::Dilated { .. } | DatumSpec::Perturbed { .. }
        );
        let orig_only = matches!(self.datum, DatumSpec::Barenblatt { .. } | DatumSpec::Pseudo { .. });
        if (ss_only && self.equation == Equation::Cple) || (orig_only && self.equation == Equation::Rcple) {
            return Err(Error::Config(format!(
                "datum: kind does not live in the frame of equation {:?}",
                self.equation
            )));
        }
        if let DatumSpec::Perturbed { amplitude, modes, .. } = self.datum {
            if !(0.0..1.0).contains(&amplitude) || modes == 0 {
                return Err(Error::Config("datum: perturbation needs 0 <= amplitude < 1 and modes >= 1".into()));
            }
        }
        if let Some(t) = self.diagnostics.rate_target {
            if !(t > 0.0 && self.diagnostics.rate_tolerance > 0.0) {
                return Err(Error::Config("diagnostics: rate target and tolerance must be positive".into()));
            }
        }
        Ok(params)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        hex(&Sha256::digest(&bytes))
    }

    fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        if let Some(root) = root {
            return root.join(&self.name);
        }
        if let Some(dir) = &self.output {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fastplap-out"));
        root.join(&self.name)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Running.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

impl From<&RateFit> for FitSummary {
    fn from(f: &RateFit) -> Self {
        Self {
            rate: f.fitted_rate,
            intercept: f.intercept,
            r_squared: f.r_squared,
            window: f.window,
            points: f.series.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub spec_hash: String,
    pub build: BuildInfo,
    pub exponent_table: ExponentTable,
    /// `stationary`, `converging`, `not_converging` or `evolved`.
    pub label: String,
    /// Parameter of the profile the rescaled run is measured against.
    pub d: Option<f64>,
    pub steps: usize,
    pub fits: Vec<(String, FitSummary)>,
    pub invariants: Vec<InvariantCheck>,
    pub all_passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub summary: Summary,
    pub dir: PathBuf,
}

/// Sup relative error below which the rescaled run counts as stationary.
const STATIONARY_FLOOR: f64 = 1e-9;
const MASS_TOLERANCE: f64 = 1e-3;

/// Builds the datum, runs the solver and writes `snapshots.csv`,
/// `diagnostics.csv`, `schema.json` and `summary.json` under the
/// experiment's directory.
pub fn run(spec: &ExperimentSpec, output_root: Option<&Path>) -> Result<RunReport> {
    let params = spec.validate()?;
    let grid = RadialGrid::log_spaced(spec.grid.r_min, spec.grid.r_max, spec.grid.nodes)?;
    let datum = build_datum(spec, &params, &grid)?;
    let dir = spec.output_dir(output_root);
    fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;

    let mut invariants = Vec::new();
    let mut fits = Vec::new();
    let (trajectory, d, l1, label) = match spec.equation {
        Equation::Rcple => {
            let d = match spec.datum {
                DatumSpec::Stationary { d } | DatumSpec::Dilated { d, .. } => d,
                _ => rates::relative_mass_d(&datum).map_err(|e| tagged("rates", e))?,
            };
            let cfg = rates::RescaledRunConfig {
                solver: SolverConfig {
                    dt: spec.solver.dt,
                    snapshot_every: spec.solver.snapshot_every,
                    flux_form: spec.solver.flux_form.unwrap_or(FluxForm::WellBalanced),
                    boundary: spec.solver.boundary.unwrap_or(Boundary::NeumannOriginFarFieldProfileValue),
                    ..Default::default()
                },
                tau_end: spec.solver.end,
                window: spec.diagnostics.fit_window,
            };
            let mut run = rates::rescaled_run(&datum, d, &cfg).map_err(|e| tagged("solver", e))?;
            if !spec.diagnostics.entropy {
                run.entropy.iter_mut().for_each(|e| *e = None);
                run.fisher.iter_mut().for_each(|e| *e = None);
            }
            let worst = run.rel_sup.iter().cloned().fold(0.0, f64::max);
            let label = if worst <= STATIONARY_FLOOR {
                invariants.push(InvariantCheck::new(
                    "stays_at_profile",
                    true,
                    format!("max sup relative error {worst:e}"),
                ));
                "stationary"
            } else {
                for (name, series) in [
                    ("entropy", run.entropy_series()),
                    ("l1", run.l1_series()),
                    ("rel_sup", run.rel_sup_series()),
                ] {
                    if let Ok(f) = rates::fit_rate(&series, FitMode::ExpInTau, cfg.window) {
                        fits.push((name.to_string(), FitSummary::from(&f)));
                    }
                }
                let converging = fits.iter().filter(|(n, _)| n != "entropy").all(|(_, f)| f.rate > 0.0)
                    && fits.len() > usize::from(!run.entropy_series().is_empty());
                if converging { "converging" } else { "not_converging" }
            };
            let e = run.entropy_series();
            if !e.is_empty() {
                let bad = e.windows(2).find(|w| w[1].1 > w[0].1 * (1.0 + 1e-9) + 1e-15);
                invariants.push(InvariantCheck::new(
                    "entropy_nonincreasing",
                    bad.is_none(),
                    bad.map_or("monotone".into(), |w| format!("increase at tau = {}", w[1].0)),
                ));
            }
            if let Some(target) = spec.diagnostics.rate_target {
                let fit = fits.iter().find(|(n, _)| n == "entropy").map(|(_, f)| f.rate);
                let passed = fit.is_some_and(|r| (r - target).abs() <= spec.diagnostics.rate_tolerance * target);
                invariants.push(InvariantCheck::new(
                    "entropy_rate_target",
                    passed,
                    format!(
                        "fitted {} against target {target} with relative tolerance {}",
                        fit.map_or("none".into(), |r| r.to_string()),
                        spec.diagnostics.rate_tolerance
                    ),
                ));
            }
            let l1 = run.l1.clone();
            (run.trajectory, Some(d), Some(l1), label)
        }
        Equation::Cple => {
            let reference = match spec.datum {
                DatumSpec::Barenblatt { mass, .. } => Some(Reference::Barenblatt {
                    spec: BarenblattSpec::new(params, BarenblattKind::MassParam { mass })?,
                    t_offset: 0.0,
                }),
                DatumSpec::Pseudo { d, t_ext, .. } => Some(Reference::Barenblatt {
                    spec: BarenblattSpec::new(params, BarenblattKind::FreeParam { d, t_ext })?,
                    t_offset: 0.0,
                }),
                _ => None,
            };
            let default_boundary = if reference.is_some() {
                Boundary::NeumannOriginFarFieldProfileMatch
            } else {
                Boundary::NeumannOriginZeroFlux
            };
            let cfg = SolverConfig {
                dt: spec.solver.dt,
                snapshot_every: spec.solver.snapshot_every,
                flux_form: spec.solver.flux_form.unwrap_or(FluxForm::Standard),
                boundary: spec.solver.boundary.unwrap_or(default_boundary),
                reference,
                ..Default::default()
            };
            let t_end = datum.frame.time() + spec.solver.end;
            let traj = solver::evolve_cple(&datum, &cfg, t_end)
                .and_then(Trajectory::into_result)
                .map_err(|e| tagged("solver", e))?;
            if params.in_good_range() {
                let m0 = traj.diagnostics[0].mass;
                let worst = traj
                    .diagnostics
                    .iter()
                    .map(|d| (d.mass / m0 - 1.0).abs())
                    .fold(0.0, f64::max);
                invariants.push(InvariantCheck::new(
                    "mass_conserved",
                    worst <= MASS_TOLERANCE,
                    format!("max relative mass drift {worst:e}"),
                ));
            }
            (traj, None, None, "evolved")
        }
    };

    write_diagnostics(&dir.join("diagnostics.csv"), &trajectory.diagnostics, l1.as_deref())?;
    if spec.diagnostics.snapshots {
        write_snapshots(&dir.join("snapshots.csv"), &trajectory)?;
    }
    write_json(&dir.join("schema.json"), &schema(spec.equation))?;
    let all_passed = invariants.iter().all(|c| c.passed);
    let summary = Summary {
        name: spec.name.clone(),
        spec_hash: spec.hash(),
        build: BuildInfo {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        exponent_table: exponents::exponent_table(&params),
        label: label.into(),
        d,
        steps: trajectory.stats.steps,
        fits,
        invariants,
        all_passed,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunReport { summary, dir })
}

fn tagged(module: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Domain(format!("[{module}] {other}")),
    }
}

fn build_datum(spec: &ExperimentSpec, params: &Params, grid: &RadialGrid) -> Result<RadialGridFunction> {
    let ss = Frame::SelfSimilar { tau: 0.0 };
    let vd = |d: f64, r: f64| profiles::eval_vd(d, r, params).0;
    let positive = |name: &str, x: f64| {
        if x > 0.0 && x.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("datum: {name} must be positive, got {x}")))
        }
    };
    match spec.datum {
        DatumSpec::Stationary { d } => {
            positive("d", d)?;
            RadialGridFunction::from_fn(grid.clone(), ss, *params, |r| vd(d, r))
        }
        DatumSpec::Sandwich { d_lo, d_hi } => {
            positive("d_lo", d_lo)?;
            positive("d_hi", d_hi)?;
            rates::sandwich_profile(params, grid, d_lo, d_hi)
        }
        DatumSpec::Dilated { d, factor } => {
            positive("d", d)?;
            positive("factor", factor)?;
            let n = params.n();
            RadialGridFunction::from_fn(grid.clone(), ss, *params, |r| factor.powf(n) * vd(d, factor * r))
        }
        DatumSpec::Perturbed { d, amplitude, modes } => {
            positive("d", d)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let bumps: Vec<(f64, f64)> = (0..modes)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-2.0f64..2.0)))
                .collect();
            RadialGridFunction::from_fn(grid.clone(), ss, *params, |r| {
                let x = if r > 0.0 { r.ln() } else { f64::NEG_INFINITY };
                let xi: f64 = bumps
                    .iter()
                    .map(|&(a, c)| a * (-(x - c) * (x - c) / 2.0).exp())
                    .sum::<f64>()
                    / modes as f64;
                vd(d, r) * (1.0 + amplitude * xi)
            })
        }
        DatumSpec::Barenblatt { mass, t0 } => {
            positive("t0", t0)?;
            BarenblattSpec::new(*params, BarenblattKind::MassParam { mass })?.sample(grid, t0)
        }
        DatumSpec::Pseudo { d, t_ext, t0 } => {
            if !(t0 >= 0.0 && t0 < t_ext) {
                return Err(Error::Config(format!("datum: need 0 <= t0 < t_ext, got {t0}, {t_ext}")));
            }
            BarenblattSpec::new(*params, BarenblattKind::FreeParam { d, t_ext })?.sample(grid, t0)
        }
        DatumSpec::Csv { ref path } => {
            let frame = match spec.equation {
                Equation::Cple => Frame::Original { t: 0.0 },
                Equation::Rcple => ss,
            };
            read_profile_csv(path, frame, *params)
        }
    }
}

/// Two-column `r,value` file with a header row.
pub fn read_profile_csv(path: &Path, frame: Frame, params: Params) -> Result<RadialGridFunction> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (mut r, mut v) = (Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row?;
        let get = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| Error::Config(format!("{}: short row", path.display())))?
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        };
        r.push(get(0)?);
        v.push(get(1)?);
    }
    RadialGridFunction::new(RadialGrid::from_nodes(r)?, v, frame, params)
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn write_diagnostics(path: &Path, diag: &[Diagnostics], l1: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "mass", "sup", "sup_derivative", "entropy", "fisher", "rel_sup", "l1"])?;
    for (i, d) in diag.iter().enumerate() {
        w.write_record([
            d.time.to_string(),
            d.mass.to_string(),
            d.sup.to_string(),
            d.sup_derivative.to_string(),
            opt(d.entropy),
            opt(d.fisher),
            opt(d.sup_rel_err),
            opt(l1.and_then(|x| x.get(i).copied())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_snapshots(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "r", "value"])?;
    for s in &traj.snapshots {
        let t = s.frame.time().to_string();
        for (r, v) in s.r().iter().zip(&s.values) {
            w.write_record([t.as_str(), &r.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
struct ColumnDoc {
    name: &'static str,
    description: String,
}

#[derive(Debug, Clone, Serialize)]
struct FileDoc {
    file: &'static str,
    columns: Vec<ColumnDoc>,
}

/// Column documentation for the files of one run.
fn schema(equation: Equation) -> Vec<FileDoc> {
    let (time, radius) = match equation {
        Equation::Cple => ("t, original time", "|x|, original radius"),
        Equation::Rcple => ("tau, self-similar time", "|y|, self-similar radius"),
    };
    let col = |name: &'static str, description: String| ColumnDoc { name, description };
    vec![
        FileDoc {
            file: "diagnostics.csv",
            columns: vec![
                col("time", time.into()),
                col("mass", "int u dx over the grid plus a power-law tail".into()),
                col("sup", "max of the sampled profile".into()),
                col("sup_derivative", "max |du/dr|".into()),
                col("entropy", "relative entropy to V_D; empty when not tracked".into()),
                col("fisher", "relative Fisher information to V_D; empty when not tracked".into()),
                col("rel_sup", "max |u/ref - 1| against the run's reference profile".into()),
                col("l1", "int |v - V_D| dx in self-similar runs; empty otherwise".into()),
            ],
        },
        FileDoc {
            file: "snapshots.csv",
            columns: vec![
                col("time", time.into()),
                col("r", radius.into()),
                col("value", "sampled solution".into()),
            ],
        },
    ]
}

/// Runs specs on up to `jobs` threads; results keep the input order.
pub fn run_all(specs: &[ExperimentSpec], jobs: usize, output_root: Option<&Path>) -> Vec<Result<RunReport>> {
    let jobs = jobs.max(1);
    let mut out: Vec<Option<Result<RunReport>>> = (0..specs.len()).map(|_| None).collect();
    for (chunk_specs, chunk_out) in specs.chunks(jobs).zip(out.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_specs
                .iter()
                .map(|s| scope.spawn(move || run(s, output_root)))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Error::Domain("experiment thread panicked".into()))));
            }
        });
    }
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}

// ---------------------------------------------------------------------------
// Subcommands.

/// Whether the requested invariants held.
pub type Outcome = bool;

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Exponents(a) => {
            let table = exponents::exponent_table(&a.params.params()?);
            match a.out {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&table)?)?,
                Format::Csv => {
                    let e = &table.exponents;
                    writeln!(out, "name,value")?;
                    for (k, v) in [
                        ("p", Some(table.p)),
                        ("p_1", e.p_1),
                        ("p_Y", Some(e.p_y)),
                        ("p_2", e.p_2),
                        ("p_c", Some(e.p_c)),
                        ("p_M", Some(e.p_m)),
                        ("p_D", Some(e.p_d)),
                    ] {
                        writeln!(out, "{k},{}", opt(v))?;
                    }
                    writeln!(out, "lambda_star,{}", opt(table.lambda_star))?;
                    writeln!(out, "lambda_hp,{}", opt(table.lambda_hp))?;
                }
            }
            Ok(true)
        }
        Command::Profile(a) => {
            let params = a.params.params()?;
            let g = a.grid.spec();
            let grid = RadialGrid::log_spaced(g.r_min, g.r_max, g.nodes)?;
            let (spec, t) = match a.kind {
                ProfileKind::Stationary => (BarenblattSpec::new(params, BarenblattKind::Stationary { d: a.d })?, 0.0),
                ProfileKind::Barenblatt => (BarenblattSpec::new(params, BarenblattKind::MassParam { mass: a.mass })?, a.t),
                ProfileKind::Pseudo => (
                    BarenblattSpec::new(params, BarenblattKind::FreeParam { d: a.d, t_ext: a.t_ext })?,
                    a.t,
                ),
            };
            writeln!(out, "r,value,derivative")?;
            for &r in &grid.r {
                let (v, dv) = spec.eval_with_derivative(t, r)?;
                writeln!(out, "{r},{v},{dv}")?;
            }
            Ok(true)
        }
        Command::Evolve(a) => {
            let spec = ExperimentSpec {
                name: "evolve".into(),
                equation: a.equation,
                params: ParamSpec { p: a.params.p, dim: a.params.dim },
                datum: parse_datum(&a.datum)?,
                grid: a.grid.spec(),
                solver: SolverSpec {
                    dt: a.dt,
                    snapshot_every: a.snapshot_every,
                    end: a.end,
                    ..Default::default()
                },
                diagnostics: DiagnosticsSpec::default(),
                output: None,
                seed: 0,
            };
            report(run(&spec, a.output_dir.as_deref())?, out)
        }
        Command::EntropyTrack(a) => {
            let spec = ExperimentSpec {
                name: "entropy-track".into(),
                equation: Equation::Rcple,
                params: ParamSpec { p: a.params.p, dim: a.params.dim },
                datum: DatumSpec::Sandwich { d_lo: a.d_lo, d_hi: a.d_hi },
                grid: a.grid.spec(),
                solver: SolverSpec {
                    dt: a.dt,
                    snapshot_every: a.snapshot_every,
                    end: a.end,
                    ..Default::default()
                },
                diagnostics: DiagnosticsSpec {
                    snapshots: false,
                    ..Default::default()
                },
                output: None,
                seed: 0,
            };
            report(run(&spec, a.output_dir.as_deref())?, out)
        }
        Command::TransformCheck(a) => {
            let params = a.params.params()?;
            let datum = match a.datum {
                DatumChoice::Barenblatt => DualDatum::Barenblatt,
                DatumChoice::Sandwich => DualDatum::Sandwich,
            };
            let rows = transform::refinement_study(&params, datum, &DualSetup::default(), a.refinements)?;
            writeln!(out, "h,dt,nodes,discrepancy")?;
            for r in &rows {
                writeln!(out, "{},{},{},{}", r.h, r.dt, r.nodes, r.discrepancy)?;
            }
            Ok(rows.windows(2).all(|w| w[1].discrepancy < w[0].discrepancy))
        }
        Command::HpSpectrum(a) => {
            let params = a.params.params()?;
            let domains = [a.domain / 100.0, a.domain / 10.0, a.domain];
            let study = spectra::domain_study(&params, a.nodes, &domains)?;
            let single = spectra::solve(&SpectralProblem::new(params, HpKind::Optimal, a.nodes, a.domain)?)?;
            let closed = spectra::lambda_opt_closed_form(&params).ok();
            let record = SpectrumRecord {
                params,
                nodes: a.nodes,
                domain: a.domain,
                lambda_opt: single.value,
                residual: single.residual,
                outer_share: single.outer_share,
                study_estimate: study.estimate,
                study_label: format!("{:?}", study.label),
                domains: study.domains.clone(),
                values: study.values.clone(),
                lambda: spectra::lambda_from_opt(&params, study.estimate),
                lambda_opt_closed_form: closed,
                lambda_closed_form: exponents::lambda_hp(&params).ok(),
            };
            match a.out {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&record)?)?,
                Format::Csv => {
                    writeln!(out, "domain,lambda_opt")?;
                    for (l, v) in study.domains.iter().zip(&study.values) {
                        writeln!(out, "{l},{v}")?;
                    }
                }
            }
            Ok(true)
        }
        Command::RateFit(a) => {
            let series = read_column(&a.diagnostics, a.column)?;
            let mode = match a.mode {
                ModeArg::Exp => FitMode::ExpInTau,
                ModeArg::Power => FitMode::PowerInT,
            };
            let fit = rates::fit_rate(&series, mode, a.window)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&FitSummary::from(&fit))?)?;
            Ok(true)
        }
        Command::Experiment(a) => {
            let specs = a.specs.iter().map(|p| ExperimentSpec::load(p)).collect::<Result<Vec<_>>>()?;
            let mut passed = true;
            let mut first_error = None;
            for r in run_all(&specs, a.jobs, a.output_dir.as_deref()) {
                match r {
                    Ok(rep) => passed &= report(rep, out)?,
                    Err(e) => {
                        writeln!(out, "error: {e}")?;
                        first_error.get_or_insert(e);
                    }
                }
            }
            match first_error {
                Some(e) => Err(e),
                None => Ok(passed),
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct SpectrumRecord {
    params: Params,
    nodes: usize,
    domain: f64,
    lambda_opt: f64,
    residual: f64,
    outer_share: f64,
    study_estimate: f64,
    study_label: String,
    domains: Vec<f64>,
    values: Vec<f64>,
    lambda: f64,
    lambda_opt_closed_form: Option<f64>,
    lambda_closed_form: Option<f64>,
}

fn report(rep: RunReport, out: &mut dyn Write) -> Result<Outcome> {
    let s = &rep.summary;
    writeln!(out, "{}: {} ({})", s.name, s.label, rep.dir.display())?;
    for (name, f) in &s.fits {
        writeln!(out, "  fit {name}: rate {} r2 {}", f.rate, f.r_squared)?;
    }
    for c in &s.invariants {
        writeln!(out, "  {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(s.all_passed)
}

/// `kind:key=value,...`.
fn parse_datum(s: &str) -> Result<DatumSpec> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut table = toml::Table::new();
    table.insert("kind".into(), toml::Value::String(kind.trim().into()));
    for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("datum: `{pair}` is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        let value = if let Ok(i) = v.parse::<i64>() {
            if k == "modes" { toml::Value::Integer(i) } else { toml::Value::Float(i as f64) }
        } else if let Ok(x) = v.parse::<f64>() {
            toml::Value::Float(x)
        } else {
            toml::Value::String(v.into())
        };
        table.insert(k.into(), value);
    }
    DatumSpec::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(format!("datum: {e}")))
}

/// `(time, value)` pairs of one diagnostics column, skipping empty cells.
pub fn read_column(path: &Path, column: Column) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: no column `{name}`", path.display())))
    };
    let (ti, vi) = (find("time")?, find(column.header())?);
    let mut series = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (t, v) = (row.get(ti).unwrap_or(""), row.get(vi).unwrap_or(""));
        if v.is_empty() {
            continue;
        }
        let parse = |x: &str| x.parse::<f64>().map_err(|e| Error::Config(format!("{}: {e}", path.display())));
        series.push((parse(t)?, parse(v)?));
    }
    Ok(series)
}

/// Maps an outcome to the process exit code.
pub fn exit_code(result: &Result<Outcome>) -> u8 {
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(_) => 1,
    }
}

pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let result = execute(cli, &mut stdout);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    std::process::ExitCode::from(exit_code(&result))
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use clap::Parser;

    use crate::cli::{self, Cli, ExperimentSpec};
    use crate::Error;

    const MINIMAL: &str = r#"
name = "minimal"
equation = "rcple"

[params]
p = 1.75
dim = 3

[datum]
kind = "stationary"
d = 1.0

[grid]
r_min = 1e-3
r_max = 1e2
nodes = 128

[solver]
dt = 1e-2
snapshot_every = 1e-2
end = 0.1
"#;

    fn exec(args: &[&str]) -> (crate::Result<bool>, String) {
        let cli = Cli::try_parse_from(std::iter::once("fastplap").chain(args.iter().copied())).unwrap();
        let mut out = Vec::new();
        let r = cli::execute(cli, &mut out);
        (r, String::from_utf8(out).unwrap())
    }

    fn read_json(path: &Path) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn minimal_stationary_spec() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::parse(MINIMAL).unwrap();
        let rep = cli::run(&spec, Some(dir.path())).unwrap();
        assert_eq!(rep.summary.label, "stationary");
        assert_eq!(rep.summary.steps, 10);
        assert!(rep.summary.all_passed);
        for f in ["diagnostics.csv", "snapshots.csv", "schema.json", "summary.json"] {
            assert!(rep.dir.join(f).exists(), "{f}");
        }
        let summary = read_json(&rep.dir.join("summary.json"));
        assert_eq!(summary["spec_hash"], spec.hash());
        assert_eq!(summary["spec_hash"].as_str().unwrap().len(), 64);
        assert_eq!(summary["exponent_table"]["p"], 1.75);
        assert!(summary["exponent_table"]["exponents"]["p_c"].as_f64().unwrap() > 1.0);
        let schema = read_json(&rep.dir.join("schema.json"));
        assert_eq!(schema[0]["file"], "diagnostics.csv");
    }

    #[test]
    fn identical_specs_give_identical_bytes() {
        let text = format!(
            "seed = 11\n{}",
            MINIMAL.replace("kind = \"stationary\"\nd = 1.0", "kind = \"perturbed\"\nd = 1.0\namplitude = 0.2\nmodes = 3")
        );
        let spec = ExperimentSpec::parse(&text).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = cli::run(&spec, Some(a.path())).unwrap();
        let rb = cli::run(&spec, Some(b.path())).unwrap();
        assert_ne!(ra.summary.label, "stationary");
        for f in ["diagnostics.csv", "snapshots.csv", "summary.json"] {
            assert_eq!(fs::read(ra.dir.join(f)).unwrap(), fs::read(rb.dir.join(f)).unwrap(), "{f}");
        }
        let other = ExperimentSpec { seed: 12, ..spec };
        let c = tempfile::tempdir().unwrap();
        let rc = cli::run(&other, Some(c.path())).unwrap();
        assert_ne!(fs::read(ra.dir.join("snapshots.csv")).unwrap(), fs::read(rc.dir.join("snapshots.csv")).unwrap());
    }

    #[test]
    fn malformed_params_are_named() {
        let spec = ExperimentSpec::parse(&MINIMAL.replace("p = 1.75", "p = 2.5")).unwrap();
        let err = cli::run(&spec, Some(tempfile::tempdir().unwrap().path())).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("params") && msg.contains("1 < p < 2"), "{msg}");
    }

    #[test]
    fn other_validation_errors() {
        let bad_frame = MINIMAL.replace("equation = \"rcple\"", "equation = \"cple\"");
        let e = ExperimentSpec::parse(&bad_frame).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("datum"), "{e}");
        let bad_grid = MINIMAL.replace("nodes = 128", "nodes = 2");
        let e = ExperimentSpec::parse(&bad_grid).unwrap().validate().unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
        let unknown = MINIMAL.replace("end = 0.1", "end = 0.1\nsteps = 3");
        assert!(ExperimentSpec::parse(&unknown).is_err());
    }

    #[test]
    fn json_and_toml_are_interchangeable() {
        let spec = ExperimentSpec::parse(MINIMAL).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let again = ExperimentSpec::parse(&json).unwrap();
        assert_eq!(spec, again);
        assert_eq!(spec.hash(), again.hash());
    }

    #[test]
    fn entropy_reproduction_summary_reports_rate() {
        let text = r#"
name = "entropy-1.75"
equation = "rcple"
[params]
p = 1.75
dim = 3
[datum]
kind = "sandwich"
d_lo = 0.8
d_hi = 1.25
[grid]
r_min = 1e-4
r_max = 1e3
nodes = 1024
[solver]
dt = 1e-2
snapshot_every = 0.1
end = 8.0
[diagnostics]
snapshots = false
rate_target = 1.0
"#;
        let spec = ExperimentSpec::parse(text).unwrap();
        let rep = cli::run(&spec, Some(tempfile::tempdir().unwrap().path())).unwrap();
        let s = &rep.summary;
        assert_eq!(s.label, "converging");
        let entropy = s.fits.iter().find(|(n, _)| n == "entropy").map(|(_, f)| f).unwrap();
        assert!(entropy.rate > 0.0 && entropy.r_squared > 0.99);
        assert_eq!(entropy.window.0, 1.0);
        let target = s.invariants.iter().find(|c| c.name == "entropy_rate_target").unwrap();
        assert!(target.detail.contains(&entropy.rate.to_string()));
        assert_eq!(target.passed, (entropy.rate - 1.0).abs() <= 0.15);
        let mono = s.invariants.iter().find(|c| c.name == "entropy_nonincreasing").unwrap();
        assert!(mono.passed);
        assert!(!rep.dir.join("snapshots.csv").exists());
    }

    #[test]
    fn rate_fit_reads_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let (r, out) = exec(&[
            "evolve", "--p", "1.75", "--N", "3", "--datum", "dilated:d=1,factor=1.1", "--end", "3",
            "--nodes", "256", "--r-min", "1e-3", "--r-max", "1e2",
            "--output-dir", dir.path().to_str().unwrap(),
        ]);
        assert!(r.unwrap(), "{out}");
        assert!(out.contains("converging"), "{out}");
        let diag = dir.path().join("evolve").join("diagnostics.csv");
        for column in ["entropy", "l1", "rel-sup"] {
            let (r, out) = exec(&["rate-fit", "--diagnostics", diag.to_str().unwrap(), "--column", column, "--mode", "exp", "--window", "1,3"]);
            assert!(r.unwrap());
            let v: serde_json::Value = serde_json::from_str(&out).unwrap();
            assert!(v["rate"].as_f64().unwrap() > 0.0, "{column}: {out}");
            assert_eq!(v["window"][1], 3.0);
        }
        let (r, _) = exec(&["rate-fit", "--diagnostics", diag.to_str().unwrap(), "--column", "entropy", "--window", "10,20"]);
        assert!(matches!(r, Err(Error::Fit(_))));
        assert_eq!(cli::exit_code(&r), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(cli::exit_code(&Ok(true)), 0);
        assert_eq!(cli::exit_code(&Ok(false)), 2);
        assert_eq!(cli::exit_code(&Err(Error::Config("x".into()))), 1);
        assert!(Cli::try_parse_from(["fastplap", "rate-fit", "--diagnostics", "x", "--column", "entropy", "--window", "3,1"]).is_err());
    }

    #[test]
    fn exponents_and_profile_output() {
        let (r, out) = exec(&["exponents", "--p", "1.75", "--N", "3"]);
        assert!(r.unwrap());
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["lambda_star"], 1.0);
        let (_, out) = exec(&["exponents", "--p", "1.75", "--N", "3", "--out", "csv"]);
        assert!(out.starts_with("name,value\np,1.75\n"), "{out}");
        let (r, out) = exec(&["exponents", "--p", "2.5", "--N", "3"]);
        assert!(r.is_err() && out.is_empty());

        let (r, out) = exec(&["profile", "--p", "1.75", "--N", "3", "--d", "2", "--nodes", "16"]);
        assert!(r.unwrap());
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "r,value,derivative");
        assert_eq!(lines.len(), 18);
        // V_2(0) = 2^{-(p-1)/(2-p)} = 2^{-3}.
        assert_eq!(lines[1], "0,0.125,0");
    }

    #[test]
    fn spectrum_json() {
        let (r, out) = exec(&["hp-spectrum", "--p", "1.75", "--N", "3", "--nodes", "512", "--domain", "1e3", "--out", "json"]);
        assert!(r.unwrap());
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["domains"].as_array().unwrap().len(), 3);
        assert!(v["lambda_opt"].as_f64().unwrap() > 0.0);
        assert!(v["lambda_closed_form"].as_f64().is_some());
    }

    #[test]
    fn transform_check_csv() {
        let (r, out) = exec(&["transform-check", "--p", "1.75", "--N", "3", "--datum", "barenblatt", "--refinements", "1"]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "h,dt,nodes,discrepancy");
        assert_eq!(lines.len(), 3);
        assert!(r.unwrap(), "{out}");
    }

    #[test]
    fn experiment_runs_specs_concurrently() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.json");
        fs::write(&a, MINIMAL).unwrap();
        let mut spec = ExperimentSpec::parse(MINIMAL).unwrap();
        spec.name = "second".into();
        fs::write(&b, serde_json::to_string(&spec).unwrap()).unwrap();
        let out_dir = dir.path().join("out");
        let (r, out) = exec(&[
            "experiment", "--spec", a.to_str().unwrap(), "--spec", b.to_str().unwrap(), "--jobs", "2",
            "--output-dir", out_dir.to_str().unwrap(),
        ]);
        assert!(r.unwrap(), "{out}");
        assert!(out_dir.join("minimal").join("summary.json").exists());
        assert!(out_dir.join("second").join("summary.json").exists());
        assert_eq!(out.lines().next().unwrap().split(':').next().unwrap(), "minimal");
    }

    #[test]
    fn csv_datum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, profile) = exec(&["profile", "--p", "1.75", "--N", "3", "--nodes", "128", "--r-min", "1e-3", "--r-max", "1e2"]);
        let body: String = profile
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
            .collect();
        let path = dir.path().join("v.csv");
        fs::write(&path, body).unwrap();
        let text = MINIMAL.replace(
            "kind = \"stationary\"\nd = 1.0",
            &format!("kind = \"csv\"\npath = {:?}", path.to_str().unwrap()),
        );
        let rep = cli::run(&ExperimentSpec::parse(&text).unwrap(), Some(dir.path())).unwrap();
        assert!((rep.summary.d.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(rep.summary.label, "stationary");
    }
}
