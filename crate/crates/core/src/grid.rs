//! Radial grids, sampled radial functions and finite-difference stencils.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::Params;

pub const DEFAULT_R_MIN: f64 = 1e-4;
pub const DEFAULT_R_MAX: f64 = 1e3;
pub const DEFAULT_NODES: usize = 2048;

/// Nodes `0 = r_0 < r_1 < ... < r_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub r: Vec<f64>,
}

impl RadialGrid {
    /// The origin plus `nodes` radii spaced geometrically on `[r_min, r_max]`.
    pub fn log_spaced(r_min: f64, r_max: f64, nodes: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || nodes < 4 {
            return Err(Error::InvalidParams(format!(
                "log grid needs 0 < r_min < r_max and at least 4 nodes, got [{r_min}, {r_max}] with {nodes}"
            )));
        }
        let (a, b) = (r_min.ln(), r_max.ln());
        let step = (b - a) / (nodes - 1) as f64;
        let mut r = Vec::with_capacity(nodes + 1);
        r.push(0.0);
        for k in 0..nodes {
            r.push(if k + 1 == nodes { r_max } else { (a + step * k as f64).exp() });
        }
        Ok(Self { r })
    }

    pub fn default_grid() -> Self {
        Self::log_spaced(DEFAULT_R_MIN, DEFAULT_R_MAX, DEFAULT_NODES).expect("valid defaults")
    }

    pub fn from_nodes(r: Vec<f64>) -> Result<Self> {
        if r.len() < 5 || r[0] != 0.0 {
            return Err(Error::InvalidParams(
                "radial grid needs r_0 = 0 and at least 5 nodes".into(),
            ));
        }
        if r.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidParams("radial grid must be strictly increasing".into()));
        }
        Ok(Self { r })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().expect("nonempty grid")
    }

    /// Interleaves geometric midpoints, halving the logarithmic spacing.
    /// Every original node is kept, so coarse and fine results compare
    /// node by node: coarse node `k >= 1` sits at fine index `2k - 1`.
    pub fn refined(&self) -> Self {
        let mut r = Vec::with_capacity(2 * self.r.len());
        r.push(0.0);
        for w in self.r[1..].windows(2) {
            r.push(w[0]);
            r.push((w[0] * w[1]).sqrt());
        }
        r.push(self.r_max());
        Self { r }
    }

    /// Grid rescaled pointwise by a positive factor.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r: self.r.iter().map(|x| x * factor).collect(),
        }
    }

    /// Grid mapped by `r -> r^power` (power > 0), which keeps log spacing.
    pub fn powered(&self, power: f64) -> Self {
        Self {
            r: self.r.iter().map(|x| x.powf(power)).collect(),
        }
    }

    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.r.iter().map(|&x| f(x)).collect()
    }
}

/// Time coordinate attached to a sampled profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    /// Original variables `(t, x)`.
    Original { t: f64 },
    /// Self-similar variables `(tau, y)`.
    SelfSimilar { tau: f64 },
}

impl Frame {
    pub fn time(&self) -> f64 {
        match *self {
            Frame::Original { t } => t,
            Frame::SelfSimilar { tau } => tau,
        }
    }
}

/// A radial profile sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGridFunction {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
    pub frame: Frame,
    pub params: Params,
}

impl RadialGridFunction {
    pub fn new(grid: RadialGrid, values: Vec<f64>, frame: Frame, params: Params) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParams(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParams(format!(
                "profile values must be finite and nonnegative, found {v}"
            )));
        }
        if frame.time() < 0.0 {
            return Err(Error::InvalidParams("frame time stamp must be >= 0".into()));
        }
        Ok(Self {
            grid,
            values,
            frame,
            params,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: RadialGrid, frame: Frame, params: Params, f: F) -> Result<Self> {
        let values = grid.sample(f);
        Self::new(grid, values, frame, params)
    }

    pub fn r(&self) -> &[f64] {
        &self.grid.r
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn derivative(&self) -> Vec<f64> {
        radial_derivative(&self.grid.r, &self.values)
    }
}

/// Fornberg weights for the first derivative at `x0` from `nodes`.
pub fn first_derivative_weights(x0: f64, nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    // c[j][k]: weight of node j for derivative order k (k = 0, 1).
    let mut c = vec![[0.0f64; 2]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Fourth-order radial derivative of an even radial function: five-point
/// stencils, centred where possible, with the even reflection `f(-r) = f(r)`
/// near the origin and one-sided stencils at the outer end. `f'(0) = 0`.
pub fn radial_derivative(r: &[f64], f: &[f64]) -> Vec<f64> {
    let n = r.len();
    assert_eq!(n, f.len());
    assert!(n >= 5, "stencil needs 5 nodes");
    // Extended arrays: -r_2, -r_1, r_0, r_1, ...
    let mut xe = Vec::with_capacity(n + 2);
    let mut fe = Vec::with_capacity(n + 2);
    xe.push(-r[2]);
    fe.push(f[2]);
    xe.push(-r[1]);
    fe.push(f[1]);
    xe.extend_from_slice(r);
    fe.extend_from_slice(f);
    let ne = xe.len();
    let mut d = vec![0.0; n];
    for i in 1..n {
        let c = i + 2;
        let start = c.saturating_sub(2).min(ne - 5);
        let nodes = &xe[start..start + 5];
        let w = first_derivative_weights(xe[c], nodes);
        d[i] = w.iter().zip(&fe[start..start + 5]).map(|(a, b)| a * b).sum();
    }
    d
}

/// Linear interpolation in `ln r` of positive data, used to move profiles
/// between grids; falls back to linear in `r` next to the origin.
pub fn interpolate_log(r: &[f64], f: &[f64], x: f64) -> f64 {
    let n = r.len();
    if x <= r[0] {
        return f[0];
    }
    if x >= r[n - 1] {
        return f[n - 1];
    }
    let k = r.partition_point(|&v| v <= x).max(1) - 1;
    let (a, b) = (r[k], r[k + 1]);
    if a <= 0.0 || f[k] <= 0.0 || f[k + 1] <= 0.0 {
        let w = (x - a) / (b - a);
        return f[k] * (1.0 - w) + f[k + 1] * w;
    }
    let w = (x / a).ln() / (b / a).ln();
    (f[k].ln() * (1.0 - w) + f[k + 1].ln() * w).exp()
}
