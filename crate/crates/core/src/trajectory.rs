//! Discretized layered functions v(r, y) on the cylinder, the renormalized
//! action, the per-slice energy profile and the PDE residual.

use crate::error::{Result, SolverError};
use crate::grid::{RadialField, RadialGrid};
use crate::nonlinearity::Nonlinearity;
use crate::potential;
use std::sync::Arc;

/// Tolerance for the trajectory-class membership test V >= b.
pub fn constraint_tol(b: f64) -> f64 {
    1e-9 * (1.0 + b.abs())
}

/// Product grid: radial nodes times a uniform y partition.
#[derive(Debug, Clone)]
pub struct CylinderGrid {
    pub radial: Arc<RadialGrid>,
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub dy: f64,
}

impl CylinderGrid {
    pub fn new(radial: Arc<RadialGrid>, y_min: f64, y_max: f64, n_y: usize) -> Result<Self> {
        if n_y < 3 || !(y_max > y_min) {
            return Err(SolverError::Config(format!(
                "invalid cylinder grid: y in [{y_min}, {y_max}], n_y = {n_y}"
            )));
        }
        let dy = (y_max - y_min) / (n_y - 1) as f64;
        Ok(CylinderGrid {
            radial,
            y_min,
            y_max,
            n_y,
            dy,
        })
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy
    }

    /// index range of slices with y inside [a, b]
    pub fn window_indices(&self, a: f64, b: f64) -> (usize, usize) {
        let eps = 1e-9 * self.dy;
        let lo = (0..self.n_y).find(|&j| self.y(j) >= a - eps).unwrap_or(0);
        let hi = (0..self.n_y)
            .rev()
            .find(|&j| self.y(j) <= b + eps)
            .unwrap_or(self.n_y - 1);
        (lo, hi)
    }
}

/// Candidate layered solution: one radial profile per y slice.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: CylinderGrid,
    /// values[j][i] = v(r_i, y_j)
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: CylinderGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.n_y || values.iter().any(|row| row.len() != grid.radial.n_r) {
            return Err(SolverError::GridMismatch {
                context: "trajectory matrix shape".into(),
            });
        }
        Ok(Trajectory { grid, values })
    }

    pub fn from_fn(grid: CylinderGrid, f: impl Fn(f64, f64) -> f64) -> Trajectory {
        let values = (0..grid.n_y)
            .map(|j| {
                let y = grid.y(j);
                grid.radial.nodes.iter().map(|&r| f(r, y)).collect()
            })
            .collect();
        Trajectory { grid, values }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        for row in &self.values {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(SolverError::InvalidField {
                    context: context.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn slice(&self, j: usize) -> RadialField {
        RadialField {
            grid: Arc::clone(&self.grid.radial),
            values: self.values[j].clone(),
        }
    }

    /// every slice lies in the discrete monotone cone
    pub fn all_slices_monotone(&self) -> bool {
        self.values
            .iter()
            .all(|row| row.windows(2).all(|w| w[0] >= w[1]) && *row.last().unwrap_or(&0.0) >= 0.0)
    }

    /// reverse the y direction
    pub fn reversed(&self) -> Trajectory {
        let mut values = self.values.clone();
        values.reverse();
        Trajectory {
            grid: self.grid.clone(),
            values,
        }
    }

    /// 1/2 || ∂_y v(·, y_j) ||_2^2, centered in the interior and one-sided at
    /// the trajectory ends
    pub fn kinetic_at(&self, j: usize) -> f64 {
        let g = &self.grid;
        let w = &g.radial.quad_weights;
        let n_y = g.n_y;
        let mut acc = 0.0;
        for i in 0..g.radial.n_r {
            let d = if j == 0 {
                (self.values[1][i] - self.values[0][i]) / g.dy
            } else if j == n_y - 1 {
                (self.values[n_y - 1][i] - self.values[n_y - 2][i]) / g.dy
            } else {
                (self.values[j + 1][i] - self.values[j - 1][i]) / (2.0 * g.dy)
            };
            acc += w[i] * d * d;
        }
        0.5 * acc
    }

    pub fn potential_at(&self, j: usize, nl: &Nonlinearity) -> Result<f64> {
        potential::value(&self.slice(j), nl)
    }
}

/// Renormalized action over a window (the whole trajectory when `window` is
/// None, in which case membership V >= b is enforced): trapezoidal
/// y-quadrature of 1/2 ||∂_y v||_2^2 + (V(v(·,y)) - b).
pub fn action(
    v: &Trajectory,
    b: f64,
    window: Option<(f64, f64)>,
    nl: &Nonlinearity,
) -> Result<f64> {
    v.check_finite("action")?;
    let (lo, hi) = match window {
        Some((a, bb)) => v.grid.window_indices(a, bb),
        None => (0, v.grid.n_y - 1),
    };
    let tol = constraint_tol(b);
    let mut integrand = Vec::with_capacity(hi - lo + 1);
    for j in lo..=hi {
        let pot = v.potential_at(j, nl)?;
        if window.is_none() && pot < b - tol {
            return Err(SolverError::ConstraintViolated {
                slice: j,
                deficit: pot - b,
            });
        }
        integrand.push(v.kinetic_at(j) + (pot - b));
    }
    let mut acc = 0.0;
    for k in 0..integrand.len().saturating_sub(1) {
        acc += 0.5 * v.grid.dy * (integrand[k] + integrand[k + 1]);
    }
    Ok(acc)
}

/// Per-slice kinetic, potential and energy E = kinetic - potential.
#[derive(Debug, Clone)]
pub struct EnergyProfile {
    pub y: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub potential: Vec<f64>,
    pub energy: Vec<f64>,
}

impl EnergyProfile {
    /// largest |E(y) + b| over interior slices
    pub fn max_energy_deviation(&self, b: f64) -> f64 {
        self.energy
            .iter()
            .skip(1)
            .take(self.energy.len().saturating_sub(2))
            .map(|e| (e + b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn energy_profile(v: &Trajectory, nl: &Nonlinearity) -> Result<EnergyProfile> {
    v.check_finite("energy_profile")?;
    let n_y = v.grid.n_y;
    let mut kinetic = Vec::with_capacity(n_y);
    let mut pot = Vec::with_capacity(n_y);
    for j in 0..n_y {
        kinetic.push(v.kinetic_at(j));
        pot.push(v.potential_at(j, nl)?);
    }
    let energy = kinetic.iter().zip(&pot).map(|(k, p)| k - p).collect();
    Ok(EnergyProfile {
        y: (0..n_y).map(|j| v.grid.y(j)).collect(),
        kinetic,
        potential: pot,
        energy,
    })
}

/// PDE residual R = -(∂_y^2 v + Δ_r v) + v - f(v) on interior slices (the
/// spatial rows match the potential gradient, so equilibria extended constant
/// in y have vanishing residual). Boundary slices are left zero; `l2` is the
/// cylinder-weighted norm over the interior.
pub fn pde_residual(v: &Trajectory, nl: &Nonlinearity) -> Result<(Trajectory, f64)> {
    residual_impl(v, nl, false)
}

/// Same residual with periodic wraparound in y, for assembled periodic
/// solutions whose first and last slices coincide.
pub fn pde_residual_periodic(v: &Trajectory, nl: &Nonlinearity) -> Result<(Trajectory, f64)> {
    residual_impl(v, nl, true)
}

fn residual_impl(v: &Trajectory, nl: &Nonlinearity, periodic: bool) -> Result<(Trajectory, f64)> {
    v.check_finite("pde_residual")?;
    let g = &v.grid;
    let (n_y, n_r) = (g.n_y, g.radial.n_r);
    if n_y < 3 {
        return Err(SolverError::Config("pde_residual needs n_y >= 3".into()));
    }
    let dy2 = g.dy * g.dy;
    let mut rows = vec![vec![0.0; n_r]; n_y];
    let mut l2 = 0.0;
    let js: Vec<usize> = if periodic {
        (0..n_y - 1).collect()
    } else {
        (1..n_y - 1).collect()
    };
    for &j in &js {
        let spatial = potential::gradient(&v.slice(j), nl)?;
        let prev = if j == 0 { n_y - 2 } else { j - 1 };
        let next = j + 1;
        for i in 0..n_r {
            let ydd = (v.values[next][i] - 2.0 * v.values[j][i] + v.values[prev][i]) / dy2;
            let r = spatial.values[i] - ydd;
            rows[j][i] = r;
            l2 += g.dy * g.radial.quad_weights[i] * r * r;
        }
    }
    if periodic {
        rows[n_y - 1] = rows[0].clone();
    }
    let field = Trajectory::new(g.clone(), rows)?;
    Ok((field, l2.sqrt()))
}

/// Largest violation of the slice continuity bound
/// ||v(y2) - v(y1)||^2 <= ||∂_y v||^2_{L2(window)} |y2 - y1| over slice
/// pairs; nonpositive up to quadrature slack. The window seminorm uses face
/// differences, for which the discrete Cauchy-Schwarz bound is exact.
pub fn slice_continuity_check(v: &Trajectory) -> Result<f64> {
    v.check_finite("slice_continuity_check")?;
    let g = &v.grid;
    let (n_y, n_r) = (g.n_y, g.radial.n_r);
    let w = &g.radial.quad_weights;

    let mut prefix = vec![0.0; n_y];
    for j in 1..n_y {
        let mut acc = 0.0;
        for i in 0..n_r {
            let d = v.values[j][i] - v.values[j - 1][i];
            acc += w[i] * d * d;
        }
        prefix[j] = prefix[j - 1] + acc / g.dy;
    }

    let mut worst = f64::NEG_INFINITY;
    for j1 in 0..n_y {
        for j2 in (j1 + 1)..n_y {
            let mut dist2 = 0.0;
            for i in 0..n_r {
                let d = v.values[j2][i] - v.values[j1][i];
                dist2 += w[i] * d * d;
            }
            let bound = (prefix[j2] - prefix[j1]) * (j2 - j1) as f64 * g.dy;
            worst = worst.max(dist2 - bound);
        }
    }
    Ok(worst)
}
