//! Minimization of the renormalized action over the discrete admissible
//! class (monotone cone, V >= b, prescribed boundary behavior), detection of
//! the turning ordinates, and the explicit tail constructions.

use crate::error::{Result, SolverError};
use crate::grid::{self, RadialField};
use crate::nonlinearity::Nonlinearity;
use crate::potential::{self, PotentialConstants, SublevelSide};
use crate::trajectory::{self, constraint_tol, CylinderGrid, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Left-boundary handling: pinned to a lower-component crossing slice
/// (b > 0) or relaxed freely toward 0 (b = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryMode {
    ClampedMinus,
    FreeDecay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub b: f64,
    pub max_iters: usize,
    /// initial backtracking step; dy^2/2 when absent
    pub initial_step: Option<f64>,
    /// stationarity tolerance on the projected-gradient norm
    pub tol_grad: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub dy: f64,
    pub boundary: BoundaryMode,
    /// left-end decay target for FreeDecay windows
    pub decay_target: f64,
}

impl MinimizeConfig {
    pub fn new(b: f64) -> Self {
        MinimizeConfig {
            b,
            max_iters: 50_000,
            initial_step: None,
            tol_grad: 1e-5,
            y_min: 0.0,
            y_max: 8.0,
            dy: 0.04,
            boundary: if b > 0.0 {
                BoundaryMode::ClampedMinus
            } else {
                BoundaryMode::FreeDecay
            },
            decay_target: 1e-4,
        }
    }
}

/// Minimizing segment between the turning ordinates.
#[derive(Debug, Clone)]
pub struct CoreSegment {
    /// trajectory restricted to [depart_y, arrive_y] (the whole window up to
    /// arrive_y when depart_y is the -infinity sentinel)
    pub v: Trajectory,
    /// last departure ordinate from the lower component (-inf sentinel at b=0)
    pub depart_y: f64,
    /// first arrival ordinate in the upper component
    pub arrive_y: f64,
    /// attained action over (depart_y, arrive_y)
    pub action: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub b: f64,
    pub growth_events: usize,
}

/// Clipped ray trajectory through the seed profile: v(·,y) = s(y) u with
/// s(y) = clamp(y - shift, alpha, omega), the transition centered in the
/// window.
pub fn initial_trajectory(
    u_seed: &RadialField,
    b: f64,
    grid: &CylinderGrid,
    nl: &Nonlinearity,
) -> Result<Trajectory> {
    let ray = potential::ray_scan(u_seed, b, nl)?;
    let (alpha, omega) = (ray.crossing_below, ray.crossing_above);
    if grid.y_max - grid.y_min < (omega - alpha) + 4.0 * grid.dy {
        return Err(SolverError::Config(format!(
            "window length {} too short for the ray transition {}",
            grid.y_max - grid.y_min,
            omega - alpha
        )));
    }
    let shift = 0.5 * (grid.y_min + grid.y_max) - 0.5 * (alpha + omega);
    let rows = (0..grid.n_y)
        .map(|j| {
            let s = (grid.y(j) - shift).clamp(alpha, omega);
            u_seed.values.iter().map(|&u| s * u).collect()
        })
        .collect();
    Trajectory::new(grid.clone(), rows)
}

/// Explicit connecting segment between a profile and its level crossing.
#[derive(Debug, Clone)]
pub struct TailSegment {
    /// None for a degenerate zero-length segment
    pub trajectory: Option<Trajectory>,
    pub cost: f64,
    pub terminal_scale: f64,
    /// sup_y of the L2 excursion from u0
    pub excursion: f64,
}

/// Upper-side tail: the quadratic-in-y escape (1 + y^2/2) u0 on
/// y in (0, sqrt(2(s0-1))) ending on the crossing scale s0 > 1.
pub fn tail_plus(u0: &RadialField, b: f64, dy: f64, nl: &Nonlinearity) -> Result<TailSegment> {
    let v0 = potential::value(u0, nl)?;
    if v0 < b - constraint_tol(b) {
        return Err(SolverError::NoCrossing { level: b });
    }
    let ray = potential::ray_scan(u0, b, nl)?;
    if ray.peak_scale >= 1.0 {
        return Err(SolverError::Config(
            "tail_plus needs a profile on the upper side of its ray".into(),
        ));
    }
    let s0 = ray.crossing_above.max(1.0);
    let span = (2.0 * (s0 - 1.0)).sqrt();
    if span < dy {
        return Ok(TailSegment {
            trajectory: None,
            cost: 0.0,
            terminal_scale: s0,
            excursion: (s0 - 1.0) * grid::norms(u0)?.l2_sq.sqrt(),
        });
    }
    let n_y = ((span / dy).ceil() as usize + 1).max(3);
    let grid_y = CylinderGrid::new(Arc::clone(&u0.grid), 0.0, span, n_y)?;
    let mut rows: Vec<Vec<f64>> = (0..n_y)
        .map(|j| {
            let y = grid_y.y(j);
            let s = 1.0 + 0.5 * y * y;
            u0.values.iter().map(|&u| s * u).collect()
        })
        .collect();
    // pin the terminal slice on the crossing exactly
    rows[n_y - 1] = u0.values.iter().map(|&u| s0 * u).collect();
    let v = Trajectory::new(grid_y, rows)?;
    let cost = trajectory::action(&v, b, None, nl)?;
    Ok(TailSegment {
        trajectory: Some(v),
        cost,
        terminal_scale: s0,
        excursion: (s0 - 1.0) * grid::norms(u0)?.l2_sq.sqrt(),
    })
}

/// Lower-side tail: for b > 0 the mirrored descent to the crossing scale
/// s0 < 1 on y in (-sqrt(2(1-s0)), 0); for b = 0 the linear homotopy
/// (1 + y) u0 down to the zero field on y in (-1, 0).
pub fn tail_minus(u0: &RadialField, b: f64, dy: f64, nl: &Nonlinearity) -> Result<TailSegment> {
    let l2 = grid::norms(u0)?.l2_sq.sqrt();
    if b == 0.0 {
        if l2 == 0.0 {
            return Ok(TailSegment {
                trajectory: None,
                cost: 0.0,
                terminal_scale: 0.0,
                excursion: 0.0,
            });
        }
        let n_y = ((1.0 / dy).ceil() as usize + 1).max(3);
        let grid_y = CylinderGrid::new(Arc::clone(&u0.grid), -1.0, 0.0, n_y)?;
        let rows: Vec<Vec<f64>> = (0..n_y)
            .map(|j| {
                let s = (1.0 + grid_y.y(j)).max(0.0);
                u0.values.iter().map(|&u| s * u).collect()
            })
            .collect();
        let v = Trajectory::new(grid_y, rows)?;
        let cost = trajectory::action(&v, 0.0, None, nl)?;
        return Ok(TailSegment {
            trajectory: Some(v),
            cost,
            terminal_scale: 0.0,
            excursion: l2,
        });
    }

    let v0 = potential::value(u0, nl)?;
    if v0 < b - constraint_tol(b) {
        return Err(SolverError::NoCrossing { level: b });
    }
    let ray = potential::ray_scan(u0, b, nl)?;
    if ray.peak_scale <= 1.0 {
        return Err(SolverError::Config(
            "tail_minus needs a profile on the lower side of its ray".into(),
        ));
    }
    let s0 = ray.crossing_below.min(1.0);
    let span = (2.0 * (1.0 - s0)).sqrt();
    if span < dy {
        return Ok(TailSegment {
            trajectory: None,
            cost: 0.0,
            terminal_scale: s0,
            excursion: (1.0 - s0) * l2,
        });
    }
    let n_y = ((span / dy).ceil() as usize + 1).max(3);
    let grid_y = CylinderGrid::new(Arc::clone(&u0.grid), -span, 0.0, n_y)?;
    let mut rows: Vec<Vec<f64>> = (0..n_y)
        .map(|j| {
            let y = grid_y.y(j);
            let s = 1.0 - 0.5 * y * y;
            u0.values.iter().map(|&u| s * u).collect()
        })
        .collect();
    rows[0] = u0.values.iter().map(|&u| s0 * u).collect();
    let v = Trajectory::new(grid_y, rows)?;
    let cost = trajectory::action(&v, b, None, nl)?;
    Ok(TailSegment {
        trajectory: Some(v),
        cost,
        terminal_scale: s0,
        excursion: (1.0 - s0) * l2,
    })
}

/// Turning ordinates of a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TurningOrdinates {
    pub depart_y: f64,
    pub depart_idx: Option<usize>,
    pub arrive_y: f64,
    pub arrive_idx: usize,
}

/// Discrete version of the turning-ordinate definitions: the departure is
/// the last slice within the r0 ball of the lower component and below the
/// level, the arrival the first slice past it back at the level. The
/// distance to the lower component is the ray-projection surrogate
/// (1 - alpha)+ ||u||_2. At b = 0 the departure level test is exact (V <= 0),
/// which no free-decay slice satisfies, so the ordinate degenerates to the
/// -infinity sentinel.
pub fn detect_turning(
    v: &Trajectory,
    b: f64,
    k: &PotentialConstants,
    nl: &Nonlinearity,
) -> Result<TurningOrdinates> {
    let n_y = v.grid.n_y;
    let tol_level = if b > 0.0 { 1e-9 * k.c.max(1.0) } else { 0.0 };
    let tol_arrive = 1e-9 * k.c.max(1.0);

    let mut depart_idx = None;
    for j in (0..n_y).rev() {
        let u = v.slice(j);
        let pot = potential::value(&u, nl)?;
        if pot > b + tol_level {
            continue;
        }
        let l2 = grid::norms(&u)?.l2_sq.sqrt();
        let dist = if l2 == 0.0 {
            0.0
        } else {
            match potential::ray_scan(&u, b, nl) {
                Ok(ray) => (1.0 - ray.crossing_below).max(0.0) * l2,
                Err(_) => l2,
            }
        };
        if dist <= k.r0 {
            depart_idx = Some(j);
            break;
        }
    }

    let start = depart_idx.map(|j| j + 1).unwrap_or(0);
    let mut arrive_idx = None;
    for j in start..n_y {
        let pot = v.potential_at(j, nl)?;
        if pot <= b + tol_arrive {
            arrive_idx = Some(j);
            break;
        }
    }
    let arrive_idx = arrive_idx.ok_or(SolverError::NoTransition)?;

    let depart_y = depart_idx.map(|j| v.grid.y(j)).unwrap_or(f64::NEG_INFINITY);
    let arrive_y = v.grid.y(arrive_idx);
    if depart_y >= arrive_y {
        return Err(SolverError::NoTransition);
    }
    Ok(TurningOrdinates {
        depart_y,
        depart_idx,
        arrive_y,
        arrive_idx,
    })
}

struct Workspace<'a> {
    cfg: &'a MinimizeConfig,
    nl: &'a Nonlinearity,
    radial: Arc<crate::grid::RadialGrid>,
}

impl Workspace<'_> {
    /// strong-form action gradient -∂_y^2 v - Δ v + v - f(v) per interior
    /// slice; pinned slices get zero rows
    fn gradient(&self, v: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let n_y = v.grid.n_y;
        let dy2 = v.grid.dy * v.grid.dy;
        let free_left = self.cfg.boundary == BoundaryMode::FreeDecay;
        let lo = if free_left { 0 } else { 1 };
        let rows: Vec<Result<Vec<f64>>> = (0..n_y)
            .into_par_iter()
            .map(|j| {
                if j < lo || j == n_y - 1 {
                    return Ok(vec![0.0; self.radial.n_r]);
                }
                let slice = v.slice(j);
                let spatial = potential::gradient(&slice, self.nl)?;
                let prev = if j == 0 { j } else { j - 1 }; // Neumann ghost at a free end
                let next = j + 1;
                Ok((0..self.radial.n_r)
                    .map(|i| {
                        let ydd =
                            (v.values[next][i] - 2.0 * v.values[j][i] + v.values[prev][i]) / dy2;
                        spatial.values[i] - ydd
                    })
                    .collect())
            })
            .collect();
        rows.into_iter().collect()
    }

    /// cone projection, constraint rescale and endpoint pinning; the cone
    /// action never raises the slice potential beyond rounding
    fn project(&self, v: &mut Trajectory) -> Result<()> {
        let b = self.cfg.b;
        let tol = constraint_tol(b);
        let n_y = v.grid.n_y;

        let projected: Vec<Result<Vec<f64>>> = v
            .values
            .par_iter()
            .map(|row| {
                let monotone =
                    row.windows(2).all(|w| w[0] >= w[1]) && *row.last().unwrap() >= 0.0;
                let field = RadialField {
                    grid: Arc::clone(&self.radial),
                    values: row.clone(),
                };
                let coned = if monotone {
                    field
                } else {
                    #[cfg(debug_assertions)]
                    let before = potential::value(&field, self.nl)?;
                    let after = grid::rearrange(&field);
                    #[cfg(debug_assertions)]
                    {
                        let v_after = potential::value(&after, self.nl)?;
                        debug_assert!(
                            v_after <= before + 1e-7 * (1.0 + before.abs()),
                            "cone projection raised V: {before} -> {v_after}"
                        );
                    }
                    after
                };
                let pot = potential::value(&coned, self.nl)?;
                if pot < b - tol {
                    let side = potential::classify(&coned, b, self.nl)?;
                    let ray = potential::ray_scan(&coned, b, self.nl)?;
                    let t = match side {
                        SublevelSide::Minus => ray.crossing_below,
                        _ => ray.crossing_above,
                    };
                    Ok(coned.values.iter().map(|&u| t * u).collect())
                } else {
                    Ok(coned.values)
                }
            })
            .collect();
        for (j, row) in projected.into_iter().enumerate() {
            match row {
                Ok(r) => v.values[j] = r,
                Err(SolverError::NotAboveLevel { .. }) => {
                    // ray peaks below b: reseed from the nearest neighbor
                    let donor = if j == 0 { 1 } else { j - 1 };
                    v.values[j] = v.values[donor].clone();
                }
                Err(e) => return Err(e),
            }
        }

        // endpoint management: crossing rescales of the adjacent slices
        if self.cfg.boundary == BoundaryMode::ClampedMinus {
            let inner = RadialField {
                grid: Arc::clone(&self.radial),
                values: v.values[1].clone(),
            };
            let ray = potential::ray_scan(&inner, b, self.nl)
                .map_err(|_| SolverError::ConstraintProjectionFailed { slice: 0 })?;
            v.values[0] = inner
                .values
                .iter()
                .map(|&u| ray.crossing_below * u)
                .collect();
        }
        let inner = RadialField {
            grid: Arc::clone(&self.radial),
            values: v.values[n_y - 2].clone(),
        };
        let ray = potential::ray_scan(&inner, b, self.nl)
            .map_err(|_| SolverError::ConstraintProjectionFailed { slice: n_y - 1 })?;
        v.values[n_y - 1] = inner
            .values
            .iter()
            .map(|&u| ray.crossing_above * u)
            .collect();
        Ok(())
    }

    fn cylinder_norm(&self, rows: &[Vec<f64>], dy: f64) -> f64 {
        let mut acc = 0.0;
        for row in rows {
            for (i, &x) in row.iter().enumerate() {
                acc += dy * self.radial.quad_weights[i] * x * x;
            }
        }
        acc.sqrt()
    }

    fn stepped(&self, v: &Trajectory, g: &[Vec<f64>], s: f64) -> Trajectory {
        let rows = v
            .values
            .iter()
            .zip(g)
            .map(|(row, grow)| row.iter().zip(grow).map(|(&x, &d)| x - s * d).collect())
            .collect();
        Trajectory {
            grid: v.grid.clone(),
            values: rows,
        }
    }

    fn projected_gradient_norm(&self, v: &Trajectory, s0: f64) -> Result<f64> {
        let g = self.gradient(v)?;
        let mut cand = self.stepped(v, &g, s0);
        self.project(&mut cand)?;
        let diff: Vec<Vec<f64>> = cand
            .values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(self.cylinder_norm(&diff, v.grid.dy) / s0)
    }
}

/// Projected, accelerated gradient descent on the renormalized action.
/// Descent is enforced by backtracking from the configured initial step (the
/// momentum restarts whenever it would break monotonicity); the window grows
/// when the transition drifts to its edge or a free-decay tail has not
/// flattened out.
pub fn minimize(
    cfg: &MinimizeConfig,
    seed: &RadialField,
    k: &PotentialConstants,
    nl: &Nonlinearity,
    resume: Option<Trajectory>,
    mut on_checkpoint: impl FnMut(usize, &Trajectory, f64),
) -> Result<CoreSegment> {
    let b = cfg.b;
    let radial = Arc::clone(&seed.grid);
    let n_y = ((cfg.y_max - cfg.y_min) / cfg.dy).round() as usize + 1;
    let grid_y = CylinderGrid::new(Arc::clone(&radial), cfg.y_min, cfg.y_max, n_y)?;

    let ws = Workspace {
        cfg,
        nl,
        radial: Arc::clone(&radial),
    };

    let mut v = match resume {
        Some(t) => t,
        None => initial_trajectory(seed, b, &grid_y, nl)?,
    };
    ws.project(&mut v)?;
    let mut phi = trajectory::action(&v, b, None, nl)?;

    let s0 = cfg.initial_step.unwrap_or(0.5 * v.grid.dy * v.grid.dy);
    let mut step = s0;
    let mut v_prev = v.clone();
    let mut t_momentum = 1.0f64;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    let mut growth_events = 0usize;
    let mut iterations = 0usize;

    while iterations < cfg.max_iters {
        iterations += 1;

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_momentum * t_momentum).sqrt());
        let beta = (t_momentum - 1.0) / t_next;
        let z = if beta > 0.0 {
            let rows = v
                .values
                .iter()
                .zip(&v_prev.values)
                .map(|(a, bb)| {
                    a.iter()
                        .zip(bb)
                        .map(|(&x, &y)| x + beta * (x - y))
                        .collect()
                })
                .collect();
            Trajectory {
                grid: v.grid.clone(),
                values: rows,
            }
        } else {
            v.clone()
        };

        let mut accepted = false;
        let bases = [z, v.clone()];
        'attempts: for (which, base) in bases.iter().enumerate() {
            let g = ws.gradient(base)?;
            let mut s = step.min(s0);
            for _ in 0..28 {
                let mut cand = ws.stepped(base, &g, s);
                if ws.project(&mut cand).is_err() {
                    s *= 0.5;
                    continue;
                }
                let phi_cand = trajectory::action(&cand, b, None, nl)?;
                if phi_cand <= phi + 1e-12 {
                    v_prev = std::mem::replace(&mut v, cand);
                    phi = phi_cand;
                    step = (s * 2.0).min(s0);
                    t_momentum = if which == 0 { t_next } else { 1.0 };
                    accepted = true;
                    break 'attempts;
                }
                s *= 0.5;
            }
            t_momentum = 1.0; // momentum step failed; retry plain
        }

        let check_now = iterations % 25 == 0 || !accepted;
        if check_now {
            grad_norm = ws.projected_gradient_norm(&v, s0)?;
            if grad_norm < cfg.tol_grad {
                converged = true;
                break;
            }
            if !accepted {
                break; // stalled above tolerance
            }
        }

        if iterations % 50 == 0 {
            on_checkpoint(iterations, &v, phi);
            if let Some(grown) = grow_window(&ws, &v, cfg)? {
                v = grown;
                ws.project(&mut v)?;
                phi = trajectory::action(&v, b, None, nl)?;
                v_prev = v.clone();
                t_momentum = 1.0;
                growth_events += 1;
            }
        }
    }
    if !converged {
        grad_norm = ws.projected_gradient_norm(&v, s0)?;
        converged = grad_norm < cfg.tol_grad;
    }
    on_checkpoint(iterations, &v, phi);

    let turning = detect_turning(&v, b, k, nl)?;
    let lo = turning.depart_idx.unwrap_or(0);
    let hi = turning.arrive_idx;
    let window = (
        if turning.depart_idx.is_some() {
            turning.depart_y
        } else {
            v.grid.y_min
        },
        turning.arrive_y,
    );
    let action = trajectory::action(&v, b, Some(window), nl)?;

    let sub_grid = CylinderGrid::new(
        Arc::clone(&radial),
        v.grid.y(lo),
        v.grid.y(hi),
        hi - lo + 1,
    )?;
    let trimmed = Trajectory::new(sub_grid, v.values[lo..=hi].to_vec())?;

    Ok(CoreSegment {
        v: trimmed,
        depart_y: turning.depart_y,
        arrive_y: turning.arrive_y,
        action,
        iterations,
        converged,
        grad_norm,
        b,
        growth_events,
    })
}

/// Extend the window with admissible padding when the transition touches an
/// edge (pinned boundaries) or the free tail has not decayed.
fn grow_window(
    ws: &Workspace,
    v: &Trajectory,
    cfg: &MinimizeConfig,
) -> Result<Option<Trajectory>> {
    let n_y = v.grid.n_y;
    let pad = (n_y / 4).max(8);

    // locate the transition by the largest slice-to-slice motion
    let mut j_star = 0usize;
    let mut best = -1.0;
    for j in 0..n_y - 1 {
        let mut d2 = 0.0;
        for i in 0..ws.radial.n_r {
            let d = v.values[j + 1][i] - v.values[j][i];
            d2 += ws.radial.quad_weights[i] * d * d;
        }
        if d2 > best {
            best = d2;
            j_star = j;
        }
    }

    let mut grow_left = j_star < n_y / 6;
    let grow_right = j_star > n_y - 1 - n_y / 6;
    if cfg.boundary == BoundaryMode::FreeDecay {
        let l2: f64 = {
            let mut acc = 0.0;
            for i in 0..ws.radial.n_r {
                acc += ws.radial.quad_weights[i] * v.values[0][i] * v.values[0][i];
            }
            acc.sqrt()
        };
        grow_left = grow_left || l2 > cfg.decay_target;
    }
    if !grow_left && !grow_right {
        return Ok(None);
    }

    let (mut y_min, mut y_max) = (v.grid.y_min, v.grid.y_max);
    let mut rows = v.values.clone();
    if grow_left {
        y_min -= pad as f64 * v.grid.dy;
        let first = rows[0].clone();
        let mut head: Vec<Vec<f64>> = Vec::with_capacity(pad + rows.len());
        for kk in (1..=pad).rev() {
            let scale = if cfg.boundary == BoundaryMode::FreeDecay {
                // seed the new tail with the linearized decay rate
                (-(kk as f64) * v.grid.dy).exp()
            } else {
                1.0
            };
            head.push(first.iter().map(|&x| scale * x).collect());
        }
        head.extend(rows);
        rows = head;
    }
    if grow_right {
        y_max += pad as f64 * v.grid.dy;
        let last = rows.last().unwrap().clone();
        for _ in 0..pad {
            rows.push(last.clone());
        }
    }
    let grid_y = CylinderGrid::new(Arc::clone(&ws.radial), y_min, y_max, rows.len())?;
    Ok(Some(Trajectory::new(grid_y, rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::Nonlinearity;
    use crate::potential::{estimate_constants, ground_state, SamplingBudget};

    fn cubic() -> Nonlinearity {
        Nonlinearity::pure_power(3.0).unwrap()
    }

    fn setup(n_r: usize) -> (Nonlinearity, potential::GroundState, PotentialConstants) {
        let nl = cubic();
        let gs = ground_state(1, &nl, 12.0, n_r).unwrap();
        let budget = SamplingBudget {
            profiles: 16,
            scales: 32,
            ..Default::default()
        };
        let k = estimate_constants(gs.c / 2.0, &gs, &nl, &budget).unwrap();
        (nl, gs, k)
    }

    #[test]
    fn initial_trajectory_is_admissible_and_classified() {
        let (nl, gs, k) = setup(240);
        let b = k.b;
        let radial = Arc::clone(&gs.field.grid);
        let g = CylinderGrid::new(radial, 0.0, 5.0, 126).unwrap();
        let v = initial_trajectory(&gs.field, b, &g, &nl).unwrap();
        assert!(v.all_slices_monotone());
        for j in 0..g.n_y {
            let pot = v.potential_at(j, &nl).unwrap();
            assert!(pot >= b - 1e-10, "slice {j}: V = {pot} < b = {b}");
        }
        // endpoint slices sit on the crossing up to rounding; classify with
        // the membership slack
        let first = v.slice(0);
        let last = v.slice(g.n_y - 1);
        assert_eq!(
            potential::classify(&first, b + constraint_tol(b), &nl).unwrap(),
            SublevelSide::Minus
        );
        assert_eq!(
            potential::classify(&last, b + constraint_tol(b), &nl).unwrap(),
            SublevelSide::Plus
        );
    }

    #[test]
    fn tail_plus_cost_and_excursion_bounds() {
        let (nl, gs, k) = setup(240);
        let b = k.b;
        // a profile strictly inside the upper band (V between b and beta)
        let ray_beta = potential::ray_scan(&gs.field, k.beta, &nl).unwrap();
        let u0 = gs.field.scaled(ray_beta.crossing_above);
        let v0 = potential::value(&u0, &nl).unwrap();
        assert!(v0 > b && v0 <= k.beta + 1e-9);
        let tail = tail_plus(&u0, b, 0.002, &nl).unwrap();
        let bound = k.c_plus * (v0 - b).powf(1.5);
        assert!(
            tail.cost <= bound + 1e-3,
            "cost {} vs bound {bound}",
            tail.cost
        );
        // terminal slice sits on the level
        let terminal = u0.scaled(tail.terminal_scale);
        let vt = potential::value(&terminal, &nl).unwrap();
        assert!((vt - b).abs() < 1e-10 * k.c.max(1.0), "V(s0 u0) = {vt}");
        // excursion identity sup_y ||w(y) - u0|| = (s0 - 1)||u0||
        let l2 = grid::norms(&u0).unwrap().l2_sq.sqrt();
        let expect = (tail.terminal_scale - 1.0) * l2;
        assert!((tail.excursion - expect).abs() < 1e-10);
        if let Some(t) = &tail.trajectory {
            let mut sup = 0.0f64;
            for j in 0..t.grid.n_y {
                let s = t.slice(j);
                let mut d2 = 0.0;
                for i in 0..s.len() {
                    let d = s.values[i] - u0.values[i];
                    d2 += s.grid.quad_weights[i] * d * d;
                }
                sup = sup.max(d2.sqrt());
            }
            assert!((sup - expect).abs() < 1e-10, "sup {sup} vs {expect}");
        }
    }

    #[test]
    fn tail_plus_degenerates_on_the_level() {
        let (nl, gs, k) = setup(240);
        let ray = potential::ray_scan(&gs.field, k.b, &nl).unwrap();
        let u0 = gs.field.scaled(ray.crossing_above);
        let tail = tail_plus(&u0, k.b, 0.01, &nl).unwrap();
        assert!(tail.trajectory.is_none());
        assert_eq!(tail.cost, 0.0);
    }

    #[test]
    fn tail_minus_homotopy_bounds_at_zero_level() {
        let (nl, gs, k) = setup(240);
        // small member of the lower component
        let level = k.beta_minus.unwrap_or(k.beta / 4.0).min(gs.c / 8.0);
        let ray = potential::ray_scan(&gs.field, level, &nl).unwrap();
        let u0 = gs.field.scaled(ray.crossing_below);
        let v0 = potential::value(&u0, &nl).unwrap();
        let l2_sq = grid::norms(&u0).unwrap().l2_sq;
        let tail = tail_minus(&u0, 0.0, 0.002, &nl).unwrap();
        assert!(
            tail.cost <= 0.5 * l2_sq + v0 + 1e-3,
            "cost {} vs crude bound {}",
            tail.cost,
            0.5 * l2_sq + v0
        );
        if l2_sq <= 4.0 * v0 {
            assert!(tail.cost <= 3.0 * v0 + 1e-3, "cost {} vs 3V", tail.cost);
        }
        // terminal slice is the zero field
        let t = tail.trajectory.unwrap();
        assert!(t.values[0].iter().all(|&x| x == 0.0));

        let zero = gs.field.grid.zero_field();
        let empty = tail_minus(&zero, 0.0, 0.01, &nl).unwrap();
        assert!(empty.trajectory.is_none() && empty.cost == 0.0);
    }

    #[test]
    fn tail_minus_positive_level_reaches_crossing() {
        let (nl, gs, k) = setup(240);
        let b = k.b;
        let ray_beta = potential::ray_scan(&gs.field, k.beta, &nl).unwrap();
        let u0 = gs.field.scaled(ray_beta.crossing_below);
        assert!(potential::value(&u0, &nl).unwrap() > b);
        let tail = tail_minus(&u0, b, 0.002, &nl).unwrap();
        let terminal = u0.scaled(tail.terminal_scale);
        let vt = potential::value(&terminal, &nl).unwrap();
        assert!((vt - b).abs() < 1e-10 * k.c.max(1.0));
        assert_eq!(
            potential::classify(&terminal, b, &nl).unwrap(),
            SublevelSide::Minus
        );
    }

    #[test]
    fn minimize_short_run_descends_and_stays_admissible() {
        let (nl, gs, k) = setup(160);
        let mut cfg = MinimizeConfig::new(k.b);
        cfg.y_min = 0.0;
        cfg.y_max = 4.0;
        cfg.dy = 0.05;
        cfg.max_iters = 300;
        cfg.tol_grad = 1e-12; // force the full 300 iterations
        let mut phis: Vec<(usize, f64)> = Vec::new();
        let seg = minimize(&cfg, &gs.field, &k, &nl, None, |it, _, phi| {
            phis.push((it, phi));
        })
        .unwrap();
        assert!(seg.iterations >= 300);
        if seg.growth_events == 0 {
            for w in phis.windows(2) {
                assert!(w[1].1 <= w[0].1 + 1e-9, "phi rose: {:?}", w);
            }
        }
        assert!(seg.v.all_slices_monotone());
        for j in 0..seg.v.grid.n_y {
            let pot = seg.v.potential_at(j, &nl).unwrap();
            assert!(pot >= k.b - 1e-8, "slice {j} V = {pot}");
        }
        assert!(seg.action > 0.0);
        assert!(seg.depart_y < seg.arrive_y);
    }

    #[test]
    fn detect_turning_on_the_initial_ray() {
        let (nl, gs, k) = setup(240);
        let b = k.b;
        let radial = Arc::clone(&gs.field.grid);
        let g = CylinderGrid::new(radial, 0.0, 5.0, 251).unwrap();
        let v = initial_trajectory(&gs.field, b, &g, &nl).unwrap();
        let ray = potential::ray_scan(&gs.field, b, &nl).unwrap();
        let turning = detect_turning(&v, b, &k, &nl).unwrap();
        let shift = 0.5 * (g.y_min + g.y_max) - 0.5 * (ray.crossing_below + ray.crossing_above);
        let expect_depart = ray.crossing_below + shift;
        let expect_arrive = ray.crossing_above + shift;
        assert!(
            (turning.depart_y - expect_depart).abs() <= g.dy + 1e-9,
            "depart {} vs {}",
            turning.depart_y,
            expect_depart
        );
        assert!(
            (turning.arrive_y - expect_arrive).abs() <= g.dy + 1e-9,
            "arrive {} vs {}",
            turning.arrive_y,
            expect_arrive
        );
        assert!(turning.depart_y < turning.arrive_y);
    }
}
