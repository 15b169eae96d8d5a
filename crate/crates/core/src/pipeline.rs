//! End-to-end orchestration: ground state, constants, the b sweep with
//! minimize/assemble/verify per level, and the summary artifacts.

use crate::builder::{self, BrakeOrbitSolution, Check, VerdictReport};
use crate::config::RunConfig;
use crate::error::{Result, SolverError};
use crate::io;
use crate::minimizer::{self, BoundaryMode, MinimizeConfig};
use crate::nonlinearity::{self, Nonlinearity};
use crate::potential::{self, GroundState, PotentialConstants, SamplingBudget};
use crate::trajectory;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Environment variable overriding the configured output directory.
pub const OUTPUT_ROOT_ENV: &str = "LAYERED_OUTPUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub b_frac: f64,
    pub b: f64,
    pub m_b: f64,
    /// half period; infinity sentinel for the homoclinic
    pub half_period: f64,
    pub max_energy_dev: f64,
    pub pde_residual: f64,
    pub checks_passed: usize,
    pub checks_total: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub c: f64,
    pub rows: Vec<SummaryRow>,
    pub all_ok: bool,
}

/// Per-level metadata sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub b_frac: f64,
    pub b: f64,
    pub c: f64,
    pub half_period: Option<f64>,
    pub m_b: f64,
    pub m_b_lower_bound: f64,
    pub depart_y: f64,
    pub arrive_y: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub provenance: String,
}

#[derive(Serialize)]
struct CheckpointMeta {
    iteration: usize,
    phi: f64,
    min_potential_deficit: f64,
    all_slices_monotone: bool,
}

fn output_dir_for(cfg: &RunConfig) -> PathBuf {
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root),
        _ => cfg.output_dir.clone(),
    }
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn level_dir(out: &Path, b_frac: f64) -> PathBuf {
    out.join(format!("b_{b_frac:.4}"))
}

/// Execute the full pipeline described by the config file. Every level gets
/// its own subdirectory with the solution bundle; a summary CSV is written at
/// the top. Fails softly per level (recorded in the summary), hard on
/// configuration or ground-state errors.
pub fn run(config_path: &Path, jobs_override: Option<usize>, resume: bool) -> Result<RunSummary> {
    let cfg = RunConfig::load(config_path)?;
    let out = output_dir_for(&cfg);
    std::fs::create_dir_all(&out)?;

    let nl = Nonlinearity::from_config(&cfg.nonlinearity)?;
    let report = nonlinearity::validate_hypotheses(&nl, cfg.dim, &nonlinearity::default_samples())?;
    io::write_json(&out.join("hypotheses.json"), &report)?;
    if !report.all_passed() {
        return Err(SolverError::InvalidNonlinearity {
            reason: "sampled hypothesis checks failed; see hypotheses.json".into(),
        });
    }

    let gs = potential::ground_state(cfg.dim, &nl, cfg.grid.r_max, cfg.grid.n_r)?;
    io::write_field_csv(&out.join("ground_state.csv"), &gs.field)?;
    io::write_json(
        &out.join("ground_state.json"),
        &serde_json::json!({
            "c": gs.c,
            "residual_l2": gs.residual_l2,
            "amplitude": gs.amplitude,
            "dim": cfg.dim,
            "p": nl.p,
            "mu": nl.mu,
        }),
    )?;

    let provenance = format!(
        "cfg-{:016x}",
        fnv64(serde_json::to_string(&cfg).unwrap_or_default().as_bytes())
    );

    let solve_one = |&b_frac: &f64| -> SummaryRow {
        match solve_level(&cfg, &out, &nl, &gs, b_frac, &provenance, resume) {
            Ok(row) => row,
            Err(e) => {
                let dir = level_dir(&out, b_frac);
                let _ = std::fs::create_dir_all(&dir);
                let _ = io::write_json(
                    &dir.join("error.json"),
                    &serde_json::json!({ "error": e.to_string(), "b_frac": b_frac }),
                );
                SummaryRow {
                    b_frac,
                    b: b_frac * gs.c,
                    m_b: f64::NAN,
                    half_period: f64::NAN,
                    max_energy_dev: f64::NAN,
                    pde_residual: f64::NAN,
                    checks_passed: 0,
                    checks_total: 0,
                    converged: false,
                }
            }
        }
    };

    let jobs = jobs_override.or(cfg.jobs).unwrap_or(1).max(1);
    let rows: Vec<SummaryRow> = if jobs > 1 && cfg.b_list.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SolverError::Config(e.to_string()))?;
        pool.install(|| cfg.b_list.par_iter().map(solve_one).collect())
    } else {
        cfg.b_list.iter().map(solve_one).collect()
    };

    write_summary_csv(&out.join("summary.csv"), &rows)?;
    let all_ok = rows
        .iter()
        .all(|r| r.converged && r.checks_total > 0 && r.checks_passed == r.checks_total);
    Ok(RunSummary {
        output_dir: out,
        c: gs.c,
        rows,
        all_ok,
    })
}

fn solve_level(
    cfg: &RunConfig,
    out: &Path,
    nl: &Nonlinearity,
    gs: &GroundState,
    b_frac: f64,
    provenance: &str,
    resume: bool,
) -> Result<SummaryRow> {
    let dir = level_dir(out, b_frac);
    std::fs::create_dir_all(&dir)?;
    let b = b_frac * gs.c;

    let budget = SamplingBudget {
        seed: cfg.seed,
        ..Default::default()
    };
    let constants = potential::estimate_constants(b, gs, nl, &budget)?;
    io::write_json(&dir.join("constants.json"), &constants)?;

    let window = if b > 0.0 {
        cfg.grid.y_window
    } else {
        cfg.grid.y_window_zero.unwrap_or(cfg.grid.y_window)
    };
    let mcfg = MinimizeConfig {
        b,
        max_iters: cfg.minimizer.max_iters,
        initial_step: cfg.minimizer.initial_step,
        tol_grad: cfg.minimizer.tol_grad,
        y_min: window.0,
        y_max: window.1,
        dy: cfg.grid.dy,
        boundary: if b > 0.0 {
            BoundaryMode::ClampedMinus
        } else {
            BoundaryMode::FreeDecay
        },
        decay_target: cfg.minimizer.decay_target,
    };

    let checkpoint_traj = dir.join("checkpoint_trajectory.csv");
    let checkpoint_meta = dir.join("checkpoint.json");
    let resume_from = if resume && checkpoint_traj.exists() {
        io::read_trajectory_csv(&checkpoint_traj).ok()
    } else {
        None
    };

    let mut tick = 0usize;
    let core = minimizer::minimize(&mcfg, &gs.field, &constants, nl, resume_from, |it, v, phi| {
        tick += 1;
        if tick % 10 != 0 {
            return;
        }
        let deficit = (0..v.grid.n_y)
            .filter_map(|j| v.potential_at(j, nl).ok())
            .map(|pot| pot - b)
            .fold(f64::INFINITY, f64::min);
        let _ = io::write_trajectory_csv(&checkpoint_traj, v);
        let _ = io::write_json(
            &checkpoint_meta,
            &CheckpointMeta {
                iteration: it,
                phi,
                min_potential_deficit: deficit,
                all_slices_monotone: v.all_slices_monotone(),
            },
        );
    })?;

    let mut sol = builder::assemble(&core, b)?;
    sol.provenance = provenance.to_string();
    io::write_trajectory_csv(&dir.join("trajectory.csv"), &sol.v)?;
    let profile = trajectory::energy_profile(&sol.v, nl)?;
    io::write_energy_profile_csv(&dir.join("energy_profile.csv"), &profile)?;

    let mut verdict = builder::verify(&sol, gs.c, nl)?;
    if b == 0.0 {
        let cc =
            builder::mountain_pass_crosscheck(&sol, nl, cfg.grid.r_max, cfg.grid.crosscheck_n_r)?;
        io::write_json(&dir.join("crosscheck.json"), &cc)?;
        verdict.checks.push(Check {
            name: "mountain_pass_ratio".into(),
            passed: (0.98..=1.02).contains(&cc.ratio),
            measured: cc.ratio,
            threshold: 0.02,
            lower_bound: false,
        });
        verdict.all_passed = verdict.checks.iter().all(|c| c.passed);
    }
    io::write_json(&dir.join("verdict.json"), &verdict)?;

    let meta = SolutionMeta {
        b_frac,
        b,
        c: gs.c,
        half_period: sol.half_period,
        m_b: core.action,
        m_b_lower_bound: potential::action_lower_bound(&constants),
        depart_y: core.depart_y,
        arrive_y: core.arrive_y,
        iterations: core.iterations,
        converged: core.converged,
        grad_norm: core.grad_norm,
        provenance: provenance.to_string(),
    };
    io::write_json(&dir.join("meta.json"), &meta)?;

    let residual = verdict
        .checks
        .iter()
        .find(|c| c.name == "pde_residual_l2")
        .map(|c| c.measured)
        .unwrap_or(f64::NAN);
    let energy_dev = verdict
        .checks
        .iter()
        .find(|c| c.name == "energy_deviation_max")
        .map(|c| c.measured)
        .unwrap_or(f64::NAN);

    Ok(SummaryRow {
        b_frac,
        b,
        m_b: core.action,
        half_period: sol.half_period.unwrap_or(f64::INFINITY),
        max_energy_dev: energy_dev,
        pde_residual: residual,
        checks_passed: verdict.passed_count(),
        checks_total: verdict.checks.len(),
        converged: core.converged,
    })
}

const SUMMARY_HEADER: &str =
    "b_frac,b,m_b,half_period,max_energy_dev,pde_residual,checks_passed,checks_total,converged";

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
            r.b_frac,
            r.b,
            r.m_b,
            r.half_period,
            r.max_energy_dev,
            r.pde_residual,
            r.checks_passed,
            r.checks_total,
            r.converged
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(SolverError::Format {
                path: path.display().to_string(),
                reason: format!("line {}: expected 9 columns", i + 1),
            });
        }
        let f = |k: usize| -> Result<f64> {
            cols[k].parse::<f64>().map_err(|e| SolverError::Format {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            })
        };
        rows.push(SummaryRow {
            b_frac: f(0)?,
            b: f(1)?,
            m_b: f(2)?,
            half_period: f(3)?,
            max_energy_dev: f(4)?,
            pde_residual: f(5)?,
            checks_passed: cols[6].parse().unwrap_or(0),
            checks_total: cols[7].parse().unwrap_or(0),
            converged: cols[8] == "true",
        });
    }
    Ok(rows)
}

/// Emit the energy-diagram CSV (b, -b, m_b, half_period), rows sorted by b.
pub fn energy_diagram(summary_path: &Path) -> Result<String> {
    let mut rows = read_summary_csv(summary_path)?;
    rows.sort_by(|a, bb| a.b.partial_cmp(&bb.b).unwrap());
    let mut out = String::from("b,energy,m_b,half_period\n");
    for r in &rows {
        let _ = writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e}",
            r.b, -r.b, r.m_b, r.half_period
        );
    }
    Ok(out)
}

/// Re-run the verification suite against a solution bundle on disk.
pub fn verify_solution(dir: &Path) -> Result<VerdictReport> {
    let meta: SolutionMeta = io::read_json(&dir.join("meta.json"))?;
    let v = io::read_trajectory_csv(&dir.join("trajectory.csv"))?;
    let constants: PotentialConstants = io::read_json(&dir.join("constants.json"))?;
    let nl = if constants.c > 0.0 {
        // the nonlinearity parameters travel in the constants bundle via theta
        // theta = 1 - N(p-1)/(2(p+1)); invert for p
        let dim = v.grid.radial.dim as f64;
        let ratio = (1.0 - constants.theta) * 2.0 / dim;
        let p = (2.0 * ratio / (2.0 - ratio) + 1.0).max(1.01);
        Nonlinearity::pure_power(p)?
    } else {
        Nonlinearity::pure_power(3.0)?
    };
    let sol = BrakeOrbitSolution {
        v,
        half_period: meta.half_period,
        b: meta.b,
        e_target: -meta.b,
        provenance: meta.provenance.clone(),
    };
    builder::verify(&sol, meta.c, &nl)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trip_and_diagram_sorted() {
        let rows = vec![
            SummaryRow {
                b_frac: 0.5,
                b: 0.667,
                m_b: 1.2,
                half_period: 2.5,
                max_energy_dev: 1e-4,
                pde_residual: 2e-4,
                checks_passed: 10,
                checks_total: 10,
                converged: true,
            },
            SummaryRow {
                b_frac: 0.0,
                b: 0.0,
                m_b: 1.4,
                half_period: f64::INFINITY,
                max_energy_dev: 1e-4,
                pde_residual: 1e-4,
                checks_passed: 8,
                checks_total: 8,
                converged: true,
            },
        ];
        let dir = std::env::temp_dir().join("layered_summary_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("summary.csv");
        write_summary_csv(&path, &rows).unwrap();
        let back = read_summary_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[1].half_period.is_infinite());

        let diagram = energy_diagram(&path).unwrap();
        let lines: Vec<&str> = diagram.lines().collect();
        assert_eq!(lines.len(), 3);
        // sorted by b ascending; -b column decreasing
        let b0: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        let b1: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
        assert!(b0 < b1);
    }
}
