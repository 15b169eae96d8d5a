//! Solve one brake orbit for the cubic nonlinearity in N = 1 and print the
//! main diagnostics. Usage: brake_orbit [b_fraction] [dy] [r_max] [n_r]

use layered_core::minimizer::{minimize, BoundaryMode, MinimizeConfig};
use layered_core::nonlinearity::Nonlinearity;
use layered_core::potential::{estimate_constants, ground_state, SamplingBudget};
use layered_core::{builder, trajectory};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let b_frac: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let dy: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.04);
    let r_max: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(12.0);
    let n_r: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(300);

    let nl = Nonlinearity::pure_power(3.0).unwrap();
    let t0 = Instant::now();
    let gs = ground_state(1, &nl, r_max, n_r).unwrap();
    println!(
        "ground state: c = {:.8} residual = {:.3e} ({:.2?})",
        gs.c,
        gs.residual_l2,
        t0.elapsed()
    );

    let b = b_frac * gs.c;
    let t1 = Instant::now();
    let k = estimate_constants(b, &gs, &nl, &SamplingBudget::default()).unwrap();
    println!(
        "constants: delta0 = {:.4} nu+ = {:.4} beta+ - b = {:.3e} ({:.2?})",
        k.delta0,
        k.nu_plus,
        k.beta_plus - b,
        t1.elapsed()
    );

    let mut cfg = MinimizeConfig::new(b);
    cfg.dy = dy;
    if b == 0.0 {
        cfg.y_min = -14.0;
        cfg.y_max = 4.0;
        cfg.boundary = BoundaryMode::FreeDecay;
    } else {
        cfg.y_min = 0.0;
        cfg.y_max = 8.0;
    }

    let t2 = Instant::now();
    let mut last_print = Instant::now();
    let core = minimize(&cfg, &gs.field, &k, &nl, None, |it, _, phi| {
        if last_print.elapsed().as_secs() >= 5 {
            println!("  iter {it}: phi = {phi:.8}");
            last_print = Instant::now();
        }
    })
    .unwrap();
    println!(
        "minimize: iters = {} converged = {} grad = {:.3e} m_b = {:.8} T = {:.4} ({:.2?})",
        core.iterations,
        core.converged,
        core.grad_norm,
        core.action,
        core.arrive_y - core.depart_y,
        t2.elapsed()
    );

    let sol = builder::assemble(&core, b).unwrap();
    let verdict = builder::verify(&sol, gs.c, &nl).unwrap();
    for c in &verdict.checks {
        println!(
            "  [{}] {} = {:.3e} (thr {:.3e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    if b == 0.0 {
        let cc = builder::mountain_pass_crosscheck(&sol, &nl, 20.0, 2000).unwrap();
        println!(
            "crosscheck: m0 = {:.6} c2 = {:.6} ratio = {:.4}",
            cc.m0, cc.c_next, cc.ratio
        );
    }
    let prof = trajectory::energy_profile(&sol.v, &nl).unwrap();
    println!(
        "energy deviation (interior max) = {:.3e}",
        prof.max_energy_deviation(b)
    );
}
