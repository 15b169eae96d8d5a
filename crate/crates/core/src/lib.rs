//! Energy-constrained variational solver for positive layered solutions of
//! the semilinear elliptic equation -Δu + u = f(u) on R^{N+1}.
//!
//! Viewing the last coordinate y as time, a layered solution is a trajectory
//! y ↦ v(·,y) in the radial Sobolev space over R^N with conserved energy
//! E_v(y) = 1/2 ||∂_y v||_2^2 - V(v(·,y)), where V is the Euler functional of
//! the equation on R^N. For each energy parameter b in [0, c) — c the
//! mountain-pass level of V — the solver minimizes a renormalized action over
//! monotone radial trajectories pinned between the two components of the
//! sublevel set {V <= b}, and assembles the minimizer into a brake-orbit
//! solution periodic in y (b > 0) or a homoclinic mountain-pass solution
//! (b = 0), verifying the qualitative properties of the construction
//! numerically.

pub mod builder;
pub mod config;
pub mod error;
pub mod grid;
pub mod io;
pub mod minimizer;
pub mod nonlinearity;
pub mod pipeline;
pub mod potential;
pub mod trajectory;

pub use error::{Result, SolverError};
